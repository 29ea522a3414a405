"""
Acceptance criteria 1-12. Each test carries a ``criterion`` marker; the
terminal summary prints one PASS/FAIL/SKIP line per criterion with the
measured quantity.

Criteria 5 and the real-geometry half of 4 need external coordinates:

``NMRLEARN_UBIQUITIN_PDB``
    path to a ubiquitin PDB file (criterion 5)
``NMRLEARN_SIX_SPIN_GEOMETRY``
    geometry TSV of the measured six-proton cluster (criterion 4)
"""

import json
import math
import os
import time

import numpy as np
import pytest

from nmrlearn import cli, spinsim
from nmrlearn import learnability as lb
from nmrlearn import nmrmodel as nm
from nmrlearn import resources as rs
from nmrlearn.demo import demo_problem
from nmrlearn.learner import (
    FitOptions,
    HamiltonianModel,
    QuadratureRule,
    SpectralEngine,
    Term,
    correlator_experiments,
    cost,
    covariance,
    fit,
    gradient,
    hessian_full,
    hessian_gauss_newton,
    synthesize_signal,
)
from nmrlearn.synthetic import synthetic_ensemble, synthetic_system

from oracles import ergodic_slope_binomial, fd_gradient, fd_hessian, kron_pauli, random_density

ALPHA_GRID = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 1000.0)


def detail(record_property, text):
    record_property("detail", text)


@pytest.fixture(scope="module")
def ensemble():
    # shared by criteria 6 and 7
    return synthetic_ensemble(range(5, 11), 20, seed=1)


def four_spin_instance(seed, alpha=1.0):
    rng = np.random.default_rng(seed)
    truth = nm.build_secular_hamiltonian(synthetic_system(4, rng, alpha=alpha))
    exps = correlator_experiments(
        4, np.linspace(0.2, 1.0, 5), ("Z", "X"), pairs=[(0, 1), (1, 2), (2, 3), (3, 3)], sigma=0.05
    )
    signals = synthesize_signal(truth, exps, noise=(0.05, seed))
    moved = truth.with_params(truth.params * (1 + 0.05 * rng.standard_normal(truth.n_params)))
    return truth, moved, exps, signals


# 1 -------------------------------------------------------------------------------
@pytest.mark.criterion(1, "gradient vs finite differences, 20 random 4-spin models")
def test_gradient_oracle(record_property):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        _, model, exps, sig = four_spin_instance(seed)
        g = gradient(model, exps, sig, QuadratureRule("gauss-legendre", 256))
        fd = fd_gradient(lambda p: cost(model.with_params(p), exps, sig), model.params, h=1e-6)
        worst = max(worst, float(np.max(np.abs(g - fd)) / np.max(np.abs(fd))))
    secs = time.perf_counter() - t0
    detail(record_property, f"max rel err {worst:.2e} (< 1e-5), {secs:.1f} s (< 30 s)")
    assert worst < 1e-5 and secs < 30


# 2 -------------------------------------------------------------------------------
def _three_spin_two_free(seed):
    rng = np.random.default_rng(seed)
    t = lambda label, ops: Term.from_products(label, ops)
    terms = (
        t("z[0]", [(0.5, [(0, "Z")])]),
        t("z[1]", [(0.5, [(1, "Z")])]),
        t("z[2]", [(0.5, [(2, "Z")])]),
        t("ff[0,1]", [(0.25, [(0, "X"), (1, "X")]), (0.25, [(0, "Y"), (1, "Y")])]),
        t("zz[1,2]", [(0.25, [(1, "Z"), (2, "Z")])]),
    )
    model = HamiltonianModel(3, terms, rng.uniform(-2, 2, 5))
    free = np.zeros(5, bool)
    free[rng.choice(5, 2, replace=False)] = True
    return model.with_mask(free), rng


@pytest.mark.criterion(2, "full vs Gauss-Newton Hessian; full Hessian vs FD")
def test_hessian_consistency(record_property):
    t0 = time.perf_counter()
    conv = 0.0
    for seed in range(5):
        truth, _, exps, _ = four_spin_instance(seed, alpha=5.0)
        clean = synthesize_signal(truth, exps)
        Hf, Hg = hessian_full(truth, exps, clean), hessian_gauss_newton(truth, exps)
        conv = max(conv, float(np.linalg.norm(Hf - Hg) / np.linalg.norm(Hg)))
    fd_err = 0.0
    for seed in range(5):
        model, rng = _three_spin_two_free(seed)
        exps = correlator_experiments(3, [0.3, 0.7, 1.2], ("Z", "X"), sigma=0.1)
        sig = synthesize_signal(model.with_params(model.params + rng.normal(0, 0.3, 5)), exps, noise=(0.1, seed))
        idx = model.free_indices
        H = hessian_full(model, exps, sig)[np.ix_(idx, idx)]

        def c(x):
            p = model.params.copy()
            p[idx] = x
            return cost(model.with_params(p), exps, sig)

        fd = fd_hessian(c, model.params[idx], h=1e-4)
        fd_err = max(fd_err, float(np.max(np.abs(H - fd)) / np.max(np.abs(fd))))
    secs = time.perf_counter() - t0
    detail(record_property, f"converged rel diff {conv:.1e} (< 1e-8), FD rel err {fd_err:.1e} (< 1e-4), {secs:.1f} s")
    assert conv < 1e-8 and fd_err < 1e-4 and secs < 60


# 3 -------------------------------------------------------------------------------
@pytest.mark.criterion(3, "left-rule quadrature error ratio L=256 vs 512")
def test_quadrature_convergence(record_property):
    ratios = []
    for seed in range(20):
        truth, _, exps, _ = four_spin_instance(seed)
        ex = exps[:1]
        ref = SpectralEngine(truth, ex).jacobian(QuadratureRule("exact")).jac[0]
        err = [
            np.max(np.abs(SpectralEngine(truth, ex).jacobian(QuadratureRule("uniform-left", L)).jac[0] - ref))
            for L in (256, 512)
        ]
        ratios.append(err[0] / err[1])
    mean = float(np.mean(ratios))
    detail(record_property, f"mean ratio {mean:.3f} over 20 instances (in [1.7, 2.3])")
    assert 1.7 <= mean <= 2.3


# 4 -------------------------------------------------------------------------------
def _six_spin_fit(sites=None):
    prob = demo_problem(sites)
    sig = synthesize_signal(prob.truth, prob.experiments, noise=(1e-3, 0))
    t0 = time.perf_counter()
    rep = fit(prob.start, prob.experiments, sig, FitOptions(max_iter=50))
    return prob, rep, time.perf_counter() - t0


@pytest.mark.criterion(4, "six-spin learning demo, 12 free couplings from zero")
def test_six_spin_demo(record_property):
    prob, rep, secs = _six_spin_fit()
    mae = prob.mean_abs_error(rep.params_hat)
    scale = prob.small_coupling_scale()
    text = f"bundled geometry: MAE {mae:.2e} kHz = {mae / scale:.2%} of {scale:.3f} kHz in {rep.iterations} it, {secs:.1f} s"
    ok = mae <= 0.05 * scale and rep.iterations <= 50 and secs < 600
    path = os.environ.get("NMRLEARN_SIX_SPIN_GEOMETRY")
    if path:
        prob2, rep2, secs2 = _six_spin_fit(nm.read_geometry(path))
        mae2 = prob2.mean_abs_error(rep2.params_hat)
        text += f"; supplied geometry: MAE {mae2:.4f} kHz in {rep2.iterations} it"
        ok = ok and mae2 <= 0.04 and rep2.iterations <= 50
    else:
        text += "; measured geometry not supplied"
    detail(record_property, text)
    assert ok


# 5 -------------------------------------------------------------------------------
@pytest.mark.criterion(5, "ubiquitin cluster sizes at 10/12/14 kHz")
def test_ubiquitin_clusters(record_property):
    path = os.environ.get("NMRLEARN_UBIQUITIN_PDB")
    if not path:
        pytest.skip("NMRLEARN_UBIQUITIN_PDB not set; ubiquitin coordinates are external data")
    with open(path, encoding="utf-8", errors="replace") as fh:
        sites = nm.pdb_to_sites(fh.read())
    graph = nm.coupling_graph(nm.SpinSystem(tuple(sites)))
    largest = [max(c.size for c in nm.extract_clusters(graph, v)) for v in (10.0, 12.0, 14.0)]
    detail(record_property, f"largest clusters {largest} vs [466, 238, 60]")
    assert all(abs(a - b) <= 2 for a, b in zip(largest, (466, 238, 60)))


# 6 -------------------------------------------------------------------------------
@pytest.mark.criterion(6, "multifractal dimension drop over the alpha grid")
def test_multifractal_transition(record_property, ensemble):
    t0 = time.perf_counter()
    D1 = [lb.multifractal_dimension(ensemble, a)[0].D1 for a in ALPHA_GRID]
    secs = time.perf_counter() - t0
    worst_rise = max(b - a for a, b in zip(D1, D1[1:]))
    detail(
        record_property,
        f"{len(ensemble)} clusters, D1 = " + ", ".join(f"{d:.3f}" for d in D1) + f"; max rise {worst_rise:.3f}, {secs:.0f} s",
    )
    assert len(ensemble) >= 60
    assert D1[0] >= 0.8 and D1[-1] <= 0.3 and worst_rise <= 0.05 and secs < 1200


# 7 -------------------------------------------------------------------------------
@pytest.mark.criterion(7, "Hessian participation and lambda_max across alpha")
def test_hessian_transition(record_property, ensemble):
    t0 = time.perf_counter()
    n8 = [m for m in ensemble if m.n == 8]
    small = [m for m in ensemble if 5 <= m.n <= 7]
    res8 = lb.learnability_scan(n8, [1.0, 100.0])
    res_small = lb.learnability_scan(small, [1.0])
    secs = time.perf_counter() - t0
    part = {a: lb.geometric_mean([r.top_participation for r in res8.records if r.alpha == a]) for a in (1.0, 100.0)}
    typ = {r["n_spins"]: r["typical_lambda_max"] for r in (res_small.typical() + res8.typical()) if r["alpha"] == 1.0}
    ns = sorted(typ)
    slope = float(np.polyfit(ns, np.log([typ[n] for n in ns]), 1)[0])
    detail(
        record_property,
        f"{len(n8)} N=8 clusters: participation {part[1.0]:.2f} (alpha 1) vs {part[100.0]:.2f} (alpha 100); "
        f"d ln(lambda_max)/dN at alpha 1 = {slope:.3f}; {secs:.0f} s",
    )
    assert part[100.0] <= 4 and part[1.0] >= 2 * part[100.0] and slope < 0 and secs < 1200


# 8 -------------------------------------------------------------------------------
@pytest.mark.criterion(8, "covariance calibration, 100 Monte Carlo fits")
def test_covariance_calibration(record_property):
    model, _ = _three_spin_two_free(11)
    truth = model.with_mask(np.ones(5, bool))
    exps = correlator_experiments(3, np.linspace(0.1, 1.5, 8), ("Z", "X"), sigma=0.02)
    sd_pred = np.sqrt(np.diag(covariance(hessian_gauss_newton(truth, exps))))
    clean = synthesize_signal(truth, exps)
    est = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        noisy = {k: v + 0.02 * rng.standard_normal(v.shape) for k, v in clean.values.items()}
        rep = fit(truth, exps, type(clean)(noisy), FitOptions(max_iter=50))
        est.append(rep.params_hat)
    sd_emp = np.std(np.array(est), axis=0, ddof=1)
    ratio = sd_emp / sd_pred
    detail(record_property, "empirical/predicted sd = " + ", ".join(f"{r:.2f}" for r in ratio) + " (each in [1/3, 3])")
    assert np.all((ratio >= 1 / 3) & (ratio <= 3))


# 9 -------------------------------------------------------------------------------
@pytest.mark.criterion(9, "ergodic entropy slope over N = 5..12")
def test_ergodic_reference(record_property):
    slope = lb.ergodic_slope(range(5, 13))
    detail(record_property, f"slope {slope:.4f} (target -0.647 +/- 0.01)")
    assert slope == pytest.approx(ergodic_slope_binomial(range(5, 13)), rel=1e-12)
    assert abs(slope - (-0.647)) <= 0.01


# 10 ------------------------------------------------------------------------------
def _sweep_exponent(fn):
    Ts = np.geomspace(10, 1000, 12)
    return float(np.polyfit(np.log(Ts), np.log([fn(T) for T in Ts]), 1)[0])


@pytest.mark.criterion(10, "resource formula examples and scaling exponents")
def test_resource_formulas(record_property):
    b1 = rs.ExperimentBudget(1.0, 0.5, times=(1.0,))
    checks = {
        "J unit": rs.hoeffding_samples_J(1.0, 2 / math.e, 1.0, 1.0) == 2,
        "J typical": rs.hoeffding_samples_J(0.01, 0.05) == math.ceil(2 * math.log(40) / 1e-4),
        "J t^2": rs.hoeffding_bound_J(0.1, 0.1, 1, 2) == pytest.approx(4 * rs.hoeffding_bound_J(0.1, 0.1, 1, 1)),
        "K unit": rs.hoeffding_samples_K(1.0, 2 / math.e, 1.0, 1.0) == 1,
        "K t^4": rs.hoeffding_bound_K(0.1, 0.1, 1, 2) == pytest.approx(16 * rs.hoeffding_bound_K(0.1, 0.1, 1, 1)),
        "K/J": rs.hoeffding_bound_K(0.1, 0.1, 1, 3) / rs.hoeffding_bound_J(0.1, 0.1, 1, 3) == pytest.approx(4.5),
        "NISQ one time": rs.nisq_query_total(rs.ExperimentBudget(1.0, 0.5, times=(3.0,))) == pytest.approx(108.0),
        "lambda0": rs.ft_lambdas(rs.ExperimentBudget(1.0, 0.5, times=(2.0,))) == (2.0, 0.0),
        "lambda1 zero": rs.ft_lambdas(b1, [rs.FourierComponent(0.0, 1.0)])[1] == 0.0,
        "lambda1 3x": rs.ft_lambdas(b1, [rs.FourierComponent(1.0, w) for w in (1, 2, 3)])[1] == pytest.approx(3.0),
        "FT unit": rs.ft_query_total(rs.ExperimentBudget(1.0, 1 / math.e, times=(1.0,)), (1.0, 0.0)) == pytest.approx(1.0),
        "FT eps/2": rs.ft_query_total(rs.ExperimentBudget(0.5, 0.5, times=(1.0,)), (1.0, 0.0))
        == pytest.approx(2 * rs.ft_query_total(b1, (1.0, 0.0))),
        "Trotter p->0": rs.trotter_steps(2.0, 0.1, "chain", n=8, p=1e-14) == pytest.approx(2.0),
        "Trotter 2^p": rs.trotter_steps(2.0, 0.1, "chain", n=16) / rs.trotter_steps(2.0, 0.1, "chain", n=8)
        == pytest.approx(2**0.1),
        "Trotter partial": rs.trotter_steps(2.0, 0.1, "clustered-partial", lambda_ind=1, lambda_int=2)
        <= rs.trotter_steps(2.0, 0.1, "clustered", lambda_ind=1, lambda_total=5),
        "L unit": rs.discretization_budget(1, 1, 1, 1) == 1,
        "L eps/10": rs.discretization_budget(2, 3, 4, 0.1) == 10 * rs.discretization_budget(2, 3, 4, 1),
        "K trunc unit": rs.truncation_budget(1, 1, 1, 1, 1, 1) == 4,
        "K trunc W": rs.truncation_budget(1, 1, 1, 1, 4000, 1) == 4 * rs.truncation_budget(1, 1, 1, 1, 1000, 1),
    }
    base = rs.ExperimentBudget(1.0, 0.5, T=1.0)

    def ft_h(sampling):
        def f(T):
            b = base.with_T(T)
            return rs.ft_hamiltonian_queries(b, rs.ft_lambdas(b, sampling=sampling))
        return f

    exps = {
        "NISQ sparse": (_sweep_exponent(lambda T: rs.nisq_query_total(base.with_T(T), "sparse-log")), 3.0),
        "NISQ dense": (_sweep_exponent(lambda T: rs.nisq_query_total(base.with_T(T), "dense")), 5.0),
        "FT sparse": (_sweep_exponent(ft_h("sparse-log")), 2.0),
        "FT dense": (_sweep_exponent(ft_h("dense")), 3.0),
    }
    bad = [k for k, v in checks.items() if not v]
    bad += [k for k, (e, want) in exps.items() if abs(e - want) > 0.1 * want]
    detail(
        record_property,
        f"{len(checks) - len([k for k in bad if k in checks])}/{len(checks)} examples; exponents "
        + ", ".join(f"{k} {e:.2f}" for k, (e, _) in exps.items()),
    )
    assert not bad, bad


# 11 ------------------------------------------------------------------------------
@pytest.mark.criterion(11, "symmetry and invariants")
def test_symmetry_suite(record_property):
    comm = evo = sect = 0.0
    for seed in range(6):
        rng = np.random.default_rng(seed)
        n = 3 + seed % 4
        H = nm.build_secular_hamiltonian(synthetic_system(n, rng, alpha=float(rng.uniform(1, 20)))).matrix()
        M = sum(kron_pauli([(i, "Z")], n) for i in range(n))
        comm = max(comm, float(np.linalg.norm(H @ M - M @ H)))
        eig = spinsim.eigendecompose(H)
        rho = random_density(2**n, rng)
        out = spinsim.evolve_state(rho, eig, float(rng.uniform(0, 5)))
        evo = max(
            evo,
            abs(np.trace(out) - np.trace(rho)),
            abs(np.trace(out @ out) - np.trace(rho @ rho)),
            float(np.max(np.abs(np.linalg.eigvalsh(out) - np.linalg.eigvalsh(rho)))),
        )
        parts = np.sort(np.concatenate([np.linalg.eigvalsh(spinsim.sector_project(H, k)[0]) for k in range(n + 1)]))
        sect = max(sect, float(np.max(np.abs(parts - np.linalg.eigvalsh(H)))))
    detail(record_property, f"[H, sum Z] {comm:.1e}, evolution {evo:.1e}, sectors {sect:.1e}")
    assert comm <= 1e-10 and evo <= 1e-10 and sect <= 1e-9


# 12 ------------------------------------------------------------------------------
def _outputs(d):
    man = json.loads((d / "manifest.json").read_text())
    return man["manifest_id"], {name: (d / name).read_bytes() for name in man["outputs"]}


@pytest.mark.criterion(12, "bit-identical reruns across --threads")
def test_determinism(record_property, tmp_path):
    syn = tmp_path / "syn.json"
    syn.write_text(json.dumps({"times": {"n_times": 11}}))
    lrn = tmp_path / "lrn.json"
    lrn.write_text(json.dumps({"sizes": [4, 5, 6, 7], "per_size": 2, "alphas": [1.0, 50.0],
                               "hessian_sizes": [4, 5], "hessian_per_size": 2, "n_times": 6, "t_end_ms": 2.0}))
    runs = {}
    for threads in (1, 3, 1):
        base = tmp_path / f"t{threads}-{len(runs)}"
        s, f, l = base / "synth", base / "fit", base / "learn"
        assert cli.main(["synth", "--config", str(syn), "--seed", "7", "--threads", str(threads), "--out", str(s)]) == 0
        assert cli.main(["fit", "--problem", str(s / "problem.json"), "--signals", str(s / "signals.csv"),
                         "--seed", "7", "--threads", str(threads), "--out", str(f)]) == 0
        assert cli.main(["learnability", "--config", str(lrn), "--seed", "7", "--threads", str(threads), "--out", str(l)]) == 0
        runs[base.name] = [_outputs(s), _outputs(f), _outputs(l)]
    first, *rest = runs.values()
    same = all(r == first for r in rest)
    n_files = sum(len(o[1]) for o in first)
    detail(record_property, f"{n_files} output files x {len(runs)} runs (threads 1, 3, 1): {'identical' if same else 'DIFFERENT'}")
    assert same
