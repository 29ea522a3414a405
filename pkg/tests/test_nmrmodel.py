import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmrlearn import nmrmodel as nm
from nmrlearn import spinsim
from nmrlearn.errors import DataError, InvalidSpecError, SingularityError
from nmrlearn.nmrmodel import SpinSite, SpinSystem

from oracles import GAMMA_H, dipolar_khz, kron_pauli, secular_dense

# Gamma for two protons 2.0 A apart, from the constants-in script in oracles.py
GAMMA_2A_KHZ = 7.50751


def site(i, pos, shift=0.0):
    return SpinSite.of(i, pos, shift)


def pair_system(r_vec, alpha=1.0, field=23.5, J=None):
    sites = (site(0, (0, 0, 0)), site(1, r_vec))
    return SpinSystem(sites, field, (0.0, 0.0, 1.0), alpha, J or {})


# dipolar coupling -----------------------------------------------------------
def test_gamma_regression_2A():
    g = nm.dipolar_coupling(site(0, (0, 0, 0)), site(1, (0, 0, 2.0)))
    assert g == pytest.approx(GAMMA_2A_KHZ, rel=1e-5)
    assert g == pytest.approx(dipolar_khz(2.0), rel=1e-6)


def test_gamma_r_cubed():
    a = site(0, (0, 0, 0))
    g1 = nm.dipolar_coupling(a, site(1, (1.3, 0.4, 0.2)))
    g2 = nm.dipolar_coupling(a, site(1, (2.6, 0.8, 0.4)))
    assert g1 / g2 == pytest.approx(8.0, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.8, 20.0))
def test_gamma_r3_constant(r):
    g = nm.dipolar_coupling(site(0, (0, 0, 0)), site(1, (r, 0, 0)))
    assert g * r**3 == pytest.approx(GAMMA_2A_KHZ * 8.0, rel=1e-5)


def test_bonded_protons_tens_of_khz():
    # geminal CH2 protons sit about 1.75-1.8 A apart
    g = nm.dipolar_coupling(site(0, (0, 0, 0)), site(1, (1.78, 0, 0)))
    assert 10.0 < g < 60.0


def test_coincident_sites():
    with pytest.raises(SingularityError):
        nm.dipolar_coupling(site(0, (1, 1, 1)), site(1, (1, 1, 1)))


def test_larmor_anchor_1ghz():
    f = nm.larmor_frequency_hz(nm.GAMMA["H1"], 23.5)
    assert abs(f / 1e9 - 1.0) < 0.07
    assert f == pytest.approx(GAMMA_H * 23.5 / (2 * math.pi), rel=1e-8)


# angle factor ------------------------------------------------------------------
@pytest.mark.parametrize(
    "vec, expected",
    [((0, 0, 1.5), 2.0), ((1.5, 0, 0), -1.0), ((math.sqrt(2), 0, 1.0), 0.0)],
)
def test_angle_factor(vec, expected):
    assert nm.angle_factor(site(0, (0, 0, 0)), site(1, vec)) == pytest.approx(expected, abs=1e-12)


# secular Hamiltonian -------------------------------------------------------------
def test_secular_pair_on_axis():
    r, alpha = 2.0, 3.0
    model = nm.build_secular_hamiltonian(pair_system((0, 0, r), alpha))
    G = dipolar_khz(r) / alpha
    S = lambda a, i: 0.5 * kron_pauli([(i, a)], 2)
    ss = sum(S(a, 0) @ S(a, 1) for a in "XYZ")
    expected = 2 * np.pi * G * 2 * (ss - 3 * S("Z", 0) @ S("Z", 1))
    assert np.allclose(model.matrix(), expected, atol=1e-9)


def test_secular_matches_hand_expansion():
    rng = np.random.default_rng(5)
    sites = tuple(site(i, rng.uniform(-3, 3, 3), rng.uniform(-5, 5)) for i in range(4))
    J = {(0, 2): 0.7}
    system = SpinSystem(sites, 23.5, (0.0, 0.0, 1.0), 2.0, J)
    model = nm.build_secular_hamiltonian(system)
    offs = nm.rotating_frame_offsets(system, range(4))
    dip = {}
    for i in range(4):
        for j in range(i + 1, 4):
            r = np.subtract(sites[j].position, sites[i].position)
            c = r[2] / np.linalg.norm(r)
            dip[(i, j)] = dipolar_khz(np.linalg.norm(r)) * (3 * c * c - 1) / 2.0
    assert np.allclose(model.matrix(), secular_dense(offs, dip, J), atol=1e-8)


def test_alpha_infinity_limit():
    rng = np.random.default_rng(1)
    sites = tuple(site(i, rng.uniform(-3, 3, 3), rng.uniform(-5, 5)) for i in range(3))
    system = SpinSystem(sites, 23.5, (0, 0, 1.0), 1e15, {(0, 1): 0.4})
    model = nm.build_secular_hamiltonian(system)
    offs = nm.rotating_frame_offsets(system, range(3))
    assert np.allclose(model.matrix(), secular_dense(offs, {}, {(0, 1): 0.4}), atol=1e-9)


def test_secular_commutes_with_total_z():
    rng = np.random.default_rng(9)
    sites = tuple(site(i, rng.uniform(-4, 4, 3), rng.uniform(-5, 5)) for i in range(5))
    H = nm.build_secular_hamiltonian(SpinSystem(sites)).matrix()
    M = sum(kron_pauli([(i, "Z")], 5) for i in range(5))
    assert np.linalg.norm(H @ M - M @ H) <= 1e-10


def test_rotating_frame_offsets_mean_zero():
    system = SpinSystem(tuple(site(i, (i * 2.0, 0, 0), s) for i, s in enumerate([1.0, 2.0, 6.0])))
    offs = nm.rotating_frame_offsets(system, range(3))
    assert abs(offs.sum()) < 1e-9
    # 1 ppm at 23.5 T is about 1 kHz
    assert offs[2] - offs[0] == pytest.approx(5.0 * nm.larmor_frequency_hz(nm.GAMMA["H1"], 23.5) * 1e-9, rel=1e-9)


def test_terms_hermitian_traceless():
    rng = np.random.default_rng(2)
    sites = tuple(site(i, rng.uniform(-3, 3, 3)) for i in range(3))
    model = nm.build_secular_hamiltonian(SpinSystem(sites))
    for n in range(model.n_params):
        V = model.term_matrix(n)
        assert spinsim.is_hermitian(V)
        assert abs(np.trace(V)) < 1e-12


def test_unsplit_labels():
    model = nm.build_secular_hamiltonian(pair_system((1, 1, 1), J={(0, 1): 0.3}), split=False)
    assert model.labels == ["shift[0]", "shift[1]", "dipolar[0,1]", "J[0,1]"]
    split = nm.build_secular_hamiltonian(pair_system((1, 1, 1), J={(0, 1): 0.3}))
    assert np.allclose(model.matrix(), split.matrix(), atol=1e-10)


def test_subset_labels_use_global_ids():
    sites = tuple(site(i, (2.0 * i, 0.3 * i, 0)) for i in range(4))
    model = nm.build_secular_hamiltonian(SpinSystem(sites), subset=[1, 3])
    assert model.labels == ["shift[1]", "shift[3]", "ff[1,3]", "zz[1,3]"]


def test_unknown_site():
    with pytest.raises(InvalidSpecError):
        nm.build_secular_hamiltonian(pair_system((0, 0, 2.0)), subset=[0, 5])


def test_alpha_below_one_rejected():
    with pytest.raises(InvalidSpecError):
        pair_system((0, 0, 2.0), alpha=0.5)


# full Hamiltonian ---------------------------------------------------------------
def test_full_zero_field_traceless_dipolar():
    model = nm.build_full_hamiltonian(pair_system((0.4, 1.1, 1.5), field=0.0))
    assert model.labels == ["dipolar[0,1]"]
    assert abs(np.trace(model.matrix())) < 1e-9


def test_full_has_nonsecular_terms():
    system = pair_system((2.0, 0, 0))
    full = nm.build_full_hamiltonian(system, rotating_frame=True).matrix()
    sec = nm.build_secular_hamiltonian(system).matrix()
    assert np.linalg.norm(full - sec) > 1.0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_full_projects_to_secular(seed):
    rng = np.random.default_rng(seed)
    sites = tuple(site(i, rng.uniform(-3, 3, 3) + 3.0 * i, rng.uniform(-5, 5)) for i in range(3))
    system = SpinSystem(sites)
    full = nm.build_full_hamiltonian(system, rotating_frame=True).matrix()
    sec = nm.build_secular_hamiltonian(system).matrix()
    assert np.max(np.abs(nm.secular_part(full) - sec)) < 1e-9


def test_full_lab_frame_zeeman_is_larmor():
    system = SpinSystem((site(0, (0, 0, 0)),), 23.5)
    model = nm.build_full_hamiltonian(system)
    assert model.params[0] == pytest.approx(nm.larmor_frequency_hz(nm.GAMMA["H1"], 23.5) / 1e3, rel=1e-12)


# clusters ----------------------------------------------------------------------------
def random_graph(rng, n, p=0.4):
    edges = {(i, j): float(rng.uniform(0, 20)) for i in range(n) for j in range(i + 1, n) if rng.random() < p}
    return nm.CouplingGraph(n, edges)


def test_threshold_zero_single_cluster():
    rng = np.random.default_rng(0)
    system = SpinSystem(tuple(site(i, rng.uniform(-5, 5, 3)) for i in range(8)))
    g = nm.coupling_graph(system, "bare")
    assert [c.size for c in nm.extract_clusters(g, 0.0)] == [8]


def test_threshold_above_max_singletons():
    g = random_graph(np.random.default_rng(1), 7, 1.0)
    clusters = nm.extract_clusters(g, 1e6)
    assert [c.member_ids for c in clusters] == [(i,) for i in range(7)]


def test_clusters_reattach_weak_internal_edges():
    g = nm.CouplingGraph(3, {(0, 1): 12.0, (1, 2): 11.0, (0, 2): 1.0})
    (c,) = nm.extract_clusters(g, 10.0)
    assert sorted(e[:2] for e in c.internal_edges) == [(0, 1), (0, 2), (1, 2)]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 14), st.floats(0, 20), st.floats(0, 20))
def test_partition_and_refinement(seed, n, v1, v2):
    g = random_graph(np.random.default_rng(seed), n)
    lo, hi = sorted((v1, v2))
    coarse, fine = nm.extract_clusters(g, lo), nm.extract_clusters(g, hi)
    for part in (coarse, fine):
        members = sorted(m for c in part for m in c.member_ids)
        assert members == list(range(n))
    assert nm.is_refinement(fine, coarse)
    assert [c.member_ids[0] for c in fine] == sorted(c.member_ids[0] for c in fine)


def test_histogram_uniform_complete_graph():
    n, w = 6, 3.5
    g = nm.CouplingGraph(n, {(i, j): w for i in range(n) for j in range(i + 1, n)})
    c = nm.Cluster((0, 1, 2), (), ())
    inside, outside = nm.coupling_histogram(g, c)
    assert np.all(inside == w) and np.all(outside == w)
    assert inside.size == 3 and outside.size == 9


def test_histogram_singleton_and_conservation():
    g = random_graph(np.random.default_rng(3), 9, 0.6)
    single = nm.Cluster((4,), (), ())
    inside, _ = nm.coupling_histogram(g, single)
    assert inside.size == 0
    total = 0
    for c in nm.extract_clusters(g, 8.0):
        inside, outside = nm.coupling_histogram(g, c)
        total += inside.size + 0.5 * outside.size
    assert total == len(g.edges)


def test_orientation_vs_bare_weights():
    system = pair_system((2.0, 0, 0))
    bare = nm.coupling_graph(system, "bare").edges[(0, 1)]
    ori = nm.coupling_graph(system, "orientation").edges[(0, 1)]
    assert ori == pytest.approx(bare)  # |3 cos^2 - 1| = 1 perpendicular


def test_cluster_report_shape():
    rng = np.random.default_rng(4)
    system = SpinSystem(tuple(site(i, rng.uniform(-4, 4, 3)) for i in range(10)))
    rep = nm.cluster_report(nm.coupling_graph(system), [5.0, 20.0], bins=8)
    assert rep["thresholds_khz"] == [5.0, 20.0]
    lc = rep["results"][0]["largest_cluster"]
    assert len(lc["bin_edges_khz"]) == 9 and len(lc["internal_counts"]) == 8


# file formats --------------------------------------------------------------------------
def test_geometry_round_trip():
    sites = [site(0, (0.0, 1.0, 2.0), 1.5), SpinSite.of(1, (3.0, -1.0, 0.5), -2.0, "C13")]
    back = nm.read_geometry(nm.write_geometry(sites, "test"))
    assert [(s.id, s.position, s.chemical_shift, s.species) for s in back] == [
        (s.id, s.position, s.chemical_shift, s.species) for s in sites
    ]


def test_geometry_bad_header():
    with pytest.raises(DataError):
        nm.read_geometry("a\tb\n1\t2\n")


def test_bundled_six_spin():
    sites = nm.bundled_six_spin()
    assert [s.id for s in sites] == list(range(6))
    assert all(s.species == "H1" for s in sites)


PDB = """\
MODEL        1
ATOM      1  N   MET A   1      27.340  24.430   2.614  1.00  0.00           N
ATOM      2  H   MET A   1      26.266  25.413   2.842  1.00  0.00           H
ATOM      3  HA  MET A   1      26.913  26.639  -3.163  1.00  0.00           H
ENDMDL
MODEL        2
ATOM      1  H   MET A   1       0.000   0.000   0.000  1.00  0.00           H
ENDMDL
"""


def test_pdb_to_sites():
    sites = nm.pdb_to_sites(PDB)
    assert len(sites) == 2
    assert sites[0].position == (26.266, 25.413, 2.842)
    assert len(nm.pdb_to_sites(PDB, model=2)) == 1
    assert nm.pdb_to_sites(PDB, ("N",))[0].species == "N15"


def test_pdb_without_atoms():
    with pytest.raises(DataError):
        nm.pdb_to_sites("HEADER nothing\n")


def test_system_from_config():
    sys_ = nm.system_from_config([site(0, (0, 0, 0)), site(1, (0, 0, 2))], {"alpha": 5, "j_couplings": [[0, 1, 0.2]]})
    assert sys_.suppression_alpha == 5 and sys_.j_couplings == {(0, 1): 0.2}
    with pytest.raises(InvalidSpecError):
        nm.system_from_config([site(0, (0, 0, 0))], {"alpha_x": 5})
