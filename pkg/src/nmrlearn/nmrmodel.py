"""
NMR spin Hamiltonians from molecular geometry, and coupling-graph clusters.

Units
-----
Positions in Angstrom, shifts in ppm, gyromagnetic ratios in rad s^-1 T^-1,
fields in Tesla. Every coupling and Hamiltonian parameter is in kHz
(cycles per ms); :class:`~nmrlearn.learner.model.HamiltonianModel` applies the
``2*pi`` when it materializes a matrix.

Secular Hamiltonian (quantization axis = computational Z)::

    H = sum_i nu_i S^z_i + sum_{i<j} J_ij S_i.S_j
        + sum_{i<j} D_ij (S_i.S_j - 3 S^z_i S^z_j),
    D_ij = (Gamma_ij / alpha) (3 cos^2 phi_ij - 1),
    Gamma_ij = mu0 gamma_i gamma_j hbar / (8 pi r_ij^3),

with ``S = sigma/2`` and ``nu_i`` the rotating-frame offset of site ``i``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import constants
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import spinsim
from .errors import DataError, InvalidInputError, InvalidSpecError, SingularityError
from .learner.model import HamiltonianModel, Term

#: Gyromagnetic ratios, rad s^-1 T^-1 (CODATA proton; others standard tables).
GAMMA = {
    "H1": constants.physical_constants["proton gyromag. ratio"][0],
    "C13": 67.2828e6,
    "N15": -27.116e6,
    "F19": 251.815e6,
    "P31": 108.394e6,
}

ANGSTROM = 1e-10
RAD_PER_S_TO_KHZ = 1.0 / (2.0 * math.pi * 1e3)

WEIGHT_MODES = ("orientation", "bare")


@dataclass(frozen=True)
class SpinSite:
    """One spin-1/2 nucleus."""

    id: int
    position: tuple[float, float, float]
    chemical_shift: float = 0.0
    gyromagnetic_ratio: float = GAMMA["H1"]
    species: str = "H1"

    def __post_init__(self):
        pos = tuple(float(x) for x in self.position)
        if len(pos) != 3 or not all(math.isfinite(x) for x in pos):
            raise InvalidSpecError(f"site {self.id}: position must be three finite numbers")
        object.__setattr__(self, "position", pos)
        if self.species == "H1" and self.gyromagnetic_ratio <= 0:
            raise InvalidSpecError("proton gyromagnetic ratio must be positive")

    @classmethod
    def of(cls, id: int, position, shift_ppm: float = 0.0, species: str = "H1") -> "SpinSite":
        if species not in GAMMA:
            raise InvalidSpecError(f"unknown species {species!r}; known: {sorted(GAMMA)}")
        return cls(int(id), tuple(position), float(shift_ppm), GAMMA[species], species)


@dataclass(frozen=True)
class SpinSystem:
    """Spins in a static field.

    Attributes
    ----------
    sites : tuple of SpinSite
        Ids must be ``0..N-1`` in order.
    field_B : float
        Tesla.
    field_direction : tuple of float
        Unit vector.
    suppression_alpha : float
        Static divisor (>= 1) of the dipolar term.
    j_couplings : dict
        ``(i, j) -> J`` in kHz with ``i < j``.
    """

    sites: tuple[SpinSite, ...]
    field_B: float = 23.5
    field_direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    suppression_alpha: float = 1.0
    j_couplings: dict = field(default_factory=dict)

    def __post_init__(self):
        sites = tuple(self.sites)
        if [s.id for s in sites] != list(range(len(sites))):
            raise InvalidSpecError("site ids must be unique and contiguous from 0")
        b = np.asarray(self.field_direction, dtype=float)
        if b.shape != (3,) or abs(np.linalg.norm(b) - 1.0) > 1e-12:
            raise InvalidSpecError("field_direction must be a unit 3-vector")
        if not self.suppression_alpha >= 1:
            raise InvalidSpecError("suppression_alpha must be >= 1")
        J = {}
        for (i, j), v in dict(self.j_couplings).items():
            i, j = int(i), int(j)
            if i == j or not (0 <= i < len(sites) and 0 <= j < len(sites)):
                raise InvalidSpecError(f"bad J coupling pair ({i}, {j})")
            J[(min(i, j), max(i, j))] = float(v)
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "field_direction", tuple(float(x) for x in b))
        object.__setattr__(self, "j_couplings", J)

    @property
    def n(self) -> int:
        return len(self.sites)

    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.sites], dtype=float).reshape(-1, 3)

    def with_alpha(self, alpha: float) -> "SpinSystem":
        return SpinSystem(self.sites, self.field_B, self.field_direction, alpha, self.j_couplings)

    def larmor_khz(self, i: int) -> float:
        """Shielded Larmor frequency ``gamma B (1 + delta)/(2 pi)`` in kHz."""
        s = self.sites[i]
        return s.gyromagnetic_ratio * self.field_B * (1.0 + 1e-6 * s.chemical_shift) * RAD_PER_S_TO_KHZ


def larmor_frequency_hz(gamma: float, field_tesla: float) -> float:
    return gamma * field_tesla / (2.0 * math.pi)


def _separation(site_i: SpinSite, site_j: SpinSite) -> np.ndarray:
    r = np.subtract(site_j.position, site_i.position)
    if np.linalg.norm(r) < 1e-9:
        raise SingularityError(f"sites {site_i.id} and {site_j.id} coincide")
    return r


def dipolar_coupling(site_i: SpinSite, site_j: SpinSite) -> float:
    """``Gamma_ij = mu0 gamma_i gamma_j hbar / (8 pi r**3)`` in kHz.

    >>> a = SpinSite.of(0, (0, 0, 0)); b = SpinSite.of(1, (0, 0, 2.0))
    >>> float(round(dipolar_coupling(a, b), 3))
    7.508
    """
    r = np.linalg.norm(_separation(site_i, site_j)) * ANGSTROM
    g = constants.mu_0 * site_i.gyromagnetic_ratio * site_j.gyromagnetic_ratio * constants.hbar
    return g / (8.0 * math.pi * r**3) * RAD_PER_S_TO_KHZ


def angle_factor(site_i: SpinSite, site_j: SpinSite, field_direction=(0.0, 0.0, 1.0)) -> float:
    """``3 cos^2(phi) - 1`` for the angle between ``r_ij`` and the field."""
    r = _separation(site_i, site_j)
    b = np.asarray(field_direction, dtype=float)
    c = float(r @ b) / (np.linalg.norm(r) * np.linalg.norm(b))
    return 3.0 * c * c - 1.0


def _check_subset(system: SpinSystem, subset) -> list[int]:
    subset = list(range(system.n)) if subset is None else [int(s) for s in subset]
    if len(set(subset)) != len(subset):
        raise InvalidSpecError("subset contains duplicate ids")
    for s in subset:
        if not 0 <= s < system.n:
            raise InvalidSpecError(f"unknown site id {s}")
    spinsim.check_spin_count(len(subset))
    return subset


def rotating_frame_offsets(system: SpinSystem, subset) -> np.ndarray:
    """Larmor offsets (kHz) from the per-species mean over ``subset``."""
    nu = np.array([system.larmor_khz(i) for i in subset])
    species = [system.sites[i].species for i in subset]
    out = np.empty_like(nu)
    for sp in set(species):
        sel = np.array([s == sp for s in species])
        out[sel] = nu[sel] - nu[sel].mean()
    return out


_FF = ((0.25, "XX"), (0.25, "YY"))
_ZZ = ((0.25, "ZZ"),)
_SS = ((0.25, "XX"), (0.25, "YY"), (0.25, "ZZ"))
_DIP = ((0.25, "XX"), (0.25, "YY"), (-0.5, "ZZ"))


def _pair_term(label: str, a: int, b: int, spec) -> Term:
    return Term.from_products(label, [(c, [(a, ax[0]), (b, ax[1])]) for c, ax in spec])


def secular_couplings(system: SpinSystem, i: int, j: int) -> tuple[float, float]:
    """``(D_ij, J_ij)`` in kHz for global ids ``i < j``."""
    si, sj = system.sites[i], system.sites[j]
    D = dipolar_coupling(si, sj) * angle_factor(si, sj, system.field_direction) / system.suppression_alpha
    return D, system.j_couplings.get((min(i, j), max(i, j)), 0.0)


def build_secular_hamiltonian(system: SpinSystem, subset=None, split: bool = True) -> HamiltonianModel:
    """Secular rotating-frame Hamiltonian on ``subset`` as a learnable model.

    With ``split`` (default) each homonuclear pair carries two parameters,
    ``ff[i,j]`` on ``(XX+YY)/4`` with value ``D + J`` and ``zz[i,j]`` on
    ``ZZ/4`` with value ``-2D + J``. Heteronuclear pairs carry only
    ``zz[i,j]``. Without ``split`` a homonuclear pair carries
    ``dipolar[i,j]`` on ``(XX+YY-2ZZ)/4`` and, when nonzero, ``J[i,j]`` on
    ``(XX+YY+ZZ)/4``. Shifts are ``shift[i]`` on ``Z/2``. Labels use global
    ids; model site ``k`` is ``subset[k]``.
    """
    subset = _check_subset(system, subset)
    nu = rotating_frame_offsets(system, subset)
    terms, values = [], []
    for k, i in enumerate(subset):
        terms.append(Term.from_products(f"shift[{i}]", [(0.5, [(k, "Z")])]))
        values.append(nu[k])
    for a in range(len(subset)):
        for b in range(a + 1, len(subset)):
            i, j = subset[a], subset[b]
            lo, hi = min(i, j), max(i, j)
            D, J = secular_couplings(system, lo, hi)
            homo = system.sites[i].species == system.sites[j].species
            if not homo:
                terms.append(_pair_term(f"zz[{lo},{hi}]", a, b, _ZZ))
                values.append(-2.0 * D + J)
            elif split:
                terms.append(_pair_term(f"ff[{lo},{hi}]", a, b, _FF))
                values.append(D + J)
                terms.append(_pair_term(f"zz[{lo},{hi}]", a, b, _ZZ))
                values.append(-2.0 * D + J)
            else:
                terms.append(_pair_term(f"dipolar[{lo},{hi}]", a, b, _DIP))
                values.append(D)
                if J != 0.0:
                    terms.append(_pair_term(f"J[{lo},{hi}]", a, b, _SS))
                    values.append(J)
    return HamiltonianModel(len(subset), tuple(terms), np.array(values))


def build_full_hamiltonian(system: SpinSystem, subset=None, rotating_frame: bool = False) -> HamiltonianModel:
    """Non-secular, unsuppressed Hamiltonian on ``subset``.

    Terms: ``zeeman[i]`` on ``(b.sigma_i)/2`` with value ``nu_i`` (lab frame,
    or the rotating-frame offset when ``rotating_frame``); ``dipolar[i,j]`` on
    ``2 [S_i.S_j - 3 (S_i.u)(S_j.u)]`` with value ``Gamma_ij`` and ``u`` the
    unit internuclear vector; ``J[i,j]`` on ``S_i.S_j`` when nonzero. The
    suppression factor is not applied.
    """
    subset = _check_subset(system, subset)
    b = np.asarray(system.field_direction)
    nu = rotating_frame_offsets(system, subset) if rotating_frame else [system.larmor_khz(i) for i in subset]
    axes = "XYZ"
    terms, values = [], []
    if system.field_B != 0:
        for k, i in enumerate(subset):
            prods = [(0.5 * b[q], [(k, axes[q])]) for q in range(3) if b[q] != 0]
            terms.append(Term.from_products(f"zeeman[{i}]", prods))
            values.append(nu[k])
    for a in range(len(subset)):
        for c in range(a + 1, len(subset)):
            i, j = subset[a], subset[c]
            si, sj = system.sites[i], system.sites[j]
            r = _separation(si, sj)
            u = r / np.linalg.norm(r)
            # 2[S.S - 3(S.u)(S.u)] = (1/2)[sum_q s_q s_q - 3 sum_pq u_p u_q s_p s_q]
            coef = -1.5 * np.outer(u, u)
            coef[np.diag_indices(3)] += 0.5
            prods = [
                (coef[p, q], [(a, axes[p]), (c, axes[q])])
                for p in range(3)
                for q in range(3)
                if abs(coef[p, q]) > 1e-15
            ]
            lo, hi = min(i, j), max(i, j)
            terms.append(Term.from_products(f"dipolar[{lo},{hi}]", prods))
            values.append(dipolar_coupling(si, sj))
            J = system.j_couplings.get((lo, hi), 0.0)
            if J != 0.0:
                terms.append(_pair_term(f"J[{lo},{hi}]", a, c, _SS))
                values.append(J)
    if not terms:
        raise InvalidSpecError("empty Hamiltonian: single spin in zero field")
    return HamiltonianModel(len(subset), tuple(terms), np.array(values))


def secular_part(H: np.ndarray) -> np.ndarray:
    """Keep only matrix elements between equal-magnetization basis states."""
    n = H.shape[0].bit_length() - 1
    m = spinsim.n_up_of_basis(n)
    return np.where(m[:, None] == m[None, :], H, 0.0)


# -------------------------------------------------------------------------
# Coupling graph and clusters
# -------------------------------------------------------------------------

@dataclass(frozen=True)
class CouplingGraph:
    """Undirected weighted graph; ``edges[(i, j)]`` with ``i < j``, kHz."""

    n: int
    edges: dict
    weight_mode: str = "orientation"

    def __post_init__(self):
        for (i, j), w in self.edges.items():
            if not i < j or w < 0:
                raise InvalidSpecError(f"bad edge ({i}, {j}) weight {w}")

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.edges:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
        keys = sorted(self.edges)
        ij = np.array(keys, dtype=int)
        w = np.array([self.edges[k] for k in keys])
        return ij[:, 0], ij[:, 1], w


@dataclass(frozen=True)
class Cluster:
    """Members of one connected component and their edges."""

    member_ids: tuple[int, ...]
    internal_edges: tuple[tuple[int, int, float], ...]
    boundary_edges: tuple[tuple[int, int, float], ...]
    threshold: float = 0.0

    @property
    def size(self) -> int:
        return len(self.member_ids)

    def to_dict(self) -> dict:
        return {
            "members": list(self.member_ids),
            "n_internal_edges": len(self.internal_edges),
            "n_boundary_edges": len(self.boundary_edges),
        }


def coupling_graph(
    system: SpinSystem,
    weight_mode: str = "orientation",
    min_weight: float = 0.0,
) -> CouplingGraph:
    """All pairwise couplings with weight ``>= min_weight``.

    ``orientation`` weights are ``|Gamma (3 cos^2 phi - 1)|``; ``bare`` are ``|Gamma|``.
    """
    if weight_mode not in WEIGHT_MODES:
        raise InvalidSpecError(f"weight_mode must be one of {WEIGHT_MODES}")
    pos = system.positions() * ANGSTROM
    n = system.n
    if n < 2:
        return CouplingGraph(n, {}, weight_mode)
    gam = np.array([s.gyromagnetic_ratio for s in system.sites])
    iu, ju = np.triu_indices(n, 1)
    r = pos[ju] - pos[iu]
    dist = np.linalg.norm(r, axis=1)
    if np.any(dist < 1e-9 * ANGSTROM):
        k = int(np.argmin(dist))
        raise SingularityError(f"sites {iu[k]} and {ju[k]} coincide")
    gamma = constants.mu_0 * gam[iu] * gam[ju] * constants.hbar / (8.0 * math.pi * dist**3) * RAD_PER_S_TO_KHZ
    if weight_mode == "orientation":
        c = (r @ np.asarray(system.field_direction)) / dist
        w = np.abs(gamma * (3.0 * c * c - 1.0))
    else:
        w = np.abs(gamma)
    keep = w >= min_weight
    edges = {(int(i), int(j)): float(x) for i, j, x in zip(iu[keep], ju[keep], w[keep])}
    return CouplingGraph(n, edges, weight_mode)


def extract_clusters(graph: CouplingGraph, v_min: float) -> list[Cluster]:
    """Connected components over edges with weight ``>= v_min``.

    Each cluster then carries every edge among its members (also those below
    ``v_min``) as internal edges, and its edges to the rest as boundary edges.
    Clusters are ordered by smallest member id.
    """
    if v_min < 0:
        raise InvalidSpecError("v_min must be non-negative")
    if graph.n == 0:
        return []
    i, j, w = graph.arrays()
    keep = w >= v_min
    adj = coo_matrix((np.ones(int(keep.sum())), (i[keep], j[keep])), shape=(graph.n, graph.n))
    _, labels = connected_components(adj, directed=False)
    groups: dict[int, list[int]] = {}
    for node, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(node)
    members = sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])
    which = np.empty(graph.n, dtype=int)
    for c, g in enumerate(members):
        which[g] = c
    internal: list[list] = [[] for _ in members]
    boundary: list[list] = [[] for _ in members]
    for a, b, x in zip(i.tolist(), j.tolist(), w.tolist()):
        ca, cb = which[a], which[b]
        if ca == cb:
            internal[ca].append((a, b, x))
        else:
            boundary[ca].append((a, b, x))
            boundary[cb].append((a, b, x))
    return [
        Cluster(tuple(g), tuple(internal[c]), tuple(boundary[c]), float(v_min)) for c, g in enumerate(members)
    ]


def coupling_histogram(graph: CouplingGraph, cluster: Cluster) -> tuple[np.ndarray, np.ndarray]:
    """Weights of edges inside ``cluster`` and from it to the rest of ``graph``."""
    members = set(cluster.member_ids)
    if not members <= set(range(graph.n)):
        raise InvalidSpecError("cluster members are not graph nodes")
    inside, outside = [], []
    for (a, b), w in sorted(graph.edges.items()):
        ina, inb = a in members, b in members
        if ina and inb:
            inside.append(w)
        elif ina or inb:
            outside.append(w)
    return np.array(inside), np.array(outside)


def is_refinement(fine: Sequence[Cluster], coarse: Sequence[Cluster]) -> bool:
    """True if every cluster of ``fine`` lies inside one cluster of ``coarse``."""
    owner = {}
    for c, cl in enumerate(coarse):
        for m in cl.member_ids:
            owner[m] = c
    return all(len({owner[m] for m in cl.member_ids}) == 1 for cl in fine)


# -------------------------------------------------------------------------
# File formats
# -------------------------------------------------------------------------

GEOMETRY_COLUMNS = ("id", "x_ang", "y_ang", "z_ang", "shift_ppm", "species")


def read_geometry(path_or_text) -> list[SpinSite]:
    """Parse the tab-separated geometry table (``#`` lines are comments)."""
    text = Path(path_or_text).read_text(encoding="utf-8") if _is_path(path_or_text) else str(path_or_text)
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError("geometry table is empty")
    reader = csv.DictReader(lines, delimiter="\t")
    if tuple(reader.fieldnames or ()) != GEOMETRY_COLUMNS:
        raise DataError(f"geometry header must be the columns {GEOMETRY_COLUMNS}")
    sites = []
    for row in reader:
        try:
            sites.append(
                SpinSite.of(
                    int(row["id"]),
                    (float(row["x_ang"]), float(row["y_ang"]), float(row["z_ang"])),
                    float(row["shift_ppm"]),
                    row["species"].strip(),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"bad geometry row {row}: {exc}") from exc
    sites.sort(key=lambda s: s.id)
    return sites


def _is_path(x) -> bool:
    return isinstance(x, Path) or (isinstance(x, str) and "\n" not in x and "\t" not in x)


def write_geometry(sites: Iterable[SpinSite], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    buf.write("\t".join(GEOMETRY_COLUMNS) + "\n")
    for s in sites:
        x, y, z = s.position
        buf.write(f"{s.id}\t{x:.6f}\t{y:.6f}\t{z:.6f}\t{s.chemical_shift:.6f}\t{s.species}\n")
    return buf.getvalue()


def system_from_config(sites: Sequence[SpinSite], config: dict) -> SpinSystem:
    """Combine geometry with ``field_tesla``, ``field_direction``, ``alpha``, ``j_couplings``."""
    allowed = {"field_tesla", "field_direction", "alpha", "j_couplings"}
    unknown = set(config) - allowed
    if unknown:
        raise InvalidSpecError(f"unknown system config keys {sorted(unknown)}")
    J = {(int(i), int(j)): float(v) for i, j, v in config.get("j_couplings", [])}
    return SpinSystem(
        tuple(sites),
        float(config.get("field_tesla", 23.5)),
        tuple(config.get("field_direction", (0.0, 0.0, 1.0))),
        float(config.get("alpha", 1.0)),
        J,
    )


def bundled_six_spin() -> list[SpinSite]:
    """The packaged 6-proton demonstration geometry."""
    from importlib.resources import files

    return read_geometry(files("nmrlearn.data").joinpath("six_spin.tsv").read_text(encoding="utf-8"))


def pdb_to_sites(pdb_text: str, elements: Sequence[str] = ("H",), model: int = 1) -> list[SpinSite]:
    """Extract nuclei from PDB ``ATOM``/``HETATM`` records of one model.

    Shifts are set to 0 ppm; species follow the element (``H`` -> ``H1``,
    ``C`` -> ``C13``, ``N`` -> ``N15``, ``F`` -> ``F19``, ``P`` -> ``P31``).
    """
    species_of = {"H": "H1", "C": "C13", "N": "N15", "F": "F19", "P": "P31"}
    wanted = {e.upper() for e in elements}
    current = 1
    seen_model = False
    sites = []
    for line in pdb_text.splitlines():
        rec = line[:6].strip()
        if rec == "MODEL":
            seen_model = True
            try:
                current = int(line[10:14])
            except ValueError:
                current = int(line.split()[1])
            continue
        if rec == "ENDMDL" and seen_model and current == model:
            break
        if rec not in ("ATOM", "HETATM") or current != model:
            continue
        element = line[76:78].strip().upper() if len(line) >= 78 else ""
        if not element:
            name = line[12:16].strip()
            element = name.lstrip("0123456789")[:1].upper()
        if element not in wanted:
            continue
        try:
            xyz = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
        except ValueError as exc:
            raise DataError(f"bad coordinates in PDB line: {line!r}") from exc
        sites.append(SpinSite.of(len(sites), xyz, 0.0, species_of[element]))
    if not sites:
        raise DataError(f"no atoms of elements {sorted(wanted)} in model {model}")
    return sites


def cluster_report(graph: CouplingGraph, thresholds: Sequence[float], bins: int = 30) -> dict:
    """Member lists and internal/boundary histograms for each threshold."""
    out = {"weight_mode": graph.weight_mode, "n_spins": graph.n, "thresholds_khz": [], "results": []}
    _, _, w_all = graph.arrays()
    top = float(w_all.max()) if w_all.size else 1.0
    edges = np.linspace(0.0, top, bins + 1)
    for v in thresholds:
        clusters = extract_clusters(graph, float(v))
        largest = max(clusters, key=lambda c: (c.size, -c.member_ids[0])) if clusters else None
        entry = {
            "v_min_khz": float(v),
            "n_clusters": len(clusters),
            "sizes": [c.size for c in clusters],
            "members": [list(c.member_ids) for c in clusters],
        }
        if largest is not None:
            inside, outside = coupling_histogram(graph, largest)
            entry["largest_cluster"] = {
                "size": largest.size,
                "bin_edges_khz": edges.tolist(),
                "internal_counts": np.histogram(inside, edges)[0].tolist(),
                "boundary_counts": np.histogram(outside, edges)[0].tolist(),
            }
        out["thresholds_khz"].append(float(v))
        out["results"].append(entry)
    return out


def load_system_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc
