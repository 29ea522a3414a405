"""
Synthetic spin clusters standing in for molecular data.

Geometries grow one proton at a time: each new site sits at a random
distance in ``[r_min, r_step]`` from a randomly chosen existing site. It is
rejected if it comes closer than ``r_min`` to any site, or if its strongest
orientation-weighted coupling ``|Gamma (3 cos^2 phi - 1)|`` to the existing
sites is below ``link_khz``. The second rule makes every cluster connected at
``link_khz``, as clusters cut from a molecule at that threshold are.
Chemical shifts are uniform in a ``+-shift_band_khz`` band around the carrier.

The defaults put unsuppressed proton couplings in roughly 0.5-25 kHz:
``Gamma(1.34 A) = 25 kHz`` and ``Gamma(4.9 A) = 0.5 kHz``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError
from .nmrmodel import GAMMA, RAD_PER_S_TO_KHZ, SpinSite, SpinSystem, dipolar_coupling

R_MIN_ANG = 1.34
R_STEP_ANG = 2.6
LINK_KHZ = 10.0


def khz_per_ppm(field_tesla: float, species: str = "H1") -> float:
    return GAMMA[species] * field_tesla * 1e-6 * RAD_PER_S_TO_KHZ


def random_geometry(
    n: int,
    rng: np.random.Generator,
    r_min: float = R_MIN_ANG,
    r_step: float = R_STEP_ANG,
    link_khz: float = LINK_KHZ,
    field_direction=(0.0, 0.0, 1.0),
) -> np.ndarray:
    """Compact random proton positions (Angstrom), shape ``(n, 3)``."""
    if n < 1:
        raise InvalidSpecError("need at least one site")
    if not 0 < r_min <= r_step:
        raise InvalidSpecError("need 0 < r_min <= r_step")
    b = np.asarray(field_direction, dtype=float)
    # Gamma * r**3 for a proton pair, kHz A^3
    g_r3 = dipolar_coupling(SpinSite.of(0, (0, 0, 0)), SpinSite.of(1, (0, 0, 1.0)))
    pts = [np.zeros(3)]
    attempts = 0
    while len(pts) < n:
        attempts += 1
        if attempts > 100000:
            raise InvalidSpecError("could not place sites; loosen r_min, r_step or link_khz")
        anchor = pts[rng.integers(len(pts))]
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        cand = anchor + rng.uniform(r_min, r_step) * u
        sep = cand - np.array(pts)
        dist = np.linalg.norm(sep, axis=1)
        if dist.min() < r_min:
            continue
        cos = (sep @ b) / dist
        if np.max(np.abs(g_r3 / dist**3 * (3 * cos**2 - 1))) < link_khz:
            continue
        pts.append(cand)
    return np.array(pts)


def synthetic_system(
    n: int,
    rng: np.random.Generator,
    field_tesla: float = 23.5,
    shift_band_khz: float = 5.0,
    r_min: float = R_MIN_ANG,
    r_step: float = R_STEP_ANG,
    link_khz: float = LINK_KHZ,
    alpha: float = 1.0,
) -> SpinSystem:
    """One random proton cluster in a field along ``z``."""
    pos = random_geometry(n, rng, r_min, r_step, link_khz)
    shifts = rng.uniform(-shift_band_khz, shift_band_khz, size=n) / khz_per_ppm(field_tesla)
    sites = tuple(SpinSite.of(i, pos[i], shifts[i]) for i in range(n))
    return SpinSystem(sites, field_tesla, (0.0, 0.0, 1.0), alpha)


@dataclass(frozen=True)
class EnsembleMember:
    cluster_id: str
    system: SpinSystem

    @property
    def n(self) -> int:
        return self.system.n


def synthetic_ensemble(
    sizes,
    per_size: int,
    seed: int,
    **kwargs,
) -> list[EnsembleMember]:
    """``per_size`` clusters for each size, each from its own spawned seed.

    Members are ordered by size, then index; ids look like ``"N8-003"``.
    """
    root = np.random.SeedSequence(seed)
    sizes = [int(s) for s in sizes]
    children = root.spawn(len(sizes) * per_size)
    out = []
    for a, n in enumerate(sizes):
        for k in range(per_size):
            rng = np.random.default_rng(children[a * per_size + k])
            out.append(EnsembleMember(f"N{n}-{k:03d}", synthetic_system(n, rng, **kwargs)))
    return out
