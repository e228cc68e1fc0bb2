"""Finite-range symmetric interaction potentials and their dispersion analysis.

A potential is specified by its one-sided coefficient window a(0..r) with
a(-n) = a(n) baked in, plus the noise amplitude sigma.  The frequency
spectrum is w^2(lam) = a(0) + 2 * sum_n a(n) cos(n lam); it must be
nonnegative for the energy form to be positive semidefinite, which is
checked numerically on a dense grid at construction time.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TOL_PSD = 1e-10    # allowed numerical dip of w^2 below zero
TOL_CURV = 1e-8    # |w''| below this marks a degenerate critical point
TOL_FREQ = 1e-8    # critical frequencies closer than this count as coincident
TOL_ROOT = 1e-12   # bisection width for critical-point refinement
PSD_GRID = 4096    # lambda grid for the positivity check
SCAN_INTERVALS = 8192  # uniform scan intervals for the critical-point search

TWO_PI = 2.0 * np.pi


class PotentialError(ValueError):
    """Coefficients violate the structural requirements."""


class AssumptionError(RuntimeError):
    """Operation requires dispersion assumptions that do not hold."""


@dataclass(frozen=True)
class InteractionPotential:
    """Finite-range symmetric coupling a(0..r) with noise amplitude sigma."""

    r: int
    a: tuple
    sigma: float

    def __post_init__(self):
        if self.r < 1 or int(self.r) != self.r:
            raise PotentialError(f"interaction radius must be a positive integer, got {self.r}")
        a = tuple(float(v) for v in self.a)
        if len(a) != self.r + 1:
            raise PotentialError(f"need r+1 = {self.r + 1} coefficients a(0..r), got {len(a)}")
        if self.sigma < 0:
            raise PotentialError(f"noise amplitude must be nonnegative, got {self.sigma}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "sigma", float(self.sigma))
        lam = np.linspace(0.0, np.pi, PSD_GRID + 1)
        vals = self._omega_sq_raw(lam)
        vmin = float(vals.min())
        if vmin < -TOL_PSD:
            raise PotentialError(
                f"spectrum dips to {vmin:.3e} below zero; the energy form is not positive semidefinite"
            )
        object.__setattr__(self, "omega_max", float(np.sqrt(max(vals.max(), 0.0))))
        object.__setattr__(self, "omega_min", float(np.sqrt(max(vmin, 0.0))))

    def coefficient(self, n: int) -> float:
        """a(n), using symmetry and the finite range."""
        n = abs(int(n))
        return self.a[n] if n <= self.r else 0.0

    def coefficients_full(self) -> np.ndarray:
        """Dense window a(-r..r)."""
        side = np.asarray(self.a[1:])
        return np.concatenate([side[::-1], [self.a[0]], side])

    def _omega_sq_raw(self, lam):
        n = np.arange(1, self.r + 1)
        side = np.asarray(self.a[1:])
        return self.a[0] + 2.0 * np.cos(np.multiply.outer(lam, n)) @ side

    def omega_sq(self, lam):
        return omega_squared(self, lam)

    def omega(self, lam):
        return np.sqrt(omega_squared(self, lam))

    @property
    def spectral_norm(self) -> float:
        """Operator norm of the coupling matrix, max of the spectrum."""
        return self.omega_max ** 2


def _fold(lam):
    """Map lam to [0, pi] using 2*pi periodicity and evenness.

    Negation symmetry is exact in floating point: every operation here
    commutes with sign flips, so omega_squared(lam) == omega_squared(-lam)
    bitwise.
    """
    lam = np.asarray(lam, dtype=float)
    return np.abs(lam - TWO_PI * np.round(lam / TWO_PI))


def nearest_neighbor_potential(omega0_sq: float, omega1_sq: float, sigma: float) -> InteractionPotential:
    """Chain with on-site pinning omega0_sq and neighbor coupling omega1_sq."""
    if omega0_sq < 0 or omega1_sq < 0:
        raise PotentialError("pinning and coupling stiffness must be nonnegative")
    if omega0_sq == 0 and omega1_sq == 0:
        raise PotentialError("pinning and coupling cannot both vanish")
    return InteractionPotential(r=1, a=(omega0_sq + 2.0 * omega1_sq, -omega1_sq), sigma=sigma)


def omega_squared(pot: InteractionPotential, lam):
    """Spectrum a(0) + 2 sum a(n) cos(n lam), clamped at 0 within TOL_PSD.

    Even about lam = 0 and lam = pi through argument folding.
    """
    scalar = np.isscalar(lam) or np.ndim(lam) == 0
    vals = pot._omega_sq_raw(_fold(lam))
    vals = np.atleast_1d(vals)
    if np.any(vals < -TOL_PSD):
        worst = float(vals.min())
        raise PotentialError(f"spectrum value {worst:.3e} below the positivity slack")
    vals = np.where(vals < 0.0, 0.0, vals)
    return float(vals[0]) if scalar else vals


def _omega_sq_d1(pot: InteractionPotential, lam):
    n = np.arange(1, pot.r + 1)
    side = np.asarray(pot.a[1:]) * n
    return -2.0 * np.sin(np.multiply.outer(np.asarray(lam, float), n)) @ side


def _omega_sq_d2(pot: InteractionPotential, lam):
    n = np.arange(1, pot.r + 1)
    side = np.asarray(pot.a[1:]) * n * n
    return -2.0 * np.cos(np.multiply.outer(np.asarray(lam, float), n)) @ side


def _omega_curvature(pot: InteractionPotential, lam):
    """w'' from the spectrum derivatives by the chain rule; nan where w = 0."""
    lam = np.asarray(lam, float)
    f = pot._omega_sq_raw(lam)
    d1 = _omega_sq_d1(pot, lam)
    d2 = _omega_sq_d2(pot, lam)
    out = np.full(np.shape(f), np.nan)
    ok = f > TOL_PSD
    fw = np.where(ok, f, 1.0)
    om = np.sqrt(fw)
    out = np.where(ok, d2 / (2.0 * om) - d1 * d1 / (4.0 * fw * om), out)
    return out


@dataclass(frozen=True)
class DispersionAnalysis:
    """Critical points of the frequency curve on [0, pi] and assumption verdicts."""

    potential: InteractionPotential
    critical_points: np.ndarray   # 0 = lam_0 < ... < lam_{m+1} = pi
    frequencies: np.ndarray       # w at each critical point
    curvatures: np.ndarray        # w'' at each critical point, nan where w = 0
    signs: np.ndarray             # sign of the curvature, +-1
    theta: np.ndarray             # 1 at the endpoints, 2 at interior points
    chi: np.ndarray               # theta squared
    positive: bool                # frequency strictly positive everywhere
    nondegenerate: bool           # every critical point has nonzero curvature
    distinct: bool                # critical frequencies pairwise separated
    flat: bool                    # frequency constant: every point is critical
    group_velocity_max: float     # max |w'| over (0, pi)
    omega_max: float
    omega_min: float

    @property
    def interior_count(self) -> int:
        return len(self.critical_points) - 2

    @property
    def assumptions_hold(self) -> bool:
        return self.positive and self.nondegenerate and self.distinct

    def failed_assumptions(self) -> list:
        out = []
        if not self.positive:
            out.append("positive frequency (A1)")
        if not self.nondegenerate:
            out.append("nondegenerate critical points (A2)")
        if not self.distinct:
            out.append("distinct critical frequencies (A3)")
        return out

    def require_assumptions(self, operation: str):
        if not self.assumptions_hold:
            raise AssumptionError(f"{operation} requires: " + "; ".join(self.failed_assumptions()))


def _bisect(g, lo: float, hi: float, tol: float) -> float:
    glo = g(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if gm == 0.0:
            return mid
        if (glo < 0) == (gm < 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def analyze_dispersion(pot: InteractionPotential, grid_size: int = SCAN_INTERVALS, *,
                       tol_root: float = TOL_ROOT, tol_curv: float = TOL_CURV,
                       tol_freq: float = TOL_FREQ) -> DispersionAnalysis:
    """Locate critical points of the frequency on [0, pi] and grade the assumptions.

    The scan runs on the slope of the squared frequency, which shares its
    zeros with the frequency slope wherever the frequency is positive and
    stays finite at spectrum zeros.
    """
    if grid_size < 1024:
        raise ValueError(f"grid_size must be at least 1024, got {grid_size}")
    lam = np.linspace(0.0, np.pi, grid_size + 1)
    g = _omega_sq_d1(pot, lam)
    scale = 1.0 + 2.0 * sum(n * abs(pot.a[n]) for n in range(1, pot.r + 1))
    flat = bool(np.max(np.abs(g)) < 1e-14 * scale)

    roots = []
    if not flat:
        fun = lambda x: float(_omega_sq_d1(pot, x))
        for i in range(1, grid_size - 1):
            if g[i] == 0.0:
                roots.append(lam[i])
            elif g[i] * g[i + 1] < 0.0:
                roots.append(_bisect(fun, lam[i], lam[i + 1], tol_root))
    # drop duplicates and anything that collapsed onto an endpoint
    interior = []
    for x in sorted(roots):
        if x < tol_root or x > np.pi - tol_root:
            continue
        if interior and abs(x - interior[-1]) < 10 * tol_root:
            continue
        interior.append(x)

    pts = np.array([0.0, *interior, np.pi])
    f_pts = pot._omega_sq_raw(pts)
    freqs = np.sqrt(np.clip(f_pts, 0.0, None))
    curv = _omega_curvature(pot, pts)
    signs = np.where(np.nan_to_num(curv, nan=1.0) >= 0.0, 1, -1).astype(int)
    theta = np.full(len(pts), 2, dtype=int)
    theta[0] = theta[-1] = 1
    chi = theta ** 2

    # the spectrum attains its minimum at a critical point or an endpoint,
    # all of which are in the candidate list
    positive = bool(np.min(f_pts) > TOL_PSD)
    finite = np.isfinite(curv)
    nondegenerate = bool(positive and finite.all() and np.min(np.abs(curv)) > tol_curv)
    dist = np.abs(freqs[:, None] - freqs[None, :])[np.triu_indices(len(pts), 1)]
    distinct = bool(dist.size == 0 or np.min(dist) > tol_freq)

    if nondegenerate and np.min(np.abs(curv)) < 10 * tol_curv:
        warnings.warn("near-degenerate critical point: smallest curvature within 10x of the tolerance")
    if distinct and dist.size and np.min(dist) < 10 * tol_freq:
        warnings.warn("near-coincident critical frequencies: closest pair within 10x of the tolerance")

    fmid = pot._omega_sq_raw(lam)
    ok = fmid > 1e-14 * scale
    vmax = float(np.max(np.abs(g[ok]) / (2.0 * np.sqrt(fmid[ok])))) if ok.any() else 0.0

    return DispersionAnalysis(
        potential=pot,
        critical_points=pts,
        frequencies=freqs,
        curvatures=curv,
        signs=signs,
        theta=theta,
        chi=chi,
        positive=positive,
        nondegenerate=nondegenerate,
        distinct=distinct,
        flat=flat,
        group_velocity_max=vmax,
        omega_max=pot.omega_max,
        omega_min=pot.omega_min,
    )


def compute_dn(disp: DispersionAnalysis, sigma: float, n: int) -> float:
    """Coefficient of ln(t) in the site-n mean kinetic and potential energies.

    Independent of n when there are no interior critical points.  Bounded
    below by the endpoint contribution, so inf over n stays positive.
    """
    disp.require_assumptions("growth constant")
    lam = disp.critical_points
    amp = np.cos(n * lam) ** 2 * disp.chi / np.abs(disp.curvatures)
    return float(sigma * sigma / (8.0 * np.pi) * np.sum(amp))


def potential_energy(pot: InteractionPotential, q) -> float:
    """Quadratic energy (1/2) (q, Vq) of a finite displacement window.

    The window is treated as zero outside its support; the value does not
    depend on where the window sits on the chain.
    """
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        return 0.0
    full = pot.coefficients_full()
    vq = np.convolve(q, full)[pot.r:pot.r + q.size]
    return 0.5 * float(np.dot(q, vq))


def potential_from_config(cfg: dict) -> InteractionPotential:
    """Build a potential from its JSON description.

    Either {"nearest_neighbor": {"omega0_sq", "omega1_sq"}, "sigma"} or
    {"r", "a": [a(0..r)], "sigma"}.
    """
    sigma = float(cfg.get("sigma", 1.0))
    if "nearest_neighbor" in cfg:
        nn = cfg["nearest_neighbor"]
        return nearest_neighbor_potential(float(nn["omega0_sq"]), float(nn["omega1_sq"]), sigma)
    if "r" in cfg and "a" in cfg:
        return InteractionPotential(r=int(cfg["r"]), a=tuple(float(v) for v in cfg["a"]), sigma=sigma)
    raise PotentialError("potential config needs either 'nearest_neighbor' or 'r' and 'a'")


def load_potential(path) -> InteractionPotential:
    with open(Path(path)) as fh:
        cfg = json.load(fh)
    return potential_from_config(cfg.get("potential", cfg))
