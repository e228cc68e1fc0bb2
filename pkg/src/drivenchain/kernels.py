"""Deterministic solution kernels of the noise-driven chain.

x_n(t) and y_n(t) are the impulse responses of displacement and velocity at
site n to the driving at site 0; h(t) and f(t) are the scalar kernels that
enter the total-energy decomposition.  All are Fourier integrals over the
spectrum, evaluated by composite Gauss-Legendre quadrature with the panel
count growing with t so that every oscillation keeps at least 16 nodes.
The kernels are even in n, by evenness of the frequency curve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .potential import (
    AssumptionError,
    DispersionAnalysis,
    InteractionPotential,
    potential_energy,
)
from .quadrature import DEFAULT_TOL, GL_ORDER, QuadratureError, adaptive_quad, panel_nodes, panels_for

TWO_PI = 2.0 * np.pi
T_MIN_ASYMPTOTIC = 5.0
_OMEGA_SMALL = 1e-6


def _sin_over_omega(t, om):
    """sin(t*om)/om with the series value t*(1 - (t*om)^2/6) near om = 0."""
    om = np.asarray(om, float)
    small = om < _OMEGA_SMALL
    safe = np.where(small, 1.0, om)
    phase = t * om
    return np.where(small, t * (1.0 - phase * phase / 6.0), np.sin(phase) / safe)


@dataclass(frozen=True, eq=False)
class InitialData:
    """Finite displacement and velocity windows, zero outside their support."""

    sites: np.ndarray
    q: np.ndarray
    p: np.ndarray

    @classmethod
    def zero(cls) -> "InitialData":
        empty = np.array([], dtype=float)
        return cls(sites=np.array([], dtype=int), q=empty, p=empty)

    @classmethod
    def from_windows(cls, q=None, p=None) -> "InitialData":
        """Build from sparse site -> value mappings."""
        q = {int(k): float(v) for k, v in (q or {}).items() if v != 0}
        p = {int(k): float(v) for k, v in (p or {}).items() if v != 0}
        sites = sorted(set(q) | set(p))
        return cls(
            sites=np.array(sites, dtype=int),
            q=np.array([q.get(s, 0.0) for s in sites]),
            p=np.array([p.get(s, 0.0) for s in sites]),
        )

    @property
    def is_zero(self) -> bool:
        return self.sites.size == 0

    def Q0(self, lam):
        """Fourier sum of the displacement window."""
        if self.is_zero:
            return np.zeros(np.shape(lam), dtype=complex)
        return np.exp(1j * np.multiply.outer(np.asarray(lam, float), self.sites)) @ self.q.astype(complex)

    def P0(self, lam):
        """Fourier sum of the velocity window."""
        if self.is_zero:
            return np.zeros(np.shape(lam), dtype=complex)
        return np.exp(1j * np.multiply.outer(np.asarray(lam, float), self.sites)) @ self.p.astype(complex)

    def dense_q(self):
        """Contiguous displacement window and the site index of its first entry."""
        if self.is_zero:
            return np.array([], dtype=float), 0
        lo, hi = int(self.sites.min()), int(self.sites.max())
        out = np.zeros(hi - lo + 1)
        out[self.sites - lo] = self.q
        return out, lo

    def q_at(self, n: int) -> float:
        hit = np.nonzero(self.sites == n)[0]
        return float(self.q[hit[0]]) if hit.size else 0.0

    def p_at(self, n: int) -> float:
        hit = np.nonzero(self.sites == n)[0]
        return float(self.p[hit[0]]) if hit.size else 0.0

    @property
    def bandwidth(self) -> int:
        return int(np.max(np.abs(self.sites))) if self.sites.size else 0


def initial_energy(pot: InteractionPotential, init: InitialData) -> float:
    """Energy of the initial phase point: kinetic plus quadratic form."""
    if init.is_zero:
        return 0.0
    dense, _ = init.dense_q()
    return 0.5 * float(np.dot(init.p, init.p)) + potential_energy(pot, dense)


def _cycles(pot: InteractionPotential, t: float, span: float, bandwidth: int = 0) -> float:
    """Oscillation estimate for integrands cos(n lam) * trig(t w(lam)) on a lam interval."""
    return (t * pot.omega_max + bandwidth) * span / TWO_PI + 1.0


def kernel_y(pot: InteractionPotential, n: int, t: float, *, tol: float = DEFAULT_TOL) -> float:
    """Velocity response at site n: (sigma/2pi) Int e^{-i n lam} cos(t w) dlam."""
    n = abs(int(n))
    f = lambda lam: np.cos(n * lam) * np.cos(t * pot.omega(lam))
    val = adaptive_quad(f, 0.0, np.pi, _cycles(pot, t, np.pi, n), tol=tol,
                        context=f"kernel_y(n={n}, t={t})")
    return pot.sigma / np.pi * float(val)


def kernel_x(pot: InteractionPotential, n: int, t: float, *, tol: float = DEFAULT_TOL) -> float:
    """Displacement response at site n: (sigma/2pi) Int e^{-i n lam} sin(t w)/w dlam."""
    n = abs(int(n))
    f = lambda lam: np.cos(n * lam) * _sin_over_omega(t, pot.omega(lam))
    val = adaptive_quad(f, 0.0, np.pi, _cycles(pot, t, np.pi, n), tol=tol,
                        context=f"kernel_x(n={n}, t={t})")
    return pot.sigma / np.pi * float(val)


def kernel_h(pot: InteractionPotential, t: float, *, tol: float = DEFAULT_TOL) -> float:
    """Energy noise kernel: sigma times the site-0 velocity response, same quadrature path."""
    return pot.sigma * kernel_y(pot, 0, t, tol=tol)


def kernel_f(pot: InteractionPotential, init: InitialData, t: float, *, tol: float = DEFAULT_TOL) -> float:
    """Initial-condition kernel of the energy decomposition.

    (sigma/2pi) Int (-Q0 w sin(t w) + P0 cos(t w)) dlam; vanishes for zero
    initial data and equals sigma times the site-0 homogeneous velocity.
    """
    if init.is_zero:
        return 0.0

    def f(lam):
        om = pot.omega(lam)
        return -init.Q0(lam) * om * np.sin(t * om) + init.P0(lam) * np.cos(t * om)

    val = adaptive_quad(f, 0.0, TWO_PI, _cycles(pot, t, TWO_PI, init.bandwidth), tol=tol,
                        context=f"kernel_f(t={t})")
    return pot.sigma / TWO_PI * float(np.real(val))


def homogeneous_solution(pot: InteractionPotential, init: InitialData, n: int, t: float,
                         *, tol: float = DEFAULT_TOL):
    """Deterministic part of the solution at site n: (q, p) driven by the initial data alone.

    Reproduces the initial data at t = 0 and decays by dispersion as t grows
    when the frequency stays positive.
    """
    if init.is_zero:
        return 0.0, 0.0
    cycles = _cycles(pot, t, TWO_PI, init.bandwidth + abs(n))

    def fq(lam):
        om = pot.omega(lam)
        wave = np.exp(-1j * n * lam)
        return wave * (init.Q0(lam) * np.cos(t * om) + init.P0(lam) * _sin_over_omega(t, om))

    def fp(lam):
        om = pot.omega(lam)
        wave = np.exp(-1j * n * lam)
        return wave * (-init.Q0(lam) * om * np.sin(t * om) + init.P0(lam) * np.cos(t * om))

    q = np.real(adaptive_quad(fq, 0.0, TWO_PI, cycles, tol=tol, context=f"hom q(n={n}, t={t})")) / TWO_PI
    p = np.real(adaptive_quad(fp, 0.0, TWO_PI, cycles, tol=tol, context=f"hom p(n={n}, t={t})")) / TWO_PI
    return float(q), float(p)


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Sampled kernels on a time grid for a set of sites.

    x, y have shape (len(times), len(sites)); h is sigma times the site-0
    velocity column; f is present only when initial data was supplied.
    """

    sites: tuple
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    h: np.ndarray
    f: np.ndarray | None
    quadrature_order: int

    def column(self, kind: str, n: int) -> np.ndarray:
        idx = self.sites.index(int(n))
        return (self.x if kind == "x" else self.y)[:, idx]


def _table_values(pot: InteractionPotential, sites_abs, times, panels: int, order: int = GL_ORDER,
                  kind: str = "both", chunk_budget: int = 4_000_000):
    """Kernel matrices for nonnegative sites on a time grid at a fixed panel count."""
    lam, w = panel_nodes(0.0, np.pi, panels, order)
    om = pot.omega(lam)
    small = om < _OMEGA_SMALL
    inv = np.where(small, 0.0, 1.0 / np.where(small, 1.0, om))
    # weights fold in the 2/(2 pi) prefactor from evenness about pi
    wy = (np.cos(np.multiply.outer(np.asarray(sites_abs, float), lam)) * w) * (pot.sigma / np.pi)
    n_t = len(times)
    x = np.empty((n_t, len(sites_abs))) if kind in ("both", "x") else None
    y = np.empty((n_t, len(sites_abs))) if kind in ("both", "y") else None
    rows = max(1, chunk_budget // max(1, len(lam)))
    for lo in range(0, n_t, rows):
        tc = times[lo:lo + rows, None]
        phase = tc * om[None, :]
        if y is not None:
            y[lo:lo + rows] = np.cos(phase) @ wy.T
        if x is not None:
            sin_p = np.sin(phase) * inv[None, :]
            if small.any():
                ph = phase[:, small]
                sin_p[:, small] = tc * (1.0 - ph * ph / 6.0)
            x[lo:lo + rows] = sin_p @ wy.T
    return x, y


def _check_rows(n_t: int, limit: int = 48) -> np.ndarray:
    if n_t <= limit:
        return np.arange(n_t)
    return np.unique(np.linspace(0, n_t - 1, limit).round().astype(int))


def kernel_sweep(pot: InteractionPotential, sites, times, kind: str = "both",
                 *, tol: float = DEFAULT_TOL, order: int = GL_ORDER,
                 min_panels: int = 4):
    """Vectorized kernel matrices (times x sites) with a doubled-node spot check.

    A sample of rows is recomputed at twice the panel count; disagreement
    beyond tol means the quadrature has not converged.  Sites may be signed;
    columns for -n reuse the n column (kernels are even in n).
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size and np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    if times.size and times[0] < 0:
        raise ValueError("times must be nonnegative")
    sites = [int(s) for s in sites]
    sites_abs = sorted({abs(s) for s in sites})
    t_big = float(times.max()) if times.size else 0.0
    bw = max(sites_abs) if sites_abs else 0
    panels = panels_for(_cycles(pot, t_big, np.pi, bw), minimum=min_panels)

    x1, y1 = _table_values(pot, sites_abs, times, panels, order, kind)
    probe = _check_rows(len(times))
    x2, y2 = _table_values(pot, sites_abs, times[probe], 2 * panels, order, kind)
    err = 0.0
    for coarse, fine in ((x1, x2), (y1, y2)):
        if coarse is not None:
            err = max(err, float(np.max(np.abs(coarse[probe] - fine), initial=0.0)))
    if err > tol:
        raise QuadratureError(
            f"kernel sweep disagreement {err:.3e} > {tol:.1e} after doubling {panels} panels"
        )
    col = {s: i for i, s in enumerate(sites_abs)}
    pick = [col[abs(s)] for s in sites]
    return (None if x1 is None else x1[:, pick],
            None if y1 is None else y1[:, pick],
            2 * panels * order)


def build_kernel_table(pot: InteractionPotential, sites, times, init: InitialData | None = None,
                       *, tol: float = DEFAULT_TOL, order: int = GL_ORDER,
                       min_panels: int = 4) -> KernelTable:
    """Tabulate x, y, h (and f, when initial data is given) on a time grid."""
    sites = [int(s) for s in sites]
    x, y, nodes = kernel_sweep(pot, sites + ([] if 0 in {abs(s) for s in sites} else [0]),
                               times, "both", tol=tol, order=order, min_panels=min_panels)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    h = pot.sigma * y[:, [abs(s) for s in sites + [0]].index(0)]
    x = x[:, :len(sites)]
    y = y[:, :len(sites)]

    f = None
    if init is not None and not init.is_zero:
        f = np.array([kernel_f(pot, init, t, tol=tol) for t in times])

    return KernelTable(sites=tuple(sites), times=times, x=x, y=y, h=h, f=f,
                       quadrature_order=nodes)


def _sp_weights(disp: DispersionAnalysis, sigma: float, n: int):
    """Per-critical-point cosine amplitudes of the long-time kernel expansion."""
    lam = disp.critical_points
    return sigma * disp.theta * np.sqrt(1.0 / (TWO_PI * np.abs(disp.curvatures))) * np.cos(n * lam)


def stationary_phase_y(disp: DispersionAnalysis, sigma: float, n: int, t,
                       *, t_min: float = T_MIN_ASYMPTOTIC):
    """Leading long-time term of the velocity kernel.

    (1/sqrt t) sum over critical points of b_k cos(t w_k + (pi/4) s_k); the
    remainder decays one power of t faster.
    """
    if not (disp.positive and disp.nondegenerate):
        raise AssumptionError("stationary phase requires positive frequency and nondegenerate critical points")
    t = np.asarray(t, dtype=float)
    if np.any(t < t_min):
        raise ValueError(f"asymptotic form is not claimed below t = {t_min}")
    b = _sp_weights(disp, sigma, n)
    phase = np.multiply.outer(t, disp.frequencies) + (np.pi / 4.0) * disp.signs
    out = np.cos(phase) @ b / np.sqrt(t)
    return float(out) if out.ndim == 0 else out


def stationary_phase_x(disp: DispersionAnalysis, sigma: float, n: int, t,
                       *, t_min: float = T_MIN_ASYMPTOTIC):
    """Leading long-time term of the displacement kernel: sine phases, 1/w weights."""
    if not (disp.positive and disp.nondegenerate):
        raise AssumptionError("stationary phase requires positive frequency and nondegenerate critical points")
    t = np.asarray(t, dtype=float)
    if np.any(t < t_min):
        raise ValueError(f"asymptotic form is not claimed below t = {t_min}")
    e = _sp_weights(disp, sigma, n) / disp.frequencies
    phase = np.multiply.outer(t, disp.frequencies) + (np.pi / 4.0) * disp.signs
    out = np.sin(phase) @ e / np.sqrt(t)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class DecayCheck:
    """Magnitudes of the plain oscillatory integral and their log-log decay fit."""

    times: np.ndarray
    magnitudes: np.ndarray
    slope: float
    intercept: float
    flat: bool   # constant frequency: every point critical, no decay expected


def kernel_decay_check(pot: InteractionPotential, t_list, *, tol: float = DEFAULT_TOL) -> DecayCheck:
    """Magnitude of Int_0^{2pi} e^{i t w(lam)} dlam over t, with a decay-slope fit.

    Works without any positivity assumption.  A constant frequency curve is
    flagged: the integral then has constant magnitude 2 pi.
    """
    times = np.asarray(t_list, dtype=float)
    mags = np.empty(times.shape)
    for i, t in enumerate(times):
        f = lambda lam: np.exp(1j * t * pot.omega(lam))
        val = adaptive_quad(f, 0.0, np.pi, _cycles(pot, t, np.pi), tol=tol,
                            context=f"decay check t={t}")
        mags[i] = abs(2.0 * val)
    grid = np.linspace(0.0, np.pi, 2049)
    from .potential import _omega_sq_d1
    scale = 1.0 + 2.0 * sum(k * abs(pot.a[k]) for k in range(1, pot.r + 1))
    flat = bool(np.max(np.abs(_omega_sq_d1(pot, grid))) < 1e-14 * scale)
    ok = (times > 0) & (mags > 1e-300)
    if ok.sum() >= 2:
        slope, intercept = np.polyfit(np.log(times[ok]), np.log(mags[ok]), 1)
    else:
        slope, intercept = np.nan, np.nan
    return DecayCheck(times=times, magnitudes=mags, slope=float(slope),
                      intercept=float(intercept), flat=flat)
