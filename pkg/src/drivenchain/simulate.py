"""Two independent Monte Carlo engines for the noise-driven chain.

The chain engine propagates a periodic truncation with the exact spectral
flow (cos/sin of the frequency per Fourier mode) and adds the in-step noise
by sub-step refinement of the stochastic convolution.  The kernel engine
never truncates: it samples the solution directly as a discretized Ito
convolution of the response kernels against a shared Brownian increment
stream per replica.  Agreement of the two estimators is the working
uniqueness check for the dynamics.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import circulant
from scipy.special import gammaln

from .kernels import InitialData, _sin_over_omega, build_kernel_table, homogeneous_solution
from .potential import InteractionPotential, analyze_dispersion
from .quadrature import DEFAULT_TOL, panel_nodes

DEFAULT_SUBSTEPS = 8


class HorizonError(ValueError):
    """Requested horizon lets the wavefront reach the periodic boundary."""

    def __init__(self, message: str, required_n: int):
        super().__init__(message)
        self.required_n = required_n


@dataclass
class ChainState:
    """Periodic truncation of the phase point; the driven site is index 0."""

    N: int
    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    @classmethod
    def from_initial_data(cls, init: InitialData, N: int) -> "ChainState":
        q = np.zeros(N)
        p = np.zeros(N)
        for s, qv, pv in zip(init.sites, init.q, init.p):
            q[int(s) % N] += qv
            p[int(s) % N] += pv
        return cls(N=N, q=q, p=p)


@dataclass(frozen=True, eq=False)
class Propagator:
    """Exact one-step flow of the truncated chain, diagonal in Fourier modes.

    The zero-frequency mode (unpinned chains) uses the limit value dt for
    the sine block.
    """

    pot: InteractionPotential
    N: int
    dt: float
    omega_k: np.ndarray   # frequencies of the rfft modes
    cos_k: np.ndarray     # cos(dt w_k)
    sinc_k: np.ndarray    # sin(dt w_k)/w_k

    def apply(self, q: np.ndarray, p: np.ndarray):
        """Map (q, p) through one deterministic step; works on stacked rows."""
        qh = np.fft.rfft(q, axis=-1)
        ph = np.fft.rfft(p, axis=-1)
        qh2 = self.cos_k * qh + self.sinc_k * ph
        ph2 = -(self.omega_k ** 2) * self.sinc_k * qh + self.cos_k * ph
        return np.fft.irfft(qh2, n=self.N, axis=-1), np.fft.irfft(ph2, n=self.N, axis=-1)

    def driven_columns(self, u: float):
        """Columns of the flow at time u hitting the driven site: (sine block, cosine block)."""
        s_col = np.fft.irfft(_sin_over_omega(u, self.omega_k), n=self.N)
        c_col = np.fft.irfft(np.cos(u * self.omega_k), n=self.N)
        return s_col, c_col

    def dense_blocks(self):
        """Dense cosine and sine blocks of the one-step flow."""
        c_col = np.fft.irfft(self.cos_k, n=self.N)
        s_col = np.fft.irfft(self.sinc_k, n=self.N)
        return circulant(c_col), circulant(s_col)

    def dense_map(self) -> np.ndarray:
        """Dense 2N x 2N matrix of the deterministic step on (q, p)."""
        C, S = self.dense_blocks()
        vs_col = np.fft.irfft(self.omega_k ** 2 * self.sinc_k, n=self.N)
        VS = circulant(vs_col)
        top = np.hstack([C, S])
        bottom = np.hstack([-VS, C])
        return np.vstack([top, bottom])


def coupling_matrix(pot: InteractionPotential, N: int) -> np.ndarray:
    """Dense periodic coupling matrix; wrap-around images add when N <= 2r."""
    col = np.array([pot.coefficient(d) + (pot.coefficient(N - d) if d > 0 else 0.0)
                    for d in range(N)])
    return circulant(col)


def chain_energy(pot: InteractionPotential, state: ChainState):
    """Kinetic, potential, and total energy of a truncated state."""
    T = 0.5 * float(np.dot(state.p, state.p))
    k = np.arange(state.N // 2 + 1)
    om_sq = pot.omega_sq(2.0 * np.pi * k / state.N)
    par_w = np.full(state.N // 2 + 1, 2.0)
    par_w[0] = 1.0
    if state.N % 2 == 0:
        par_w[-1] = 1.0
    qh = np.fft.rfft(state.q)
    U = (0.5 / state.N) * float((np.abs(qh) ** 2 * om_sq) @ par_w)
    return T, U, T + U


def series_blocks(pot: InteractionPotential, N: int, dt: float, terms: int = 40):
    """Reference construction of the flow blocks by the alternating matrix power series."""
    V = coupling_matrix(pot, N)
    eye = np.eye(N)
    C = eye.copy()
    term = eye.copy()
    S = dt * eye
    term_s = dt * eye
    for k in range(1, terms):
        term = term @ V * (-dt * dt / ((2 * k - 1) * (2 * k)))
        C += term
        term_s = term_s @ V * (-dt * dt / ((2 * k) * (2 * k + 1)))
        S += term_s
    return C, S


def build_propagator(pot: InteractionPotential, N: int, dt: float) -> Propagator:
    """Spectral propagator on the periodic truncation with N sites."""
    if N < 2:
        raise ValueError(f"need at least 2 sites, got {N}")
    if dt < 0:
        raise ValueError(f"time step must be nonnegative, got {dt}")
    k = np.arange(N // 2 + 1)
    om_sq = pot.omega_sq(2.0 * np.pi * k / N)
    om = np.sqrt(om_sq)
    return Propagator(pot=pot, N=N, dt=float(dt), omega_k=om,
                      cos_k=np.cos(dt * om), sinc_k=_sin_over_omega(dt, om))


def noise_basis(prop: Propagator, K: int = DEFAULT_SUBSTEPS):
    """Sub-step kernels for the in-step stochastic convolution.

    Midpoint evaluation makes the mean energy injection rate exact for every
    K (the squared sine and cosine columns sum to one per mode); K controls
    the bias of higher moments.
    """
    delta = prop.dt / K
    Wq = np.empty((K, prop.N))
    Wp = np.empty((K, prop.N))
    for j in range(K):
        u = prop.dt - (j + 0.5) * delta
        Wq[j], Wp[j] = prop.driven_columns(u)
    return Wq, Wp


def step_exact(state: ChainState, prop: Propagator, rng: np.random.Generator,
               K: int = DEFAULT_SUBSTEPS, basis=None) -> ChainState:
    """One exact-flow step plus the sub-step-refined noise increment."""
    q, p = prop.apply(state.q, state.p)
    sigma = prop.pot.sigma
    if sigma > 0:
        if basis is None:
            basis = noise_basis(prop, K)
        Wq, Wp = basis
        dw = rng.standard_normal(K) * math.sqrt(prop.dt / K)
        q = q + sigma * (dw @ Wq)
        p = p + sigma * (dw @ Wp)
    return ChainState(N=state.N, q=q, p=p, t=state.t + prop.dt)


def increment_covariance(prop: Propagator, n_quad: int = 64) -> np.ndarray:
    """Exact covariance of the one-step stochastic increment on (q, p).

    sigma^2 Int_0^dt phi(u) phi(u)^T du with phi(u) the driven columns of
    the flow, by Gauss-Legendre quadrature in u.
    """
    nodes, w = panel_nodes(0.0, prop.dt, max(4, n_quad // 16), 16)
    phi = np.empty((len(nodes), 2 * prop.N))
    for i, u in enumerate(nodes):
        s_col, c_col = prop.driven_columns(u)
        phi[i, :prop.N] = s_col
        phi[i, prop.N:] = c_col
    return prop.pot.sigma ** 2 * (phi * w[:, None]).T @ phi


def substep_covariance(prop: Propagator, K: int = DEFAULT_SUBSTEPS) -> np.ndarray:
    """Covariance realized by the K-sub-step sampling scheme."""
    Wq, Wp = noise_basis(prop, K)
    phi = np.hstack([Wq, Wp])
    return prop.pot.sigma ** 2 * (prop.dt / K) * phi.T @ phi


@dataclass(frozen=True)
class MCEnsemble:
    """Replica bookkeeping: counter-based per-replica streams from one master seed."""

    replicas: int
    seed: int

    def generator(self, index: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(index,))
        return np.random.Generator(np.random.Philox(ss))


@dataclass(eq=False)
class EnergyReport:
    """Ensemble estimates over an output time grid, with standard errors."""

    times: np.ndarray
    replicas: int
    entries: dict = field(default_factory=dict)   # (estimator, site|None) -> (mean, stderr)
    provenance: dict = field(default_factory=dict)

    def add(self, name: str, site, mean: np.ndarray, stderr: np.ndarray):
        self.entries[(name, site)] = (np.asarray(mean, float), np.asarray(stderr, float))

    def get(self, name: str, site=None):
        return self.entries[(name, site)]

    def rows(self):
        for (name, site), (mean, se) in self.entries.items():
            for i, t in enumerate(self.times):
                yield (float(t), name, site, float(mean[i]), float(se[i]), self.replicas)


def _mean_se(samples: np.ndarray):
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(samples.shape[0])
    return mean, se


def _variance_se(samples: np.ndarray):
    """Sample variance with a fourth-moment standard error, per column."""
    R = samples.shape[0]
    var = samples.var(axis=0, ddof=1)
    centered = samples - samples.mean(axis=0)
    m4 = (centered ** 4).mean(axis=0)
    se = np.sqrt(np.maximum(m4 - var ** 2 * (R - 3) / (R - 1), 0.0) / R)
    return var, se


def _chunk_ranges(total: int, size: int):
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def _run_chunks(fn, ranges, threads: int):
    if threads <= 1:
        for rng_pair in ranges:
            fn(rng_pair)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fn, ranges))


def _snap_steps(times, dt: float):
    steps = []
    for t in np.atleast_1d(times):
        m = round(float(t) / dt)
        if abs(m * dt - t) > 1e-9 * max(1.0, abs(t)) or m < 1:
            raise ValueError(f"output time {t} is not a positive multiple of dt = {dt}")
        steps.append(m)
    return steps


def required_sites(pot: InteractionPotential, t_max: float, margin: int = 0) -> int:
    """Smallest odd truncation keeping the wavefront off the boundary until t_max."""
    vg = analyze_dispersion(pot).group_velocity_max
    n = int(math.floor(2.0 * (vg * t_max + pot.r))) + 1 + 2 * margin
    return n if n % 2 == 1 else n + 1


def simulate_chain(pot: InteractionPotential, init: InitialData, N: int, dt: float,
                   t_max: float, replicas: int, seed: int, *, out_times=None,
                   sites=(0,), K: int = DEFAULT_SUBSTEPS, threads: int = 1,
                   chunk: int = 256) -> EnergyReport:
    """Ensemble of truncated-chain paths with energy estimators.

    Refuses horizons where the wavefront would wrap around the periodic
    boundary before t_max.
    """
    if N % 2 == 0:
        raise ValueError(f"truncation size must be odd, got {N}")
    disp = analyze_dispersion(pot)
    vg = disp.group_velocity_max
    if vg > 0 and t_max >= (N / 2 - pot.r) / vg:
        need = required_sites(pot, t_max, margin=1)
        raise HorizonError(
            f"t_max = {t_max} reaches the boundary of N = {N} sites "
            f"(group velocity {vg:.4f}); need at least N = {need}", need)

    if out_times is None:
        out_times = [t_max]
    out_times = np.atleast_1d(np.asarray(out_times, dtype=float))
    out_steps = _snap_steps(out_times, dt)
    n_steps = max(out_steps)
    step_lookup = {s: i for i, s in enumerate(out_steps)}

    prop = build_propagator(pot, N, dt)
    basis = noise_basis(prop, K) if pot.sigma > 0 else None
    sqrt_delta = math.sqrt(dt / K)
    state0 = ChainState.from_initial_data(init, N)
    sites = [int(s) for s in sites]
    site_idx = np.array([s % N for s in sites], dtype=int)
    a_full = pot.coefficients_full()
    offsets = np.arange(-pot.r, pot.r + 1)
    gather = (site_idx[:, None] - offsets[None, :]) % N   # columns feeding (Vq)_n

    om_sq_k = prop.omega_k ** 2
    par_w = np.full(N // 2 + 1, 2.0)
    par_w[0] = 1.0
    if N % 2 == 0:
        par_w[-1] = 1.0

    n_out = len(out_times)
    ens = MCEnsemble(replicas, seed)
    samples = {name: np.empty((replicas, n_out)) for name in ("H", "T", "U")}
    for s in sites:
        for name in ("Tn", "Un", "Pn"):
            samples[(name, s)] = np.empty((replicas, n_out))

    def run_range(bounds):
        lo, hi = bounds
        rc = hi - lo
        noise = None
        if pot.sigma > 0:
            noise = np.stack([ens.generator(i).standard_normal((n_steps, K))
                              for i in range(lo, hi)]) * sqrt_delta
        Q = np.tile(state0.q, (rc, 1))
        P = np.tile(state0.p, (rc, 1))
        for step in range(n_steps):
            Q, P = prop.apply(Q, P)
            if noise is not None:
                dw = noise[:, step, :]
                Q += pot.sigma * (dw @ basis[0])
                P += pot.sigma * (dw @ basis[1])
            out_i = step_lookup.get(step + 1)
            if out_i is None:
                continue
            T = 0.5 * np.einsum("rn,rn->r", P, P)
            qh = np.fft.rfft(Q, axis=-1)
            U = (0.5 / N) * ((np.abs(qh) ** 2 * om_sq_k) @ par_w)
            samples["T"][lo:hi, out_i] = T
            samples["U"][lo:hi, out_i] = U
            samples["H"][lo:hi, out_i] = T + U
            vq = Q[:, gather] @ a_full
            for j, s in enumerate(sites):
                samples[("Pn", s)][lo:hi, out_i] = P[:, site_idx[j]]
                samples[("Tn", s)][lo:hi, out_i] = 0.5 * P[:, site_idx[j]] ** 2
                samples[("Un", s)][lo:hi, out_i] = 0.5 * Q[:, site_idx[j]] * vq[:, j]

    _run_chunks(run_range, _chunk_ranges(replicas, chunk), threads)

    report = EnergyReport(times=out_times, replicas=replicas, provenance={
        "engine": "chain", "N": N, "dt": dt, "t_max": float(t_max),
        "replicas": replicas, "seed": seed, "substeps": K, "sigma": pot.sigma,
    })
    for name in ("H", "T", "U"):
        report.add(name, None, *_mean_se(samples[name]))
    report.add("VarH", None, *_variance_se(samples["H"]))
    for s in sites:
        report.add("Tn", s, *_mean_se(samples[("Tn", s)]))
        report.add("Un", s, *_mean_se(samples[("Un", s)]))
        report.add("VarPn", s, *_variance_se(samples[("Pn", s)]))
    return report


def simulate_kernel_mc(pot: InteractionPotential, init: InitialData, sites, t_grid,
                       replicas: int, seed: int, dt_noise: float, *, window: int | None = None,
                       threads: int = 1, chunk: int = 256, tol: float = DEFAULT_TOL,
                       check_resolution: bool = True) -> EnergyReport:
    """Truncation-free sampler: paths as discretized Ito convolutions.

    One Brownian increment stream per replica is shared across all sites and
    times, so cross correlations come out right.  Kernels are evaluated at
    sub-interval midpoints, which keeps the discrete second moments within
    O(dt_noise^2) of the time integrals.  With `window` set, globally summed
    energies over |n| <= window are emitted as well.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    steps = _snap_steps(t_grid, dt_noise)
    M = max(steps)
    n_out = len(t_grid)
    sites = [int(s) for s in sites]

    out_accessed = set(sites)
    for n in sites:
        out_accessed.update(range(n - pot.r, n + pot.r + 1))
    if window is not None:
        out_accessed.update(range(-window - pot.r, window + pot.r + 1))
    signed = sorted(out_accessed)
    abs_needed = sorted({abs(s) for s in signed})
    col = {s: i for i, s in enumerate(abs_needed)}

    tau = (np.arange(M) + 0.5) * dt_noise
    table = build_kernel_table(pot, abs_needed, tau, tol=tol)
    X, Y = table.x, table.y

    # deterministic part per signed site and output time
    hom_q = np.zeros((len(signed), n_out))
    hom_p = np.zeros_like(hom_q)
    if not init.is_zero:
        for i_s, s in enumerate(signed):
            for i_t, t in enumerate(t_grid):
                hom_q[i_s, i_t], hom_p[i_s, i_t] = homogeneous_solution(pot, init, s, t, tol=tol)
    sig_row = {s: i for i, s in enumerate(signed)}

    x_rev = [X[m - 1::-1, :] for m in steps]
    y_rev = [Y[m - 1::-1, :] for m in steps]

    a_full = pot.coefficients_full()
    offsets = np.arange(-pot.r, pot.r + 1)
    sqrt_dt = math.sqrt(dt_noise)
    ens = MCEnsemble(replicas, seed)

    samples = {}
    for s in sites:
        for name in ("Tn", "Un", "Pn", "Qn"):
            samples[(name, s)] = np.empty((replicas, n_out))
    if window is not None:
        for name in ("H", "T", "U"):
            samples[name] = np.empty((replicas, n_out))

    def signed_values(stoch_abs, kind_hom, i_t):
        """Map abs-site stochastic values to a signed-site dict of (rc,) arrays."""
        return {s: stoch_abs[:, col[abs(s)]] + kind_hom[sig_row[s], i_t] for s in signed}

    def run_range(bounds):
        lo, hi = bounds
        dw = np.stack([ens.generator(i).standard_normal(M) for i in range(lo, hi)]) * sqrt_dt
        for i_t, m in enumerate(steps):
            q_st = dw[:, :m] @ x_rev[i_t]
            p_st = dw[:, :m] @ y_rev[i_t]
            qv = signed_values(q_st, hom_q, i_t)
            pv = signed_values(p_st, hom_p, i_t)
            for s in sites:
                vq = sum(a_full[d + pot.r] * qv[s - d] for d in offsets)
                samples[("Qn", s)][lo:hi, i_t] = qv[s]
                samples[("Pn", s)][lo:hi, i_t] = pv[s]
                samples[("Tn", s)][lo:hi, i_t] = 0.5 * pv[s] ** 2
                samples[("Un", s)][lo:hi, i_t] = 0.5 * qv[s] * vq
            if window is not None:
                T = np.zeros(hi - lo)
                U = np.zeros(hi - lo)
                for n in range(-window, window + 1):
                    T += 0.5 * pv[n] ** 2
                    vq = sum(a_full[d + pot.r] * qv[n - d] for d in offsets)
                    U += 0.5 * qv[n] * vq
                samples["T"][lo:hi, i_t] = T
                samples["U"][lo:hi, i_t] = U
                samples["H"][lo:hi, i_t] = T + U

    _run_chunks(run_range, _chunk_ranges(replicas, chunk), threads)

    report = EnergyReport(times=t_grid, replicas=replicas, provenance={
        "engine": "kernel", "dt_noise": dt_noise, "window": window,
        "replicas": replicas, "seed": seed, "sigma": pot.sigma,
    })
    if window is not None:
        for name in ("H", "T", "U"):
            report.add(name, None, *_mean_se(samples[name]))
        report.add("VarH", None, *_variance_se(samples["H"]))
    for s in sites:
        report.add("Tn", s, *_mean_se(samples[("Tn", s)]))
        report.add("Un", s, *_mean_se(samples[("Un", s)]))
        report.add("Qn", s, *_mean_se(samples[("Qn", s)]))
        report.add("VarPn", s, *_variance_se(samples[("Pn", s)]))

    if check_resolution and replicas > 1:
        # deterministic bias probe: discrete second moments at dt vs dt/2
        tau_f = (np.arange(2 * M) + 0.5) * (dt_noise / 2.0)
        Yf = build_kernel_table(pot, abs_needed, tau_f, tol=tol).y
        worst = 0.0
        for i_t, m in enumerate(steps):
            for s in sites:
                coarse = dt_noise * float(np.sum(Y[:m, col[abs(s)]] ** 2))
                fine = 0.5 * dt_noise * float(np.sum(Yf[:2 * m, col[abs(s)]] ** 2))
                se = max(coarse * math.sqrt(2.0 / max(replicas - 1, 1)), 1e-300)
                worst = max(worst, abs(fine - coarse) / se)
        report.provenance["resolution_shift_over_se"] = worst
        report.provenance["resolution_ok"] = bool(worst < 1.0)
    return report


@dataclass(frozen=True, eq=False)
class LightConeReport:
    """Factorial off-diagonal bound checked against the truncated flow blocks."""

    checked: int
    violations: list
    max_ratio: float
    passed: bool


def verify_light_cone(pot: InteractionPotential, N: int, t_list, *, distances=None,
                      atol_floor: float = 1e-12) -> LightConeReport:
    """Check the off-diagonal decay bound of the flow blocks.

    |C_d(t)| <= v^rho t^{2 rho} / (2 rho)! * e^{sqrt(v) t} with
    rho = ceil(d / r) and v the spectral norm; the sine block carries one
    extra power of t.  Entries below the round-off floor are accepted
    outright: the dense blocks come from length-N transforms and carry
    O(N eps) noise.
    """
    v = pot.spectral_norm
    sqrt_v = math.sqrt(v)
    if distances is None:
        distances = range(0, N // 2 + 1)
    distances = [int(d) for d in distances]
    violations = []
    max_ratio = 0.0
    checked = 0
    for t in np.atleast_1d(np.asarray(t_list, dtype=float)):
        prop = build_propagator(pot, N, float(t))
        c_col = np.fft.irfft(prop.cos_k, n=N)
        s_col = np.fft.irfft(prop.sinc_k, n=N)
        for d in distances:
            rho = -(-d // pot.r)
            if t > 0:
                log_c = rho * math.log(v) + 2 * rho * math.log(t) - gammaln(2 * rho + 1) + sqrt_v * t
                log_s = log_c + math.log(t) - math.log(2 * rho + 1)
                bound_c = math.exp(min(log_c, 700.0))
                bound_s = math.exp(min(log_s, 700.0))
            else:
                bound_c = 1.0 if rho == 0 else 0.0
                bound_s = 0.0
            for val, bound, label in ((abs(c_col[d]), bound_c, "C"), (abs(s_col[d]), bound_s, "S")):
                checked += 1
                if bound > atol_floor:
                    max_ratio = max(max_ratio, val / bound)
                if val > bound * (1.0 + 1e-9) + atol_floor:
                    violations.append((float(t), d, label, val, bound))
    return LightConeReport(checked=checked, violations=violations,
                           max_ratio=max_ratio, passed=not violations)
