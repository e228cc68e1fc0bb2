"""End-to-end orchestration: ingest a JSON config, run the analyses, emit reports.

Subcommands: dispersion, dn, kernels, theory, simulate, verify.  Every report
path writes delimited output and a rendered figure next to it.  Exit codes:
0 all checks pass, 1 a check failed, 2 configuration error, 3 numerical
(quadrature) error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import plotting
from .kernels import (
    InitialData,
    build_kernel_table,
    kernel_decay_check,
    stationary_phase_y,
)
from .potential import (
    AssumptionError,
    InteractionPotential,
    PotentialError,
    analyze_dispersion,
    potential_energy,
    potential_from_config,
)
from .quadrature import QuadratureError
from .simulate import (
    ChainState,
    HorizonError,
    build_propagator,
    chain_energy,
    required_sites,
    series_blocks,
    simulate_chain,
    simulate_kernel_mc,
    verify_light_cone,
)
from .theory import (
    predict_energy_variance,
    predict_global_energy,
    predict_local_kinetic,
    predict_local_potential,
    verify_Dn_equals_dn,
)

SCHEMA_VERSION = 1
THREADS_ENV = "DRIVENCHAIN_THREADS"

E3 = float(np.exp(3.0))
E7 = float(np.exp(7.0))

DEFAULT_CONFIG = {
    "schema_version": SCHEMA_VERSION,
    "potential": {"nearest_neighbor": {"omega0_sq": 1.0, "omega1_sq": 1.0}, "sigma": 1.0},
    "initial": {"q": {}, "p": {}},
    "seed": 20260809,
    "threads": None,
    "out_dir": "reports",
    "chain": {"n_sites": 513, "dt": 0.1, "t_max": 50.0, "replicas": 2000,
              "out_times": [10.0, 25.0, 50.0], "sites": [0, 1, 3], "substeps": 8},
    "kernel": {"dt_noise": 0.05, "replicas": 2000, "t_grid": [10.0, 25.0, 50.0],
               "window": 48, "sites": [0, 1, 3]},
    "isometry": {"dt_noise": 0.05, "replicas": 2000, "t_grid": [10.0, 50.0, 200.0],
                 "sites": [0, 1, 3]},
    "variance_times": [50.0, 100.0, 200.0, 400.0],
    "slope_fit": {"t_lo": E3, "t_hi": E7, "points": 25, "rel_tol": 0.15, "pair_tol": 0.05},
    "stationary_phase": {"sites": [0, 1, 2], "t_lo": 50.0, "t_hi": 400.0,
                         "cal_hi": 100.0, "points": 351, "margin": 1.25},
    "decay": {"t_lo": 10.0, "t_hi": 1000.0, "points": 160, "target": -0.5, "tol": 0.05},
    "series_check": {"n_sites": 64, "dt": 0.1, "terms": 40, "tol": 1e-12},
    "light_cone": {"times": [0.5, 1.0, 2.0, 4.0, 8.0]},
    "conservation": {"n_steps": 10000, "dt": 0.05, "tol": 1e-10},
    "positivity": {"count": 1000, "max_len": 64, "seed": 1234, "tol": 1e-12},
    "identity": {"n_lo": -8, "n_hi": 8, "tol": 1e-10},
    "ic_check": {"q": {"0": 1.0}, "p": {}},
    "tolerance_overrides": {},
}


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


def _merge(base, override):
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def bundled_config_path(name: str = "nn_pinned") -> Path:
    """Path of a config shipped with the package."""
    ref = resources.files("drivenchain").joinpath(f"configs/{name}.json")
    with resources.as_file(ref) as p:
        return Path(p)


@dataclass
class RunConfig:
    """Parsed run configuration with desk-scale defaults filled in."""

    raw: dict
    potential: InteractionPotential
    init: InitialData
    seed: int
    threads: int
    out_dir: Path

    @classmethod
    def from_dict(cls, data: dict, *, threads: int | None = None,
                  seed: int | None = None, out_dir=None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        raw = _merge(DEFAULT_CONFIG, data)
        try:
            pot = potential_from_config(raw["potential"])
            init = InitialData.from_windows(raw["initial"].get("q"), raw["initial"].get("p"))
        except (PotentialError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad potential/initial section: {exc}") from exc
        if threads is None:
            threads = raw.get("threads")
        if threads is None:
            threads = int(os.environ.get(THREADS_ENV, "1"))
        cfg = cls(
            raw=raw,
            potential=pot,
            init=init,
            seed=int(seed if seed is not None else raw["seed"]),
            threads=max(1, int(threads)),
            out_dir=Path(out_dir if out_dir is not None else raw["out_dir"]),
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, **kw) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            bundled = Path(str(bundled_config_path(path.stem))) if path.suffix == ".json" else None
            if bundled is not None and bundled.exists():
                path = bundled
            else:
                raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data, **kw)

    def section(self, name: str) -> dict:
        return self.raw[name]

    def tolerance(self, check: str, default: float) -> float:
        return float(self.raw["tolerance_overrides"].get(check, default))

    def validate(self):
        chain = self.section("chain")
        if chain["n_sites"] % 2 == 0:
            raise ConfigError("chain.n_sites must be odd (driven site at the center)")
        for key in ("dt", "t_max"):
            if chain[key] <= 0:
                raise ConfigError(f"chain.{key} must be positive")
        for name, grid in (("chain.out_times", chain["out_times"]),
                           ("kernel.t_grid", self.section("kernel")["t_grid"]),
                           ("isometry.t_grid", self.section("isometry")["t_grid"]),
                           ("variance_times", self.raw["variance_times"])):
            arr = np.asarray(grid, dtype=float)
            if arr.size == 0 or np.any(np.diff(arr) <= 0) or arr[0] <= 0:
                raise ConfigError(f"{name} must be a strictly increasing positive grid")
        for check, tol in self.raw["tolerance_overrides"].items():
            if float(tol) <= 0:
                raise ConfigError(f"tolerance override for '{check}' must be positive")
        # horizon rule, checked before any simulation starts
        need = required_sites(self.potential, chain["t_max"])
        if chain["n_sites"] < need:
            raise ConfigError(
                f"chain.t_max = {chain['t_max']} violates the horizon rule for "
                f"N = {chain['n_sites']}; need at least N = {need}")


@dataclass
class CheckResult:
    name: str
    status: str                 # pass | fail | skip
    measured: float | None = None
    target: float | None = None
    tolerance: float | None = None
    detail: str = ""


@dataclass
class VerificationSummary:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    def add(self, name, measured, target, tolerance, ok, detail=""):
        status = "pass" if ok else "fail"
        self.checks.append(CheckResult(name, status,
                                       None if measured is None else float(measured),
                                       None if target is None else float(target),
                                       None if tolerance is None else float(tolerance),
                                       detail))

    def skip(self, name, reason):
        self.checks.append(CheckResult(name, "skip", detail=reason))

    def get(self, name) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "passed": self.passed,
                "checks": [asdict(c) for c in self.checks]}


def emit_report(summary: VerificationSummary, out_dir, formats=("json", "csv")) -> list:
    """Serialize the summary deterministically; stable field order, no timestamps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if "json" in formats:
        path = out_dir / "verify_summary.json"
        with open(path, "w") as fh:
            json.dump(summary.to_dict(), fh, indent=2)
            fh.write("\n")
        paths.append(path)
    if "csv" in formats:
        path = out_dir / "verify_summary.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "status", "measured", "target", "tolerance", "detail"])
            for c in summary.checks:
                writer.writerow([c.name, c.status,
                                 "" if c.measured is None else repr(c.measured),
                                 "" if c.target is None else repr(c.target),
                                 "" if c.tolerance is None else repr(c.tolerance),
                                 c.detail])
        paths.append(path)
    return paths


def read_summary(path) -> VerificationSummary:
    with open(path) as fh:
        data = json.load(fh)
    summary = VerificationSummary()
    for c in data["checks"]:
        summary.checks.append(CheckResult(**c))
    return summary


def write_report_csv(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "estimator", "site", "mean", "stderr", "replicas"])
        for t, name, site, mean, se, reps in report.rows():
            writer.writerow([repr(t), name, "" if site is None else site,
                             repr(mean), repr(se), reps])
    return path


def write_kernel_csv(table, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "n", "x", "y", "h", "f"])
        for i, t in enumerate(table.times):
            for j, s in enumerate(table.sites):
                writer.writerow([repr(float(t)), s, repr(float(table.x[i, j])),
                                 repr(float(table.y[i, j])), repr(float(table.h[i])),
                                 "" if table.f is None else repr(float(table.f[i]))])
    return path


@contextlib.contextmanager
def _stage(name: str, verbose: bool = True):
    if verbose:
        print(f"[verify] {name} ...", flush=True)
    try:
        yield
    except Exception as exc:
        print(f"[verify] stage '{name}' failed: {exc}", file=sys.stderr, flush=True)
        raise


def _max_dev_over_se(mean, se, target):
    se = np.maximum(np.asarray(se, float), 1e-300)
    return float(np.max(np.abs(np.asarray(mean) - np.asarray(target)) / se))


def run_verify(config: RunConfig, *, out_dir=None, verbose: bool = True,
               figures: bool = True) -> VerificationSummary:
    """Run the full pipeline and grade every claim-backed check.

    Writes CSV artifacts (and figures) under out_dir when given.  Skipped
    checks name the violated assumption and never count as failures.
    """
    pot = config.potential
    init = config.init
    out = Path(out_dir) if out_dir is not None else config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    summary = VerificationSummary()
    sig2 = pot.sigma ** 2

    with _stage("dispersion analysis", verbose):
        disp = analyze_dispersion(pot)
        _write_dispersion(disp, out, figures)
    gate = disp.assumptions_hold
    gate_reason = "; ".join(disp.failed_assumptions())

    chain_cfg = config.section("chain")
    out_times = np.asarray(chain_cfg["out_times"], dtype=float)

    with _stage("global theory quadratures", verbose):
        var_times = np.asarray(config.raw["variance_times"], dtype=float)
        glob = predict_global_energy(pot, init, out_times)
        var_theory = predict_energy_variance(pot, np.unique(np.concatenate([out_times, var_times])))
        var_at = dict(zip(np.unique(np.concatenate([out_times, var_times])), np.atleast_1d(var_theory)))
        ratios = [var_at[t] / t**2 for t in var_times]
        worst = max(ratios[i + 1] / ratios[i] for i in range(len(ratios) - 1))
        summary.add("variance-subquadratic", worst, 0.0, config.tolerance("variance-subquadratic", 1.0),
                    worst < 1.0, detail=f"Var(H)/t^2 at t = {[float(v) for v in var_times]}")
        _write_global_theory(pot, init, chain_cfg["t_max"], out, figures)

    with _stage("local growth slopes", verbose):
        fit = config.section("slope_fit")
        t_fit = np.geomspace(fit["t_lo"], fit["t_hi"], fit["points"])
        if gate:
            kin = predict_local_kinetic(pot, init, 0, t_fit, fit_window=(fit["t_lo"], fit["t_hi"]), disp=disp)
            pot_pred = predict_local_potential(pot, init, 0, t_fit, fit_window=(fit["t_lo"], fit["t_hi"]), disp=disp)
            d0 = kin.dn
            rel_t = abs(kin.fitted_slope_kinetic / d0 - 1.0)
            rel_u = abs(pot_pred.fitted_slope_potential / d0 - 1.0)
            pair = abs(kin.fitted_slope_kinetic - pot_pred.fitted_slope_potential) / (
                0.5 * (kin.fitted_slope_kinetic + pot_pred.fitted_slope_potential))
            tol_rel = config.tolerance("kinetic-log-slope", fit["rel_tol"])
            summary.add("kinetic-log-slope", rel_t, 0.0, tol_rel, rel_t <= tol_rel,
                        detail=f"slope {kin.fitted_slope_kinetic:.6f} vs d_0 {d0:.6f}")
            tol_rel_u = config.tolerance("potential-log-slope", fit["rel_tol"])
            summary.add("potential-log-slope", rel_u, 0.0, tol_rel_u, rel_u <= tol_rel_u,
                        detail=f"slope {pot_pred.fitted_slope_potential:.6f} vs d_0 {d0:.6f}")
            tol_pair = config.tolerance("local-equipartition", fit["pair_tol"])
            summary.add("local-equipartition", pair, 0.0, tol_pair, pair <= tol_pair)
            _write_local_theory([kin, pot_pred], out, figures)
        else:
            for name in ("kinetic-log-slope", "potential-log-slope", "local-equipartition"):
                summary.skip(name, f"assumptions unmet: {gate_reason}")

    with _stage("growth constant identity", verbose):
        ident = config.section("identity")
        if gate:
            rep = verify_Dn_equals_dn(disp, pot.sigma, range(ident["n_lo"], ident["n_hi"] + 1))
            tol = config.tolerance("growth-constant-identity", ident["tol"])
            summary.add("growth-constant-identity", rep.max_abs_diff, 0.0, tol,
                        rep.max_abs_diff <= tol)
            _write_dn(rep, out)
        else:
            summary.skip("growth-constant-identity", f"assumptions unmet: {gate_reason}")

    with _stage("stationary phase accuracy", verbose):
        sp = config.section("stationary_phase")
        if gate:
            t_sp = np.linspace(sp["t_lo"], sp["t_hi"], sp["points"])
            table = build_kernel_table(pot, sp["sites"], t_sp)
            worst = 0.0
            for j, n in enumerate(sp["sites"]):
                err = t_sp * np.abs(table.y[:, j] - stationary_phase_y(disp, pot.sigma, n, t_sp))
                cal = float(np.max(err[t_sp <= sp["cal_hi"]]))
                worst = max(worst, float(np.max(err)) / max(cal, 1e-300))
            margin = config.tolerance("stationary-phase-bound", sp["margin"])
            summary.add("stationary-phase-bound", worst, 1.0, margin, worst <= margin,
                        detail=f"max t*err over [{sp['t_lo']}, {sp['t_hi']}] vs calibration below {sp['cal_hi']}")
        else:
            summary.skip("stationary-phase-bound", f"assumptions unmet: {gate_reason}")

    with _stage("oscillatory decay fit", verbose):
        dc_cfg = config.section("decay")
        decay = kernel_decay_check(pot, np.geomspace(dc_cfg["t_lo"], dc_cfg["t_hi"], dc_cfg["points"]))
        if decay.flat:
            summary.skip("decay-slope", "constant frequency: every point critical, no decay expected")
        elif not gate:
            summary.skip("decay-slope", f"assumptions unmet: {gate_reason} (measured slope {decay.slope:.3f})")
        else:
            tol = config.tolerance("decay-slope", dc_cfg["tol"])
            err = abs(decay.slope - dc_cfg["target"])
            summary.add("decay-slope", decay.slope, dc_cfg["target"], tol, err <= tol)

    with _stage("propagator series oracle", verbose):
        sc = config.section("series_check")
        prop = build_propagator(pot, sc["n_sites"], sc["dt"])
        C_spectral, S_spectral = prop.dense_blocks()
        C_series, S_series = series_blocks(pot, sc["n_sites"], sc["dt"], terms=sc["terms"])
        diff = max(float(np.max(np.abs(C_spectral - C_series))),
                   float(np.max(np.abs(S_spectral - S_series))))
        tol = config.tolerance("propagator-series", sc["tol"])
        summary.add("propagator-series", diff, 0.0, tol, diff <= tol,
                    detail=f"N = {sc['n_sites']}, dt = {sc['dt']}, {sc['terms']} terms")

    with _stage("light cone bound", verbose):
        lc = verify_light_cone(pot, chain_cfg["n_sites"], config.section("light_cone")["times"])
        summary.add("light-cone-bound", len(lc.violations), 0.0,
                    config.tolerance("light-cone-bound", 0.5), lc.passed,
                    detail=f"{lc.checked} entries, max ratio {lc.max_ratio:.3e}")

    with _stage("conservation and positivity", verbose):
        cons = config.section("conservation")
        drift = _conservation_drift(pot, cons["n_steps"], cons["dt"], chain_cfg["n_sites"])
        tol = config.tolerance("conservation", cons["tol"])
        summary.add("conservation", drift, 0.0, tol, drift <= tol,
                    detail=f"{cons['n_steps']} steps of dt = {cons['dt']} at sigma = 0")
        posv = config.section("positivity")
        worst_ratio = _positivity_floor(pot, posv["count"], posv["max_len"], posv["seed"])
        tol = config.tolerance("positivity", posv["tol"])
        summary.add("positivity", worst_ratio, 0.0, tol, worst_ratio >= -tol,
                    detail=f"min U/|q|^2 over {posv['count']} random windows")

    with _stage(f"chain Monte Carlo (R = {chain_cfg['replicas']})", verbose):
        chain_rep = simulate_chain(
            pot, init, chain_cfg["n_sites"], chain_cfg["dt"], chain_cfg["t_max"],
            chain_cfg["replicas"], config.seed, out_times=out_times,
            sites=chain_cfg["sites"], K=chain_cfg["substeps"], threads=config.threads)
        write_report_csv(chain_rep, out / "simulate_chain.csv")
        if figures:
            plotting.save_simulation_figure(chain_rep, out / "simulate_chain.png", theory=glob)

        mean_h, se_h = chain_rep.get("H")
        dev = _max_dev_over_se(mean_h, se_h, 0.5 * sig2 * out_times + glob.H0)
        tol = config.tolerance("mean-energy-growth", 3.0)
        summary.add("mean-energy-growth", dev, 0.0, tol, dev <= tol,
                    detail=f"H0 = {glob.H0}, t = {[float(v) for v in out_times]}")

        mean_t, se_t = chain_rep.get("T")
        mean_u, _ = chain_rep.get("U")
        i_last = len(out_times) - 1
        eq = abs(mean_t[i_last] - mean_u[i_last]) / mean_h[i_last]
        tol = config.tolerance("global-equipartition", 0.05)
        summary.add("global-equipartition", eq, 0.0, tol, eq <= tol,
                    detail=f"at t = {float(out_times[i_last])}")
        dev = abs(mean_t[i_last] - glob.ET[i_last]) / se_t[i_last]
        tol = config.tolerance("kinetic-mean-vs-quadrature", 3.0)
        summary.add("kinetic-mean-vs-quadrature", dev, 0.0, tol, dev <= tol,
                    detail=f"theory ET({out_times[i_last]}) = {glob.ET[i_last]:.4f}")

        var_mc, var_se = chain_rep.get("VarH")
        dev = _max_dev_over_se(var_mc, var_se, [var_at[t] for t in out_times])
        tol = config.tolerance("variance-vs-quadrature", 4.0)
        summary.add("variance-vs-quadrature", dev, 0.0, tol, dev <= tol)

    with _stage("chain Monte Carlo with initial excitation", verbose):
        ic_init = InitialData.from_windows(config.raw["ic_check"].get("q"),
                                           config.raw["ic_check"].get("p"))
        h0_ic = 0.5 * float(np.dot(ic_init.p, ic_init.p)) + potential_energy(pot, ic_init.dense_q()[0])
        ic_rep = simulate_chain(
            pot, ic_init, chain_cfg["n_sites"], chain_cfg["dt"], chain_cfg["t_max"],
            chain_cfg["replicas"], config.seed + 1, out_times=out_times,
            sites=[0], K=chain_cfg["substeps"], threads=config.threads)
        write_report_csv(ic_rep, out / "simulate_chain_ic.csv")
        mean_h, se_h = ic_rep.get("H")
        dev = _max_dev_over_se(mean_h, se_h, 0.5 * sig2 * out_times + h0_ic)
        tol = config.tolerance("mean-energy-growth-with-ic", 3.0)
        summary.add("mean-energy-growth-with-ic", dev, 0.0, tol, dev <= tol,
                    detail=f"H0 = {h0_ic}")

    with _stage("kernel Monte Carlo (cross-engine)", verbose):
        ker_cfg = config.section("kernel")
        ker_rep = simulate_kernel_mc(
            pot, init, ker_cfg["sites"], ker_cfg["t_grid"], ker_cfg["replicas"],
            config.seed + 2, ker_cfg["dt_noise"], window=ker_cfg["window"],
            threads=config.threads)
        write_report_csv(ker_rep, out / "simulate_kernel.csv")
        if figures:
            plotting.save_simulation_figure(ker_rep, out / "simulate_kernel.png")
        for name, key, site in (("cross-engine-kinetic", "Tn", 0),
                                ("cross-engine-potential", "Un", 0),
                                ("cross-engine-total", "H", None)):
            a_mean, a_se = chain_rep.get(key, site)
            b_mean, b_se = ker_rep.get(key, site)
            joint = np.sqrt(np.asarray(a_se) ** 2 + np.asarray(b_se) ** 2)
            dev = float(np.max(np.abs(a_mean - b_mean) / np.maximum(joint, 1e-300)))
            tol = config.tolerance(name, 3.0)
            summary.add(name, dev, 0.0, tol, dev <= tol)

    with _stage("kernel Monte Carlo (isometry)", verbose):
        iso_cfg = config.section("isometry")
        iso_rep = simulate_kernel_mc(
            pot, InitialData.zero(), iso_cfg["sites"], iso_cfg["t_grid"], iso_cfg["replicas"],
            config.seed + 3, iso_cfg["dt_noise"], window=None, threads=config.threads)
        write_report_csv(iso_rep, out / "simulate_isometry.csv")
        dev = 0.0
        t_iso = np.asarray(iso_cfg["t_grid"], dtype=float)
        for n in iso_cfg["sites"]:
            target = _velocity_isometry(pot, n, t_iso)
            var_mc, var_se = iso_rep.get("VarPn", n)
            dev = max(dev, _max_dev_over_se(var_mc, var_se, target))
        tol = config.tolerance("ito-isometry", 3.0)
        summary.add("ito-isometry", dev, 0.0, tol, dev <= tol,
                    detail=f"sites {iso_cfg['sites']}, t = {iso_cfg['t_grid']}")

    emit_report(summary, out)
    if figures:
        plotting.save_verification_figure(summary, out / "verify_summary.png")
    if verbose:
        for c in summary.checks:
            print(f"[verify] {c.name:32s} {c.status.upper():5s} "
                  f"measured={c.measured} target={c.target} tol={c.tolerance} {c.detail}")
        print(f"[verify] overall: {'PASS' if summary.passed else 'FAIL'}")
    return summary


def _velocity_isometry(pot, n, t_grid):
    """Int_0^t y_n^2 ds at the given times, by fine-grid cumulative quadrature."""
    from .kernels import kernel_sweep
    from .theory import _cumulative, _fine_grid
    s = _fine_grid(float(np.max(t_grid)), pot.omega_max, include=t_grid)
    y = kernel_sweep(pot, [n], s, "y")[1][:, 0]
    return np.interp(t_grid, s, _cumulative(y * y, s))


def _conservation_drift(pot, n_steps, dt, n_sites) -> float:
    frozen = InteractionPotential(r=pot.r, a=pot.a, sigma=0.0)
    state = ChainState.from_initial_data(InitialData.from_windows({0: 1.0}), n_sites)
    prop = build_propagator(frozen, n_sites, dt)
    h_ref = chain_energy(frozen, state)[2]
    worst = 0.0
    q, p = state.q, state.p
    for step in range(1, n_steps + 1):
        q, p = prop.apply(q, p)
        if step % 500 == 0 or step == n_steps:
            h = chain_energy(frozen, ChainState(n_sites, q, p))[2]
            worst = max(worst, abs(h - h_ref) / abs(h_ref))
    return worst


def _positivity_floor(pot, count, max_len, seed) -> float:
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(count):
        q = rng.standard_normal(rng.integers(1, max_len + 1))
        worst = min(worst, potential_energy(pot, q) / float(np.dot(q, q)))
    return float(worst)


def _write_dispersion(disp, out_dir, figures):
    path = Path(out_dir) / "dispersion.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "omega", "curvature", "sign", "theta", "chi"])
        for i in range(len(disp.critical_points)):
            writer.writerow([repr(float(disp.critical_points[i])), repr(float(disp.frequencies[i])),
                             repr(float(disp.curvatures[i])), int(disp.signs[i]),
                             int(disp.theta[i]), int(disp.chi[i])])
    flags = {
        "positive_frequency": disp.positive,
        "nondegenerate_critical_points": disp.nondegenerate,
        "distinct_critical_frequencies": disp.distinct,
        "flat": disp.flat,
        "interior_critical_points": disp.interior_count,
        "group_velocity_max": disp.group_velocity_max,
        "omega_min": disp.omega_min,
        "omega_max": disp.omega_max,
    }
    with open(Path(out_dir) / "dispersion.json", "w") as fh:
        json.dump(flags, fh, indent=2)
        fh.write("\n")
    if figures:
        plotting.save_dispersion_figure(disp, Path(out_dir) / "dispersion.png")


def _write_dn(rep, out_dir):
    with open(Path(out_dir) / "dn.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "dn", "double_sum", "abs_diff"])
        for i, n in enumerate(rep.sites):
            writer.writerow([int(n), repr(float(rep.direct[i])), repr(float(rep.double_sum[i])),
                             repr(float(abs(rep.direct[i] - rep.double_sum[i])))])


def _write_global_theory(pot, init, t_max, out_dir, figures):
    t = np.linspace(0.0, t_max, 201)
    pred = predict_global_energy(pot, init, t)
    with open(Path(out_dir) / "theory_global.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "EH", "ET", "EU", "VarH"])
        for i in range(len(t)):
            writer.writerow([repr(float(t[i])), repr(float(pred.EH[i])), repr(float(pred.ET[i])),
                             repr(float(pred.EU[i])), repr(float(pred.VarH[i]))])
    if figures:
        plotting.save_global_theory_figure(pred, Path(out_dir) / "theory_global.png")
    return pred


def _write_local_theory(preds, out_dir, figures):
    with open(Path(out_dir) / "theory_local.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "n", "ETn", "EUn", "dn"])
        by_site = {}
        for pred in preds:
            entry = by_site.setdefault(pred.site, {"times": pred.times, "dn": pred.dn})
            if pred.kinetic is not None:
                entry["kin"] = pred.kinetic
            if pred.potential is not None:
                entry["pot"] = pred.potential
            if pred.dn is not None:
                entry["dn"] = pred.dn
        for site, entry in sorted(by_site.items()):
            for i, t in enumerate(entry["times"]):
                kin = entry.get("kin")
                potl = entry.get("pot")
                writer.writerow([repr(float(t)), site,
                                 "" if kin is None else repr(float(kin[i])),
                                 "" if potl is None else repr(float(potl[i])),
                                 "" if entry["dn"] is None else repr(float(entry["dn"]))])
    if figures:
        plotting.save_local_theory_figure(preds, Path(out_dir) / "theory_local.png")


# ---------------------------------------------------------------------------
# command-line wiring

def _add_common(parser):
    parser.add_argument("--config", default=None, help="JSON run configuration (bundled name or path)")
    parser.add_argument("--out-dir", default=None, help="directory for reports and figures")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default ${THREADS_ENV} or 1)")
    parser.add_argument("--no-figures", action="store_true", help="skip figure rendering")


def _load_config(args) -> RunConfig:
    source = args.config if args.config is not None else str(bundled_config_path("nn_pinned"))
    return RunConfig.from_file(source, threads=args.threads, seed=args.seed,
                               out_dir=args.out_dir)


def cmd_dispersion(args) -> int:
    cfg = _load_config(args)
    disp = analyze_dispersion(cfg.potential)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _write_dispersion(disp, cfg.out_dir, not args.no_figures)
    print(f"critical points: {[float(v) for v in disp.critical_points]}")
    print(f"assumptions hold: {disp.assumptions_hold}"
          + (f" (failed: {'; '.join(disp.failed_assumptions())})" if not disp.assumptions_hold else ""))
    print(f"wrote {cfg.out_dir / 'dispersion.csv'}")
    return 0


def cmd_dn(args) -> int:
    cfg = _load_config(args)
    disp = analyze_dispersion(cfg.potential)
    rep = verify_Dn_equals_dn(disp, cfg.potential.sigma, range(args.n_lo, args.n_hi + 1))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _write_dn(rep, cfg.out_dir)
    print(f"max |double sum - direct| = {rep.max_abs_diff:.3e}")
    print(f"wrote {cfg.out_dir / 'dn.csv'}")
    return 0


def cmd_kernels(args) -> int:
    cfg = _load_config(args)
    sites = [int(s) for s in args.sites.split(",")]
    times = np.linspace(0.0, args.t_max, args.t_steps + 1)
    min_panels = max(4, args.quad_order // 16)
    table = build_kernel_table(cfg.potential, sites, times, init=cfg.init, min_panels=min_panels)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = write_kernel_csv(table, cfg.out_dir / "kernels.csv")
    if not args.no_figures:
        plotting.save_kernel_figure(table, cfg.out_dir / "kernels.png")
    print(f"wrote {path} ({table.quadrature_order} quadrature nodes)")
    return 0


def cmd_theory(args) -> int:
    cfg = _load_config(args)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    _write_global_theory(cfg.potential, cfg.init, args.t_max, cfg.out_dir, not args.no_figures)
    disp = analyze_dispersion(cfg.potential)
    sites = [int(s) for s in args.sites.split(",")]
    fit_cfg = cfg.section("slope_fit")
    t_fit = np.geomspace(fit_cfg["t_lo"], fit_cfg["t_hi"], fit_cfg["points"])
    preds = []
    for n in sites:
        with_fit = disp.assumptions_hold
        preds.append(predict_local_kinetic(cfg.potential, cfg.init, n, t_fit,
                                           fit_window=(fit_cfg["t_lo"], fit_cfg["t_hi"]),
                                           with_fit=with_fit, disp=disp))
        preds.append(predict_local_potential(cfg.potential, cfg.init, n, t_fit,
                                             fit_window=(fit_cfg["t_lo"], fit_cfg["t_hi"]),
                                             with_fit=with_fit, disp=disp))
        if not with_fit:
            print(f"slope fits skipped: {'; '.join(disp.failed_assumptions())}")
    _write_local_theory(preds, cfg.out_dir, not args.no_figures)
    print(f"wrote {cfg.out_dir / 'theory_global.csv'} and {cfg.out_dir / 'theory_local.csv'}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    chain_cfg = cfg.section("chain")
    n_sites = args.n_sites if args.n_sites is not None else chain_cfg["n_sites"]
    dt = args.dt if args.dt is not None else chain_cfg["dt"]
    t_max = args.t_max if args.t_max is not None else chain_cfg["t_max"]
    replicas = args.replicas if args.replicas is not None else chain_cfg["replicas"]
    sites = [int(s) for s in args.sites.split(",")]
    steps = max(1, round(t_max / dt))
    out_steps = sorted({max(1, round(steps * k / 10)) for k in range(1, 11)})
    out_times = [s * dt for s in out_steps]

    if args.engine == "chain":
        report = simulate_chain(cfg.potential, cfg.init, n_sites, dt, t_max,
                                replicas, cfg.seed, out_times=out_times, sites=sites,
                                K=chain_cfg["substeps"], threads=cfg.threads)
    else:
        report = simulate_kernel_mc(cfg.potential, cfg.init, sites, out_times,
                                    replicas, cfg.seed, dt, window=cfg.section("kernel")["window"],
                                    threads=cfg.threads)
    out_path = Path(args.out) if args.out else cfg.out_dir / f"simulate_{args.engine}.csv"
    write_report_csv(report, out_path)
    if not args.no_figures:
        plotting.save_simulation_figure(report, out_path.with_suffix(".png"))
    print(f"wrote {out_path}")
    return 0


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    summary = run_verify(cfg, out_dir=cfg.out_dir, figures=not args.no_figures)
    return 0 if summary.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivenchain",
        description="Energy growth of a harmonic chain driven by white noise at one site",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dispersion", help="critical points and assumption verdicts")
    _add_common(p)
    p.set_defaults(func=cmd_dispersion)

    p = sub.add_parser("dn", help="growth constants and their double-sum identity")
    _add_common(p)
    p.add_argument("--n-lo", type=int, default=-8)
    p.add_argument("--n-hi", type=int, default=8)
    p.set_defaults(func=cmd_dn)

    p = sub.add_parser("kernels", help="tabulate the solution kernels")
    _add_common(p)
    p.add_argument("--sites", default="0,1,2")
    p.add_argument("--t-max", type=float, default=50.0)
    p.add_argument("--t-steps", type=int, default=500)
    p.add_argument("--quad-order", type=int, default=64, help="minimum lambda node count")
    p.set_defaults(func=cmd_kernels)

    p = sub.add_parser("theory", help="closed-form and quadrature energy predictions")
    _add_common(p)
    p.add_argument("--sites", default="0")
    p.add_argument("--t-max", type=float, default=50.0)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("simulate", help="Monte Carlo energy estimates")
    _add_common(p)
    p.add_argument("--engine", choices=("chain", "kernel"), default="chain")
    p.add_argument("--n-sites", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--replicas", type=int, default=None)
    p.add_argument("--sites", default="0,1,3")
    p.add_argument("--out", default=None, help="output CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="full pipeline with a pass/fail summary")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PotentialError, HorizonError, AssumptionError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except QuadratureError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
