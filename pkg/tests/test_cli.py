import csv
import json
import math

import numpy as np
import pytest

from drivenchain import QuadratureError, build_kernel_table
from drivenchain.cli import (
    ConfigError,
    RunConfig,
    VerificationSummary,
    bundled_config_path,
    emit_report,
    main,
    read_summary,
    run_verify,
    write_kernel_csv,
    write_report_csv,
)
from drivenchain.simulate import simulate_chain

SMOKE = {
    "schema_version": 1,
    "potential": {"nearest_neighbor": {"omega0_sq": 1.0, "omega1_sq": 1.0}, "sigma": 1.0},
    "seed": 11,
    "chain": {"n_sites": 129, "dt": 0.1, "t_max": 12.0, "replicas": 160,
              "out_times": [4.0, 8.0, 12.0], "sites": [0, 1, 3], "substeps": 8},
    "kernel": {"dt_noise": 0.05, "replicas": 160, "t_grid": [4.0, 8.0, 12.0],
               "window": 16, "sites": [0, 1, 3]},
    "isometry": {"dt_noise": 0.05, "replicas": 160, "t_grid": [5.0, 10.0], "sites": [0, 1, 3]},
    "variance_times": [20.0, 40.0, 80.0],
    "slope_fit": {"t_lo": math.exp(3.0), "t_hi": math.exp(5.5), "points": 12,
                  "rel_tol": 0.15, "pair_tol": 0.05},
    "stationary_phase": {"sites": [0, 1, 2], "t_lo": 30.0, "t_hi": 90.0,
                         "cal_hi": 60.0, "points": 121, "margin": 1.25},
    "decay": {"t_lo": 10.0, "t_hi": 1000.0, "points": 60, "target": -0.5, "tol": 0.05},
    "series_check": {"n_sites": 32, "dt": 0.1, "terms": 40, "tol": 1e-12},
    "light_cone": {"times": [0.5, 1.0, 2.0]},
    "conservation": {"n_steps": 2000, "dt": 0.05, "tol": 1e-10},
    "positivity": {"count": 200, "max_len": 32, "seed": 3, "tol": 1e-12},
    "identity": {"n_lo": -4, "n_hi": 4, "tol": 1e-10},
}


def smoke_config(tmp_path, **extra):
    data = json.loads(json.dumps(SMOKE))
    data.update(extra)
    data["out_dir"] = str(tmp_path / "reports")
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return path


class TestRunConfig:
    def test_defaults_fill_in(self):
        cfg = RunConfig.from_dict({"potential": {"nearest_neighbor": {"omega0_sq": 1, "omega1_sq": 1}, "sigma": 1}})
        assert cfg.section("chain")["n_sites"] == 513
        assert cfg.potential.sigma == 1.0
        assert cfg.init.is_zero

    def test_bundled_config_resolves(self):
        cfg = RunConfig.from_file(bundled_config_path("nn_pinned"))
        assert cfg.potential.a == (3.0, -1.0)
        by_name = RunConfig.from_file("nn_pinned.json")
        assert by_name.potential.a == cfg.potential.a

    def test_even_chain_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"chain": {"n_sites": 128}})

    def test_horizon_precheck(self):
        with pytest.raises(ConfigError, match="horizon"):
            RunConfig.from_dict({"chain": {"n_sites": 65, "t_max": 100.0}})

    def test_bad_time_grid(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"chain": {"out_times": [5.0, 5.0]}})

    def test_bad_tolerance_override(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"tolerance_overrides": {"conservation": -1.0}})

    def test_unknown_schema_version(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"schema_version": 99})

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            RunConfig.from_file("no/such/config.json")

    def test_threads_from_env(self, monkeypatch):
        monkeypatch.setenv("DRIVENCHAIN_THREADS", "3")
        cfg = RunConfig.from_dict({})
        assert cfg.threads == 3
        cfg = RunConfig.from_dict({}, threads=2)
        assert cfg.threads == 2


class TestReports:
    def _summary(self):
        s = VerificationSummary()
        s.add("alpha", 0.5, 0.0, 1.0, True, detail="fine")
        s.add("beta", 2.0, 0.0, 1.0, False)
        s.skip("gamma", "assumptions unmet: positive frequency (A1)")
        return s

    def test_pass_logic(self):
        s = self._summary()
        assert not s.passed
        ok = VerificationSummary()
        ok.add("alpha", 0.5, 0.0, 1.0, True)
        ok.skip("gamma", "n/a")
        assert ok.passed   # skips never count as failures

    def test_emit_is_byte_identical(self, tmp_path):
        s = self._summary()
        p1 = emit_report(s, tmp_path / "a")
        p2 = emit_report(s, tmp_path / "b")
        for a, b in zip(p1, p2):
            assert a.read_bytes() == b.read_bytes()

    def test_json_round_trip(self, tmp_path):
        s = self._summary()
        emit_report(s, tmp_path)
        back = read_summary(tmp_path / "verify_summary.json")
        assert [c.name for c in back.checks] == ["alpha", "beta", "gamma"]
        assert back.get("alpha").measured == 0.5
        assert back.get("gamma").status == "skip"
        assert back.passed == s.passed

    def test_csv_schema(self, tmp_path):
        emit_report(self._summary(), tmp_path)
        with open(tmp_path / "verify_summary.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["name", "status", "measured", "target", "tolerance", "detail"]
        assert len(rows) == 4

    def test_report_csv_schema(self, tmp_path, nn11, zero_init):
        rep = simulate_chain(nn11, zero_init, 65, 0.1, 2.0, 8, 1, out_times=[1.0, 2.0], sites=[0])
        path = write_report_csv(rep, tmp_path / "r.csv")
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "estimator", "site", "mean", "stderr", "replicas"]
        globals_rows = [r for r in rows[1:] if r[1] == "H"]
        assert globals_rows[0][2] == ""
        # values survive a text round trip exactly
        assert float(globals_rows[0][3]) == rep.get("H")[0][0]

    def test_kernel_csv_schema(self, tmp_path, nn11):
        table = build_kernel_table(nn11, [0, 1], np.linspace(0.0, 2.0, 5))
        path = write_kernel_csv(table, tmp_path / "k.csv")
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "n", "x", "y", "h", "f"]
        assert len(rows) == 1 + 5 * 2
        assert rows[1][5] == ""   # no initial data, f column empty


class TestCommands:
    def test_dispersion_command(self, tmp_path):
        cfg = smoke_config(tmp_path)
        assert main(["dispersion", "--config", str(cfg)]) == 0
        out = tmp_path / "reports"
        assert (out / "dispersion.csv").exists()
        assert (out / "dispersion.json").exists()
        assert (out / "dispersion.png").exists()
        flags = json.loads((out / "dispersion.json").read_text())
        assert flags["positive_frequency"] is True

    def test_dn_command(self, tmp_path):
        cfg = smoke_config(tmp_path)
        assert main(["dn", "--config", str(cfg), "--n-lo", "-2", "--n-hi", "2"]) == 0
        with open(tmp_path / "reports" / "dn.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["n", "dn", "double_sum", "abs_diff"]
        assert len(rows) == 6
        d0 = (1 + math.sqrt(5)) / (8 * math.pi)
        assert float(rows[3][1]) == pytest.approx(d0, rel=1e-12)

    def test_dn_refused_for_unpinned(self, tmp_path):
        cfg = smoke_config(tmp_path,
                           potential={"nearest_neighbor": {"omega0_sq": 0.0, "omega1_sq": 1.0},
                                      "sigma": 1.0})
        assert main(["dn", "--config", str(cfg)]) == 2

    def test_kernels_command(self, tmp_path):
        cfg = smoke_config(tmp_path)
        assert main(["kernels", "--config", str(cfg), "--sites", "0,1",
                     "--t-max", "5", "--t-steps", "25"]) == 0
        out = tmp_path / "reports"
        with open(out / "kernels.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "n", "x", "y", "h", "f"]
        assert len(rows) == 1 + 26 * 2
        assert (out / "kernels.png").exists()

    def test_simulate_command(self, tmp_path):
        cfg = smoke_config(tmp_path)
        assert main(["simulate", "--config", str(cfg), "--engine", "chain",
                     "--n-sites", "65", "--dt", "0.1", "--t-max", "4",
                     "--replicas", "16", "--sites", "0",
                     "--out", str(tmp_path / "reports" / "run.csv")]) == 0
        assert (tmp_path / "reports" / "run.csv").exists()
        assert (tmp_path / "reports" / "run.png").exists()

    def test_simulate_kernel_engine(self, tmp_path):
        cfg = smoke_config(tmp_path)
        assert main(["simulate", "--config", str(cfg), "--engine", "kernel",
                     "--dt", "0.1", "--t-max", "3", "--replicas", "16",
                     "--sites", "0", "--no-figures"]) == 0
        assert (tmp_path / "reports" / "simulate_kernel.csv").exists()

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["dispersion", "--config", str(bad)]) == 2
        assert main(["dispersion", "--config", str(tmp_path / "missing.json")]) == 2

    def test_verify_exit_codes_map_summary(self, tmp_path, monkeypatch):
        import drivenchain.cli as cli_mod
        good = VerificationSummary()
        good.add("x", 0.0, 0.0, 1.0, True)
        monkeypatch.setattr(cli_mod, "run_verify", lambda cfg, **kw: good)
        cfg = smoke_config(tmp_path)
        assert main(["verify", "--config", str(cfg)]) == 0
        bad = VerificationSummary()
        bad.add("x", 9.0, 0.0, 1.0, False)
        monkeypatch.setattr(cli_mod, "run_verify", lambda cfg, **kw: bad)
        assert main(["verify", "--config", str(cfg)]) == 1

    def test_numerical_error_exit_code(self, tmp_path, monkeypatch):
        import drivenchain.cli as cli_mod

        def boom(cfg, **kw):
            raise QuadratureError("no convergence")

        monkeypatch.setattr(cli_mod, "run_verify", boom)
        cfg = smoke_config(tmp_path)
        assert main(["verify", "--config", str(cfg)]) == 3


@pytest.fixture(scope="module")
def smoke_summary(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("smoke")
    cfg = RunConfig.from_file(smoke_config(tmp))
    summary = run_verify(cfg, verbose=False)
    return summary, cfg


class TestVerifySmoke:
    def test_all_checks_present(self, smoke_summary):
        summary, _ = smoke_summary
        names = {c.name for c in summary.checks}
        assert {"mean-energy-growth", "mean-energy-growth-with-ic", "global-equipartition",
                "kinetic-mean-vs-quadrature", "variance-subquadratic", "variance-vs-quadrature",
                "kinetic-log-slope", "potential-log-slope", "local-equipartition",
                "growth-constant-identity", "stationary-phase-bound", "decay-slope",
                "propagator-series", "light-cone-bound", "ito-isometry",
                "cross-engine-kinetic", "cross-engine-potential", "cross-engine-total",
                "conservation", "positivity"} == names

    def test_smoke_passes(self, smoke_summary):
        summary, _ = smoke_summary
        failing = [c.name for c in summary.checks if c.status == "fail"]
        assert not failing, f"failing checks: {failing}"

    def test_artifacts_written(self, smoke_summary):
        _, cfg = smoke_summary
        for name in ("dispersion.csv", "dn.csv", "theory_global.csv", "theory_local.csv",
                     "simulate_chain.csv", "simulate_chain_ic.csv", "simulate_kernel.csv",
                     "simulate_isometry.csv", "verify_summary.json", "verify_summary.csv",
                     "dispersion.png", "theory_global.png", "simulate_chain.png",
                     "verify_summary.png"):
            assert (cfg.out_dir / name).exists(), name

    def test_skips_reported_when_assumptions_fail(self, tmp_path):
        cfg_path = smoke_config(
            tmp_path,
            potential={"nearest_neighbor": {"omega0_sq": 0.0, "omega1_sq": 1.0}, "sigma": 1.0},
        )
        cfg = RunConfig.from_file(cfg_path)
        summary = run_verify(cfg, verbose=False, figures=False)
        gated = {"kinetic-log-slope", "potential-log-slope", "local-equipartition",
                 "growth-constant-identity", "stationary-phase-bound"}
        for name in gated:
            check = summary.get(name)
            assert check.status == "skip"
            assert "A1" in check.detail or "assumptions" in check.detail
        # ungated physics still runs and passes
        assert summary.get("mean-energy-growth").status == "pass"
        assert summary.get("decay-slope").status in ("pass", "skip")
        assert summary.passed

    def test_tolerance_override_can_force_failure(self, tmp_path):
        cfg_path = smoke_config(tmp_path, tolerance_overrides={"propagator-series": 1e-30})
        cfg = RunConfig.from_file(cfg_path)
        summary = run_verify(cfg, verbose=False, figures=False)
        assert summary.get("propagator-series").status == "fail"
        assert not summary.passed
