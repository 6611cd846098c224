"""Configuration, study orchestration, CLI, and reproducibility checks.

Study-level statistical verdicts at full protocol scale live in the
acceptance suite; here the studies run at deliberately tiny scale to
exercise orchestration, exclusion accounting, persistence, and exit codes.
"""

import json
import subprocess
import sys

import numpy as np
import pytest

from wflab.harness import (ConfigError, HarnessConfig, StudyReport, cli_main,
                           _resolve_threads, load_config_file, make_config,
                           run_bounds_study, run_long_time_study,
                           run_selftest, run_short_time_study,
                           run_simulate, run_tails_study, write_study_outputs)
from wflab.io import read_report, read_snapshots

TINY = {"n": 128, "n_t": 512, "n_modes": 4, "L": 40.0}


class TestConfig:
    def test_defaults(self):
        cfg = make_config(None)
        assert cfg.L == 40.0 and cfg.n == 1024 and cfg.n_t == 4096
        assert cfg.n_modes == 16 and cfg.hurst == 0.75
        assert cfg.eta_effective == pytest.approx(0.60)

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="bogus_key"):
            make_config({"bogus_key": 1})

    def test_eta_default_heavy_tailed(self):
        cfg = make_config({"noise_kind": "lfsm", "alpha": 1.5, "hurst": 0.8})
        assert cfg.eta_effective == pytest.approx(0.8 - 1 / 1.5 - 0.1)
        assert cfg.eta_ceiling == pytest.approx(0.8 - 1 / 1.5)

    def test_heavy_tail_parameter_windows(self):
        with pytest.raises(ConfigError, match="alpha"):
            make_config({"noise_kind": "lfsm", "alpha": 2.5})
        with pytest.raises(ConfigError, match="hurst"):
            make_config({"noise_kind": "lfsm", "alpha": 1.5, "hurst": 0.5})

    def test_power_of_two_grids(self):
        with pytest.raises(ConfigError, match="power of two"):
            make_config({"n": 1000})
        with pytest.raises(ConfigError, match="power of two"):
            make_config({"n_t": 100})

    def test_mode_capacity(self):
        with pytest.raises(ConfigError, match="n_modes"):
            make_config({"n": 64, "n_modes": 16})

    def test_seed_override_wins(self):
        cfg = make_config({"seed": 3}, seed=11)
        assert cfg.seed == 11

    def test_window_shape_checked(self):
        with pytest.raises(ConfigError, match="light_window"):
            make_config({"light_window": [2.4, 1.6]})

    def test_choice_fields(self):
        with pytest.raises(ConfigError, match="noise_kind"):
            make_config({"noise_kind": "white"})
        with pytest.raises(ConfigError, match="conv_scheme"):
            make_config({"conv_scheme": "magic"})

    def test_payload_round_trips_through_schema(self):
        cfg = make_config({"eps": 2e-3, "T_grid": [1.0, 2.0]})
        payload = cfg.to_payload()
        payload.pop("eta_effective")
        assert make_config(payload) == cfg


class TestConfigFile:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config_file(str(tmp_path / "none.json"))

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="malformed"):
            load_config_file(str(p))

    def test_top_level_must_be_object(self, tmp_path):
        p = tmp_path / "list.json"
        p.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="object"):
            load_config_file(str(p))

    def test_none_is_empty(self):
        assert load_config_file(None) == {}


class TestThreads:
    def test_explicit_wins(self):
        assert _resolve_threads(3) == 3

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("WFL_THREADS", "2")
        assert _resolve_threads(None) == 2

    def test_env_must_be_integer(self, monkeypatch):
        monkeypatch.setenv("WFL_THREADS", "many")
        with pytest.raises(ConfigError, match="WFL_THREADS"):
            _resolve_threads(None)

    def test_positive_required(self):
        with pytest.raises(ConfigError, match="threads"):
            _resolve_threads(0)


class TestStudyReport:
    def test_passed_ignores_skipped(self):
        rep = StudyReport(study="x")
        rep.add_verdict("a", True, 1.0, {})
        rep.add_verdict("b", None, None, {}, note="skipped")
        assert rep.passed
        rep.add_verdict("c", False, 2.0, {})
        assert not rep.passed

    def test_payload_strips_trial_rows(self):
        rep = StudyReport(study="x", cells=[
            {"name": "c", "trials": [{"trial": 0}], "aggregates": {}}])
        payload = rep.to_payload()
        assert "trials" not in payload["cells"][0]


class TestShortTimeStudy:
    def test_insufficient_trials(self):
        with pytest.raises(ConfigError, match="n_trials"):
            run_short_time_study({**TINY, "n_trials": 50}, threads=1)

    def test_degenerate_grid(self):
        with pytest.raises(ConfigError, match="T_grid"):
            run_short_time_study({**TINY, "T_grid": [1.0], "n_trials": 100},
                                 threads=1)

    def test_zero_amplitude_refuses_fit(self):
        rep = run_short_time_study(
            {**TINY, "eps": 0.0, "n_trials": 100,
             "T_grid": [0.25, 0.5, 1.0]}, threads=1)
        assert rep.passed
        assert "refused" in rep.slopes["short_time"]
        names = {v["name"] for v in rep.verdicts}
        assert "deterministic_medians" in names
        assert rep.provenance["version"]
        assert len(rep.provenance["config_hash"]) == 64

    def test_noisy_run_reports_slope_and_prefactors(self):
        rep = run_short_time_study(
            {**TINY, "eps": 1e-3, "a": 0.5, "n_trials": 100,
             "T_grid": [0.25, 0.5, 1.0], "seed": 9}, threads=1)
        fit = rep.slopes["short_time"]
        assert 0.2 < fit["value"] < 1.3
        assert fit["stderr"] is not None
        assert set(rep.prefactors) == {"C_S_hat", "rho_hat"}
        assert 0.0 <= rep.extras["bound_fraction"] <= 1.0
        assert rep.extras["small_noise_probability"] == 1.0


class TestLongTimeStudy:
    def test_requires_standing_front(self):
        with pytest.raises(ConfigError, match="a:"):
            run_long_time_study({**TINY, "a": 0.25}, threads=1)

    def test_eta_ceiling_enforced(self):
        with pytest.raises(ConfigError, match="ceiling"):
            run_long_time_study({**TINY, "a": 0.5, "eta": 0.8,
                                 "hurst": 0.75}, threads=1)

    def test_single_point_grid_rejected(self):
        with pytest.raises(ConfigError, match="two points"):
            run_long_time_study({**TINY, "a": 0.5, "T_grid": [2.0]},
                                threads=1)

    def test_shrink_rate_window(self):
        with pytest.raises(ConfigError, match="gamma_delta"):
            run_long_time_study(
                {**TINY, "a": 0.5, "eta": 0.6, "gamma_delta": 0.2},
                threads=1)

    def test_tiny_run_structure(self):
        rep = run_long_time_study(
            {**TINY, "n_t": 256, "a": 0.5, "eta": 0.6, "eps": 1e-3,
             "n_trials": 20, "T_grid": [0.25, 0.5], "seed": 4}, threads=1)
        names = {v["name"] for v in rep.verdicts}
        assert names == {"bounded_quantile", "vanishing_quantile"}
        assert len(rep.cells) == 4
        # Matched step count doubles with the horizon.
        assert [c["n_t"] for c in rep.cells[:2]] == [256, 512]
        assert "C_L_hat" in rep.prefactors
        assert len(rep.extras["relative_spread"]) == 2

    def test_vanishing_leg_optional(self):
        rep = run_long_time_study(
            {**TINY, "n_t": 256, "a": 0.5, "eta": 0.6, "eps": 1e-3,
             "n_trials": 10, "T_grid": [0.25, 0.5],
             "vanishing_leg": False}, threads=1)
        assert {v["name"] for v in rep.verdicts} == {"bounded_quantile"}
        assert len(rep.cells) == 2


class TestTailsStudy:
    def test_insufficient_paths(self):
        with pytest.raises(ConfigError, match="n_trials"):
            run_tails_study({**TINY, "n_trials": 100}, threads=1)

    def test_gaussian_norms_are_light_tailed(self):
        rep = run_tails_study({**TINY, "n_t": 256, "n_modes": 2,
                               "n_trials": 1000, "seed": 2}, threads=1)
        (verdict,) = rep.verdicts
        assert verdict["name"] == "light_tail_in_window"
        assert verdict["passed"] is True
        tail = rep.extras["tail"]
        assert tail["regime"] == "light"
        assert tail["ci"][0] < tail["alpha_hat"] < tail["ci"][1]

    def test_heavy_tail_report(self):
        rep = run_tails_study(
            {**TINY, "n_t": 256, "n_modes": 2, "n_trials": 1000,
             "noise_kind": "lfsm", "alpha": 1.5, "hurst": 0.8, "seed": 6},
            threads=1)
        tail = rep.extras["tail"]
        assert tail["regime"] == "heavy"
        assert 0.8 < tail["alpha_hat"] < 2.5


class TestBoundsStudy:
    def test_insufficient_trials(self):
        with pytest.raises(ConfigError, match="n_trials"):
            run_bounds_study({**TINY, "n_trials": 10}, threads=1)

    def test_fit_then_validate_structure(self):
        rep = run_bounds_study(
            {**TINY, "a": 0.5, "eps": 1e-3, "n_trials": 50,
             "T_grid": [0.5, 1.0], "sweep_eps": [1e-3, 2e-3, 4e-3],
             "sweep_paths": 3, "sweep_n_t": 512,
             "sweep_window": [0.2, 2.8], "seed": 12}, threads=1)
        assert set(rep.prefactors) == {"C_S_hat", "C_L_hat", "C_y_hat",
                                       "C_Z_hat", "z_star_hat", "rho_hat"}
        rate_names = {v["name"] for v in rep.verdicts
                      if v["name"].endswith("violation_rate")}
        assert len(rate_names) == 4
        for v in rep.verdicts:
            assert v["tolerance"]
        assert "sweep" in rep.slopes and "value" in rep.slopes["sweep"]
        assert any(c["name"] == "sweep" for c in rep.cells)

    def test_out_of_regime_sweep_points_excluded(self):
        rep = run_bounds_study(
            {**TINY, "a": 0.5, "eps": 1e-3, "n_trials": 50,
             "T_grid": [0.5], "sweep_eps": [1e-3, 2e-3, 6e-2],
             "sweep_paths": 3, "sweep_n_t": 512,
             "sweep_window": [0.2, 2.8], "seed": 12}, threads=1)
        assert rep.excluded["out_of_regime"] >= 3
        assert rep.slopes["sweep"]["n"] == 2

    def test_zero_amplitude_trivial(self):
        rep = run_bounds_study({**TINY, "eps": 0.0, "n_trials": 50,
                                "T_grid": [0.5, 1.0]}, threads=1)
        assert rep.passed
        assert "refused" in rep.slopes["sweep"]


class TestOutputs:
    def test_study_outputs_reproducible(self, tmp_path):
        cfgd = {**TINY, "eps": 0.0, "n_trials": 100,
                "T_grid": [0.25, 0.5, 1.0], "seed": 5}
        for sub in ("a", "b"):
            rep = run_short_time_study(cfgd, threads=1)
            write_study_outputs(rep, tmp_path / sub)
        for rel in ("short_time/T=0.25/summary.csv",
                    "short_time/T=1/summary.csv"):
            assert ((tmp_path / "a" / rel).read_bytes()
                    == (tmp_path / "b" / rel).read_bytes())
        ra = read_report(tmp_path / "a/short_time/report.json")
        rb = read_report(tmp_path / "b/short_time/report.json")
        assert ra == rb

    def test_pool_matches_serial(self):
        cfgd = {**TINY, "eps": 1e-3, "a": 0.5, "n_trials": 100,
                "T_grid": [0.25, 0.5], "seed": 8}
        serial = run_short_time_study(cfgd, threads=1).to_payload()
        pooled = run_short_time_study(cfgd, threads=2).to_payload()
        assert serial == pooled

    def test_simulate_outputs(self, tmp_path):
        cfg = make_config({**TINY, "n_t": 256, "T": 0.25, "eps": 1e-3,
                           "a": 0.5, "seed": 3})
        payload = run_simulate(cfg, snapshot_stride=64, out_dir=tmp_path)
        run_dir = tmp_path / "simulate" / "run"
        assert (run_dir / "summary.csv").is_file()
        assert payload["diagnostics"]["sup_d"] < 0.05
        times, frames, L = read_snapshots(run_dir / "snapshots.wfl1")
        assert L == 40.0
        assert frames.shape == (len(times), 128)
        # Snapshots carry the front shape: values near both wells.
        assert frames[0].min() < 0.1 and frames[0].max() > 0.9


class TestCli:
    def test_missing_config_file(self, tmp_path, capsys):
        code = cli_main(["short-time", "--config",
                         str(tmp_path / "nope.json")])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"frobnicate": 1}))
        code = cli_main(["tails", "--config", str(p)])
        assert code == 2
        assert "frobnicate" in capsys.readouterr().err

    def test_unknown_flag(self):
        assert cli_main(["short-time", "--frobnicate"]) == 2

    def test_subcommand_required(self):
        assert cli_main([]) == 2

    def test_simulate_round_trip(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({**TINY, "n_t": 256, "T": 0.25,
                                 "eps": 1e-3, "a": 0.5}))
        code = cli_main(["simulate", "--config", str(p), "--seed", "7",
                         "--out-dir", str(tmp_path / "out"), "--threads", "1"])
        assert code == 0
        assert (tmp_path / "out/simulate/run/summary.csv").is_file()

    def test_repeated_study_runs_byte_identical(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({**TINY, "eps": 0.0, "n_trials": 100,
                                 "T_grid": [0.25, 0.5]}))
        for sub in ("o1", "o2"):
            code = cli_main(["short-time", "--config", str(p), "--seed", "7",
                             "--out-dir", str(tmp_path / sub),
                             "--threads", "1"])
            assert code == 0
        rel = "short_time/T=0.5/summary.csv"
        assert ((tmp_path / "o1" / rel).read_bytes()
                == (tmp_path / "o2" / rel).read_bytes())

    def test_module_entry_point(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({**TINY, "n_t": 256, "T": 0.25,
                                 "eps": 0.0}))
        proc = subprocess.run(
            [sys.executable, "-m", "wflab.harness", "simulate", "--config",
             str(p), "--out-dir", str(tmp_path / "out")],
            capture_output=True, text=True, timeout=300)
        assert proc.returncode == 0, proc.stderr
        assert "sup distance" in proc.stdout


class TestSelftest:
    def test_all_checks_pass(self, capsys):
        assert run_selftest(threads=2) == 0
        out = capsys.readouterr().out
        assert "all checks passed" in out
