import json
import os

import numpy as np
import pytest

from srrw.cli import main

pytestmark = pytest.mark.filterwarnings("ignore::DeprecationWarning")


def write_config(tmp_path, name="cfg.json", **overrides):
    cfg = {
        "graph": {"generator": {"kind": "complete", "n": 4}},
        "laziness": 0.5,
        "traps": {"nodes": "all", "zeta": 0.1},
        "policy": {"A_l": 5, "q_fork": 0.3},
        "simulation": {"Z_0": 20, "horizon": 120, "replicas": 2, "seed": 7},
        "envelope": {"mode": "fit", "n_samples": 2000},
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def run_dirs(out):
    return sorted(p for p in os.listdir(out) if os.path.isdir(os.path.join(out, p)))


def only_run_dir(out, before=()):
    dirs = [d for d in run_dirs(out) if d not in before]
    assert len(dirs) == 1
    return os.path.join(out, dirs[0])


class TestStationary:
    def test_path3_pi_file(self, tmp_path):
        cfg = write_config(tmp_path, graph={"generator": {"kind": "path", "n": 3}},
                           traps=None, policy={"A_l": 1, "q_fork": 0.1})
        out = tmp_path / "out"
        assert main(["stationary", "--config", str(cfg), "--out", str(out)]) == 0
        run = only_run_dir(out)
        pi_lines = [l for l in open(os.path.join(run, "pi.csv")) if not l.startswith("#")]
        values = [float(l.split(",")[1]) for l in pi_lines[1:]]
        assert values == [0.25, 0.5, 0.25]
        payload = json.load(open(os.path.join(run, "stationary.json")))
        assert payload["spectral_gap"] > 0
        assert payload["config"]["laziness"] == 0.5
        for eps in payload["t_mix"]:
            assert payload["t_mix"][eps] <= payload["spectral_bound"][eps]

    def test_disconnected_generator_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path, graph={"generator": {"kind": "erdos_renyi", "n": 20,
                                                          "p": 0.02, "seed": 1}})
        assert main(["stationary", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
        assert "components" in capsys.readouterr().err

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        main(["stationary", "--config", str(cfg), "--out", str(out)])
        first = only_run_dir(out)
        bodies1 = {f: open(os.path.join(first, f), "rb").read() for f in os.listdir(first)}
        main(["stationary", "--config", str(cfg), "--out", str(out)])
        second = only_run_dir(out, before={os.path.basename(first)})
        for f, body in bodies1.items():
            assert open(os.path.join(second, f), "rb").read() == body


class TestEnvelopes:
    def test_fit_curves(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["envelopes", "--config", str(cfg), "--out", str(out)]) == 0
        run = only_run_dir(out)
        payload = json.load(open(os.path.join(run, "envelopes.json")))
        assert payload["source"] == "empirical_fit"
        assert len(payload["per_node"]) == 4
        rows = [l.strip().split(",") for l in open(os.path.join(run, "envelope_curves.csv"))
                if not l.startswith("#") and not l.startswith("A,")]
        assert float(rows[0][1]) == 1.0 and float(rows[0][2]) == 1.0
        for _, plus, minus in rows:
            assert float(plus) <= float(minus) + 1e-15

    def test_doeblin_mode_and_ordering(self, tmp_path):
        out = tmp_path / "out"
        cfg_fit = write_config(tmp_path, "fit.json")
        cfg_doe = write_config(tmp_path, "doe.json",
                               envelope={"mode": "doeblin", "n_samples": 2000})
        main(["envelopes", "--config", str(cfg_fit), "--out", str(out)])
        main(["envelopes", "--config", str(cfg_doe), "--out", str(out)])
        runs = [os.path.join(out, d) for d in run_dirs(out)]
        payloads = [json.load(open(os.path.join(r, "envelopes.json"))) for r in runs]
        fit = next(p for p in payloads if p["source"] == "empirical_fit")
        doe = next(p for p in payloads if p["source"] == "doeblin_theoretical")
        assert doe["t0"] >= 1 and doe["eps0"] > 0
        for fit_node, doe_node in zip(fit["per_node"], doe["per_node"]):
            assert doe_node["c_minus"] <= fit_node["c_minus"]
            assert doe_node["c_plus"] >= fit_node["c_plus"]


class TestSimulate:
    def test_trap_decay_run(self, tmp_path):
        cfg = write_config(tmp_path, policy={"A_l": 1, "q_fork": 0.0},
                           simulation={"Z_0": 50, "horizon": 200, "replicas": 3, "seed": 1})
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        run = only_run_dir(out)
        summary = json.load(open(os.path.join(run, "summary.json")))
        assert len(summary["replicas"]) == 3
        assert summary["extinction_fraction"] == 1.0
        assert os.path.exists(os.path.join(run, "replica_002.csv"))
        assert summary["config"]["simulation"]["Z_0"] == 50

    def test_cap_flagged_on_supercritical(self, tmp_path):
        cfg = write_config(tmp_path, traps={"nodes": "all", "zeta": 0.01},
                           policy={"A_l": 1, "q_fork": 0.3},
                           simulation={"Z_0": 10, "horizon": 500, "replicas": 2,
                                       "seed": 2, "Z_cap": 2000})
        out = tmp_path / "out"
        main(["simulate", "--config", str(cfg), "--out", str(out)])
        summary = json.load(open(os.path.join(only_run_dir(out), "summary.json")))
        assert summary["cap_fraction"] == 1.0

    def test_seed_and_replica_overrides(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        main(["simulate", "--config", str(cfg), "--out", str(out), "--seed", "99",
              "--replicas", "1"])
        summary = json.load(open(os.path.join(only_run_dir(out), "summary.json")))
        assert summary["config"]["simulation"]["seed"] == 99
        assert len(summary["replicas"]) == 1

    def test_parallel_matches_serial(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        monkeypatch.delenv("SRRW_THREADS", raising=False)
        main(["simulate", "--config", str(cfg), "--out", str(out_a)])
        monkeypatch.setenv("SRRW_THREADS", "2")
        main(["simulate", "--config", str(cfg), "--out", str(out_b)])
        ra, rb = only_run_dir(out_a), only_run_dir(out_b)
        for f in ("replica_000.csv", "replica_001.csv", "summary.json"):
            assert open(os.path.join(ra, f), "rb").read() == open(os.path.join(rb, f), "rb").read()


class TestCheck:
    def check_config(self, tmp_path, **kw):
        return write_config(
            tmp_path,
            traps={"nodes": "all", "zeta": 0.05},
            policy={"regime": {
                "Z_low": 10, "Z_high": 60,
                "low": {"A_l": 1, "q_fork": 0.2},
                "high": {"A_l": 2**40, "A_s": 2**40 - 1, "q_fork": 0.0, "q_term": 0.15},
            }},
            simulation={"Z_0": 30, "horizon": 2000, "replicas": 2, "seed": 3},
            corridor={"Z_low": 10, "Z_high": 60},
            **kw,
        )

    def test_corridor_check(self, tmp_path):
        cfg = self.check_config(tmp_path)
        out = tmp_path / "out"
        assert main(["check", "--config", str(cfg), "--out", str(out)]) == 0
        run = only_run_dir(out)
        feas = json.load(open(os.path.join(run, "feasibility.json")))["feasibility"]
        assert feas["kind"] == "corridor"
        assert feas["low_regime"]["viability_holds"]
        assert feas["high_regime"]["safety_holds"]
        corridor = json.load(open(os.path.join(run, "corridor.json")))["corridor"]
        assert corridor["mean_inside_fraction"] > 0.5
        assert os.path.exists(os.path.join(run, "excursions.csv"))

    def test_check_on_referenced_traces(self, tmp_path):
        cfg = self.check_config(tmp_path)
        out = tmp_path / "out"
        main(["simulate", "--config", str(cfg), "--out", str(out)])
        sim_run = only_run_dir(out)
        out2 = tmp_path / "out2"
        assert main(["check", "--config", str(cfg), "--out", str(out2),
                     "--traces", sim_run]) == 0
        run = only_run_dir(out2)
        assert os.path.exists(os.path.join(run, "feasibility.json"))

    def test_single_policy_check(self, tmp_path):
        cfg = write_config(tmp_path, simulation={"Z_0": 30, "horizon": 300,
                                                 "replicas": 2, "seed": 5})
        out = tmp_path / "out"
        assert main(["check", "--config", str(cfg), "--out", str(out)]) == 0
        feas = json.load(open(os.path.join(only_run_dir(out), "feasibility.json")))["feasibility"]
        assert feas["kind"] == "single"
        assert feas["a_eff_mode"]["single"] == "uniform_identity"
        assert feas["a_eff_interval"] == [5.0, 5.0]


class TestSweep:
    def base(self, tmp_path, sweep):
        return write_config(
            tmp_path,
            traps={"nodes": "all", "zeta": 0.05},
            policy={"A_l": 2, "q_fork": 0.2},
            simulation={"Z_0": 20, "horizon": 200, "replicas": 1, "seed": 11},
            sweep=sweep,
        )

    def read_rows(self, run):
        lines = [l.strip() for l in open(os.path.join(run, "sweep.csv"))
                 if l.strip() and not l.startswith("#")]
        header = lines[0].split(",")
        return [dict(zip(header, l.split(","))) for l in lines[1:]]

    def test_grid_size(self, tmp_path):
        cfg = self.base(tmp_path, {"q": [0.1, 0.2], "zeta_scale": [0.5, 1.0, 2.0]})
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
        rows = self.read_rows(only_run_dir(out))
        assert len(rows) == 6

    def test_single_point_matches_check(self, tmp_path):
        cfg_sweep = self.base(tmp_path, {"q": [0.2]})
        cfg_check = write_config(
            tmp_path, "check.json",
            traps={"nodes": "all", "zeta": 0.05},
            policy={"A_l": 2, "q_fork": 0.2},
            simulation={"Z_0": 20, "horizon": 200, "replicas": 1, "seed": 11},
        )
        out = tmp_path / "out"
        main(["sweep", "--config", str(cfg_sweep), "--out", str(out)])
        row = self.read_rows(only_run_dir(out))[0]
        out2 = tmp_path / "out2"
        main(["check", "--config", str(cfg_check), "--out", str(out2)])
        feas = json.load(open(os.path.join(only_run_dir(out2), "feasibility.json")))["feasibility"]
        assert float(row["viability_lhs"]) == pytest.approx(feas["viability_lhs"])
        assert float(row["safety_lhs"]) == pytest.approx(feas["safety_lhs"])
        assert int(row["viability"]) == int(feas["viability_holds"])

    def test_zeta_frontier_monotone(self, tmp_path):
        cfg = self.base(tmp_path, {"zeta_scale": [0.25, 0.5, 1.0, 2.0, 4.0, 8.0]})
        out = tmp_path / "out"
        main(["sweep", "--config", str(cfg), "--out", str(out)])
        rows = self.read_rows(only_run_dir(out))
        verdicts = [int(r["viability"]) for r in rows]
        # pass verdicts may flip to fail at most once along increasing pressure
        flips = sum(1 for a, b in zip(verdicts, verdicts[1:]) if a != b)
        assert flips <= 1
        assert all(a >= b for a, b in zip(verdicts, verdicts[1:]))

    def test_sweep_without_block_rejected(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
