import json
from pathlib import Path

import numpy as np
from click.testing import CliRunner

from goalstack.cli import main

TINY_CFG = {
    "dim": 32,
    "heads": 4,
    "grid": {"h": 32, "w": 32, "half_extent": 12.288},
    "map": {"layers": 1, "n_things": 8},
    "motion": {"layers": 1, "modes": 3, "horizon": 4},
    "occ": {"blocks": 2},
    "plan": {"layers": 1},
}


def invoke(*args):
    return CliRunner().invoke(main, args, catch_exceptions=False)


def gen_args(out, seed=3, horizon=7):
    return [
        "gen", "--seed", str(seed), "--out", str(out), "--horizon", str(horizon), "--agents", "2",
        "--half-extent", "12.288", "--ego-speed", "1.0", "--spawn-radius", "8.0",
    ]


class TestGen:
    def test_writes_scenario(self, tmp_path):
        out = tmp_path / "scen.json"
        res = invoke(*gen_args(out))
        assert res.exit_code == 0, res.output
        payload = json.loads(out.read_text())
        assert payload["schema"] == 1

    def test_bad_spec_exit_2(self, tmp_path):
        res = invoke("gen", "--seed", "1", "--out", str(tmp_path / "x.json"), "--horizon", "0")
        assert res.exit_code == 2


class TestRun:
    def test_run_with_config_and_scenario(self, tmp_path):
        scen = tmp_path / "scen.json"
        invoke(*gen_args(scen))
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(TINY_CFG))
        res = invoke("run", "--config", str(cfg), "--out", str(tmp_path / "run"), "--scenario", str(scen))
        assert res.exit_code == 0, res.output
        assert "content hash:" in res.output
        assert (tmp_path / "run" / "manifest.json").exists()

    def test_seed_override_changes_hash(self, tmp_path):
        scen = tmp_path / "scen.json"
        invoke(*gen_args(scen))
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(TINY_CFG))
        out_a = invoke("run", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "a"), "--scenario", str(scen)).output
        out_b = invoke("run", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "b"), "--scenario", str(scen)).output
        hash_a = out_a.split("content hash: ")[1].split("\n")[0]
        hash_b = out_b.split("content hash: ")[1].split("\n")[0]
        assert hash_a != hash_b

    def test_missing_config_exit_2(self, tmp_path):
        res = invoke("run", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "o"))
        assert res.exit_code == 2

    def test_invalid_config_exit_2(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"dim": 63}))
        res = invoke("run", "--config", str(cfg), "--out", str(tmp_path / "o"))
        assert res.exit_code == 2

    def test_contract_violation_exit_3(self, tmp_path):
        scen = tmp_path / "scen.json"
        invoke(*gen_args(scen))
        payload = json.loads(scen.read_text())
        payload["command"] = ["teleport"] * len(payload["command"])  # invalid label
        scen.write_text(json.dumps(payload))
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(TINY_CFG))
        res = invoke("run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--scenario", str(scen))
        assert res.exit_code == 3
        assert "bev-scene" in res.output or "contract" in res.output


class TestEval:
    def test_eval_glob(self, tmp_path):
        for seed in (1, 2):
            invoke(*gen_args(tmp_path / f"s{seed}.json", seed=seed))
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(TINY_CFG))
        res = invoke("eval", "--config", str(cfg), "--out", str(tmp_path / "eval"), "--scenarios", str(tmp_path / "s*.json"))
        assert res.exit_code == 0, res.output
        assert "evaluated 2 scenarios" in res.output
        assert (tmp_path / "eval" / "report.json").exists()
        assert (tmp_path / "eval" / "metrics.csv").exists()

    def test_eval_no_match_exit_2(self, tmp_path):
        res = invoke("eval", "--out", str(tmp_path / "e"), "--scenarios", str(tmp_path / "nothing*.json"))
        assert res.exit_code == 2


class TestSmooth:
    def test_smooth_roundtrip(self, tmp_path):
        t = np.arange(8) * 0.5
        xs = np.arange(8) * 1.0
        ys = 0.7 * (-1.0) ** np.arange(8)
        src = tmp_path / "traj.csv"
        src.write_text("t,x,y\n" + "\n".join(f"{a},{b},{c}" for a, b, c in zip(t, xs, ys)) + "\n")
        dst = tmp_path / "smoothed.csv"
        res = invoke("smooth", "--in", str(src), "--out", str(dst))
        assert res.exit_code == 0, res.output
        lines = dst.read_text().strip().split("\n")
        assert lines[0] == "t,x,y"
        assert len(lines) == 9
        smoothed_y = [float(l.split(",")[2]) for l in lines[1:]]
        # interior zigzag flattens; the endpoint stays pinned by the goal term
        assert max(abs(v) for v in smoothed_y[:-1]) < 0.7


class TestPlot:
    def test_plot_csv_to_svg(self, tmp_path):
        src = tmp_path / "curve.csv"
        src.write_text("horizon_s,l2_m,collision_rate\n1.0,0.5,0.0\n2.0,1.1,0.01\n3.0,1.9,0.05\n")
        dst = tmp_path / "curve.svg"
        res = invoke("plot", "--in", str(src), "--out", str(dst))
        assert res.exit_code == 0, res.output
        svg = dst.read_text()
        assert svg.startswith("<svg") and "polyline" in svg

    def test_plot_empty_exit_2(self, tmp_path):
        src = tmp_path / "empty.csv"
        src.write_text("a,b\n")
        res = invoke("plot", "--in", str(src), "--out", str(tmp_path / "x.svg"))
        assert res.exit_code == 2
