import json
import warnings

import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore", DeprecationWarning)
    from fastapi.testclient import TestClient

from goalstack.service.app import app


@pytest.fixture()
def client():
    with TestClient(app, raise_server_exceptions=False) as c:
        yield c


class TestHealthAndConfig:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"

    def test_default_config(self, client):
        body = client.get("/config/default").json()
        assert body["dim"] == 256
        assert body["map"]["n_things"] == 300

    def test_smoke_config(self, client):
        body = client.get("/config/smoke").json()
        assert body["dim"] == 64


class TestGenerate:
    def test_inline_scenario(self, client):
        resp = client.post("/scenarios/generate", json={"seed": 3, "horizon": 8, "n_agents": 2})
        assert resp.status_code == 200
        body = resp.json()
        assert body["horizon"] == 8
        assert body["scenario"]["schema"] == 1

    def test_write_to_path(self, client, tmp_path):
        out = tmp_path / "scen.json"
        resp = client.post(
            "/scenarios/generate",
            json={"seed": 3, "horizon": 8, "n_agents": 2, "out_path": str(out), "include_scenario": False},
        )
        assert resp.status_code == 200
        assert out.exists()
        assert resp.json()["scenario"] is None

    def test_deterministic(self, client):
        a = client.post("/scenarios/generate", json={"seed": 5, "horizon": 6}).json()
        b = client.post("/scenarios/generate", json={"seed": 5, "horizon": 6}).json()
        assert a["scenario"] == b["scenario"]

    def test_bad_spec_is_config_error(self, client):
        resp = client.post("/scenarios/generate", json={"seed": 1, "horizon": 0})
        assert resp.status_code == 422
        assert resp.json()["error"] == "config"


class TestRunAndEval:
    def test_run_smoke_default(self, client, tmp_path):
        resp = client.post("/runs", json={"out_dir": str(tmp_path / "run")})
        assert resp.status_code == 200
        body = resp.json()
        assert "content_hash" in body["manifest"]
        assert "amota" in body["metrics"]["values"]

    def test_run_rejects_bad_config(self, client, tmp_path):
        resp = client.post("/runs", json={"out_dir": str(tmp_path), "config": {"dim": 63}})
        assert resp.status_code == 422

    def test_run_missing_scenario_file(self, client, tmp_path):
        resp = client.post("/runs", json={"out_dir": str(tmp_path), "scenario_path": str(tmp_path / "nope.json")})
        assert resp.status_code == 422

    def test_eval_glob(self, client, tmp_path):
        for seed in (1, 2):
            client.post(
                "/scenarios/generate",
                json={
                    "seed": seed,
                    "horizon": 7,
                    "n_agents": 2,
                    "half_extent": 12.288,
                    "ego_speed": 1.0,
                    "speed_min": 1.0,
                    "speed_max": 1.5,
                    "spawn_radius": 8.0,
                    "out_path": str(tmp_path / f"s{seed}.json"),
                    "include_scenario": False,
                },
            )
        cfg = {
            "dim": 32,
            "heads": 4,
            "grid": {"h": 32, "w": 32, "half_extent": 12.288},
            "map": {"layers": 1, "n_things": 8},
            "motion": {"layers": 1, "modes": 3, "horizon": 4},
            "occ": {"blocks": 2},
            "plan": {"layers": 1},
        }
        resp = client.post(
            "/eval",
            json={"out_dir": str(tmp_path / "eval"), "config": cfg, "scenarios_glob": str(tmp_path / "s*.json")},
        )
        assert resp.status_code == 200
        body = resp.json()
        assert body["scenario_ids"] == ["s1", "s2"]
        assert (tmp_path / "eval" / "report.json").exists()

    def test_eval_without_scenarios(self, client, tmp_path):
        resp = client.post("/eval", json={"out_dir": str(tmp_path)})
        assert resp.status_code == 422


class TestRemoteServer:
    def test_cli_against_socket_server(self, tmp_path):
        import socket
        import threading
        import time

        import httpx
        import uvicorn

        from goalstack.cli import main as cli_main
        from click.testing import CliRunner

        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        config = uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error")
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        base = f"http://127.0.0.1:{port}"
        try:
            for _ in range(100):
                try:
                    if httpx.get(base + "/health", timeout=1.0).status_code == 200:
                        break
                except httpx.TransportError:
                    time.sleep(0.05)
            else:
                pytest.fail("server did not come up")
            out = tmp_path / "remote.json"
            res = CliRunner().invoke(
                cli_main,
                ["--server", base, "gen", "--seed", "2", "--out", str(out), "--horizon", "6", "--agents", "1"],
                catch_exceptions=False,
            )
            assert res.exit_code == 0, res.output
            assert out.exists()
        finally:
            server.should_exit = True
            thread.join(timeout=5)


class TestNoiseSweep:
    def test_sweep_writes_csv(self, tmp_path):
        from goalstack.config import config_from_dict
        from goalstack.pipeline import noise_sweep
        from goalstack.scene import GeneratorConfig, generate_scenario

        cfg = config_from_dict(
            {
                "dim": 32,
                "heads": 4,
                "grid": {"h": 32, "w": 32, "half_extent": 12.288},
                "map": {"layers": 1, "n_things": 8},
                "motion": {"layers": 1, "modes": 3, "horizon": 4},
                "occ": {"blocks": 2},
                "plan": {"layers": 1},
            }
        )
        spec = GeneratorConfig(horizon=6, n_agents=2, spawn_radius=8.0, speed_range=(1.0, 1.5), ego_speed=1.0, extent=cfg.grid.extent)
        scenarios = [("n0", generate_scenario(spec, 70))]
        rows = noise_sweep(cfg, scenarios, tmp_path / "sweep", [0.0, 0.3])
        assert len(rows) == 2
        assert rows[0][0] == 0.0 and rows[1][0] == 0.3
        csv = (tmp_path / "sweep" / "noise_sweep.csv").read_text()
        assert csv.startswith("pos_std,amota,min_ade,l2_avg,collision_avg")
        # zero-noise tracking stays at least as good as the noisy level
        assert rows[0][1] >= rows[1][1] - 1e-9


class TestSmoothEndpoint:
    def test_smooths(self, client):
        target = [[0, 0], [1, 0.8], [2, -0.8], [3, 0.8], [4, 0]]
        resp = client.post("/smooth", json={"target": target, "dt": 0.5})
        assert resp.status_code == 200
        body = resp.json()
        assert body["cost_after"] <= body["cost_before"]
        assert len(body["trajectory"]) == 5

    def test_rejects_short_target(self, client):
        resp = client.post("/smooth", json={"target": [[0, 0], [1, 1]], "dt": 0.5})
        assert resp.status_code == 422

    def test_rejects_bad_phi(self, client):
        resp = client.post("/smooth", json={"target": [[0, 0]] * 5, "dt": 0.5, "phi_weights": [1, 2]})
        assert resp.status_code == 422
