"""Thin-client CLI: every pipeline command goes through the service API.

Without --server the client talks to an in-process instance of the app over
an ASGI transport, so no socket server is needed; with --server (or
GOALSTACK_SERVER) the same requests hit a remote instance. `plot` is the one
local command - it only transforms a CSV into an SVG.

Exit codes: 0 ok, 2 config error, 3 contract violation.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        from fastapi.testclient import TestClient

    from .service.app import app

    return TestClient(app, raise_server_exceptions=False)


def _fail_from_response(resp) -> None:
    try:
        body = resp.json()
    except Exception:
        body = {"error": "unknown", "detail": resp.text}
    detail = body.get("detail", "")
    if isinstance(detail, list):  # pydantic validation errors
        detail = "; ".join(str(d.get("msg", d)) for d in detail)
        body = {"error": "config", "detail": detail}
    click.echo(f"error ({body.get('error', 'unknown')}): {detail}", err=True)
    if resp.status_code == 422:
        sys.exit(2)
    if body.get("error") == "contract":
        sys.exit(3)
    sys.exit(1)


def _post(server: str | None, route: str, payload: dict) -> dict:
    with _client(server) as client:
        resp = client.post(route, json=payload)
        if resp.status_code != 200:
            _fail_from_response(resp)
        return resp.json()


def _read_config(path: str | None) -> dict | None:
    if path is None:
        return None
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        click.echo(f"error (config): config file not found: {path}", err=True)
        sys.exit(2)
    except json.JSONDecodeError as e:
        click.echo(f"error (config): invalid JSON in {path}: {e}", err=True)
        sys.exit(2)


@click.group()
@click.option("--server", envvar="GOALSTACK_SERVER", default=None, help="Remote service URL; default runs in-process.")
@click.pass_context
def main(ctx, server):
    """Goal-oriented driving pipeline on synthetic scenarios."""
    ctx.obj = server


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8008, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


@main.command()
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(), help="Scenario JSON output path.")
@click.option("--horizon", default=20, show_default=True, type=int)
@click.option("--agents", default=4, show_default=True, type=int)
@click.option("--frame-rate", default=2.0, show_default=True, type=float)
@click.option("--half-extent", default=51.2, show_default=True, type=float)
@click.option("--ego-speed", default=4.0, show_default=True, type=float)
@click.option("--spawn-radius", default=35.0, show_default=True, type=float)
@click.option("--planted-obstacle-ahead-s", default=0.0, show_default=True, type=float)
@click.pass_obj
def gen(server, seed, out_path, horizon, agents, frame_rate, half_extent, ego_speed, spawn_radius, planted_obstacle_ahead_s):
    """Generate a synthetic scenario."""
    body = _post(
        server,
        "/scenarios/generate",
        {
            "seed": seed,
            "horizon": horizon,
            "n_agents": agents,
            "frame_rate": frame_rate,
            "half_extent": half_extent,
            "ego_speed": ego_speed,
            "spawn_radius": spawn_radius,
            "planted_obstacle_ahead_s": planted_obstacle_ahead_s,
            "out_path": str(Path(out_path).absolute()),
            "include_scenario": False,
        },
    )
    click.echo(f"wrote {body['path']} ({body['agents']} agents, {body['horizon']} frames)")


@main.command()
@click.option("--config", "config_path", default=None, type=click.Path(), help="Pipeline config JSON; default is the bundled smoke config.")
@click.option("--seed", default=None, type=int, help="Override the config seed.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--scenario", "scenario_path", default=None, type=click.Path(), help="Scenario JSON; default is the bundled smoke scenario.")
@click.option("--scenario-id", default="scenario", show_default=True)
@click.pass_obj
def run(server, config_path, seed, out_dir, scenario_path, scenario_id):
    """Run the pipeline on a single scenario."""
    body = _post(
        server,
        "/runs",
        {
            "out_dir": str(Path(out_dir).absolute()),
            "config": _read_config(config_path),
            "seed": seed,
            "scenario_path": str(Path(scenario_path).absolute()) if scenario_path else None,
            "scenario_id": scenario_id,
        },
    )
    manifest = body["manifest"]
    click.echo(f"content hash: {manifest['content_hash']}")
    for key, value in sorted(body["metrics"]["values"].items()):
        click.echo(f"{key}: {value:.6g}")


@main.command(name="eval")
@click.option("--config", "config_path", default=None, type=click.Path())
@click.option("--seed", default=None, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--scenarios", "scenarios_glob", required=True, help="Glob of scenario JSON files.")
@click.option("--noise-sweep", default=None, help="Comma-separated detection position stds to sweep.")
@click.pass_obj
def eval_cmd(server, config_path, seed, out_dir, scenarios_glob, noise_sweep):
    """Evaluate the pipeline over a scenario suite."""
    sweep = [float(x) for x in noise_sweep.split(",")] if noise_sweep else []
    body = _post(
        server,
        "/eval",
        {
            "out_dir": str(Path(out_dir).absolute()),
            "config": _read_config(config_path),
            "seed": seed,
            "scenarios_glob": scenarios_glob,
            "noise_sweep": sweep,
        },
    )
    click.echo(f"evaluated {len(body['scenario_ids'])} scenarios -> {body['out_dir']}")
    for key, value in sorted(body["report"]["values"].items()):
        click.echo(f"{key}: {value:.6g}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True), help="Trajectory CSV (t,x,y).")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--dt", default=None, type=float, help="Step length; default from the CSV t column.")
@click.option("--lam-xy", default=1.0, show_default=True, type=float)
@click.option("--lam-goal", default=1.0, show_default=True, type=float)
@click.option("--phi-weight", default=0.1, show_default=True, type=float)
@click.pass_obj
def smooth(server, in_path, out_path, dt, lam_xy, lam_goal, phi_weight):
    """Smooth a trajectory CSV through the kinematic-feasibility optimizer."""
    rows = [line.split(",") for line in Path(in_path).read_text().strip().split("\n")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    ts = [float(r[0]) for r in rows]
    target = [[float(r[1]), float(r[2])] for r in rows]
    if dt is None:
        if len(ts) < 2:
            click.echo("error (config): need at least 2 rows to infer dt", err=True)
            sys.exit(2)
        dt = ts[1] - ts[0]
    body = _post(
        server,
        "/smooth",
        {"target": target, "dt": dt, "lam_xy": lam_xy, "lam_goal": lam_goal, "phi_weights": [phi_weight] * 5},
    )
    lines = ["t,x,y"] + [f"{t!r},{x!r},{y!r}" for t, (x, y) in zip(ts, body["trajectory"])]
    Path(out_path).write_text("\n".join(lines) + "\n")
    click.echo(f"cost {body['cost_before']:.6g} -> {body['cost_after']:.6g} in {body['iterations']} iterations")


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True), help="CSV with a numeric x column followed by series columns.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--title", default="", help="Chart title.")
def plot(in_path, out_path, title):
    """Render a CSV (first column x, remaining columns series) to a static SVG."""
    from .artifacts import read_csv, write_svg_lines

    header, rows = read_csv(in_path)
    if len(header) < 2 or not rows:
        click.echo("error (config): CSV needs a header and at least one data row", err=True)
        sys.exit(2)
    numeric_rows = []
    for row in rows:
        try:
            numeric_rows.append([float(v) for v in row])
        except ValueError:
            continue
    if not numeric_rows:
        click.echo("error (config): no numeric rows to plot", err=True)
        sys.exit(2)
    xs = [r[0] for r in numeric_rows]
    series = {name: (xs, [r[i] for r in numeric_rows]) for i, name in enumerate(header) if i > 0}
    write_svg_lines(out_path, series, title=title or Path(in_path).stem)
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
