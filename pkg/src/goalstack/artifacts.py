"""Artifact writers: PGM grids, JSONL streams, CSV tables, static SVG plots,
and content digests for reproducibility checks."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def write_pgm(path, grid: np.ndarray) -> None:
    """Binary P5 PGM; values are clipped to [0, 255] (ids render mod 256)."""
    arr = np.asarray(grid)
    if arr.dtype.kind in "iu":
        data = (arr.astype(np.int64) % 256).astype(np.uint8)
    else:
        data = np.clip(arr * 255, 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    parts = raw.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=h * w).reshape(h, w)


def write_f32_grid(path, grid: np.ndarray) -> None:
    """Raw little-endian f32 payload with a one-line ASCII header."""
    arr = np.ascontiguousarray(grid, dtype="<f4")
    with open(path, "wb") as f:
        f.write(f"GSF32 {' '.join(map(str, arr.shape))}\n".encode())
        f.write(arr.tobytes())


def write_jsonl(path, records) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> list:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_csv(path, header: list, rows: list) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[list, list]:
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def content_hash(root, paths) -> str:
    """Digest over (relative path, file digest) pairs, order-independent."""
    root = Path(root)
    entries = sorted((str(Path(p).relative_to(root)), file_sha256(p)) for p in paths)
    h = hashlib.sha256()
    for rel, digest in entries:
        h.update(rel.encode())
        h.update(digest.encode())
    return h.hexdigest()


def write_svg_lines(path, series: dict, title: str = "", width: int = 640, height: int = 400) -> None:
    """Minimal deterministic SVG line chart: series maps label -> (xs, ys)."""
    pad = 50
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    if not xs_all:
        Path(path).write_text("<svg xmlns='http://www.w3.org/2000/svg'/>")
        return
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = min(ys_all), max(ys_all)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]
    parts = [
        f"<svg xmlns='http://www.w3.org/2000/svg' width='{width}' height='{height}'>",
        f"<rect width='{width}' height='{height}' fill='white'/>",
        f"<text x='{width / 2}' y='20' text-anchor='middle' font-size='14'>{title}</text>",
        f"<line x1='{pad}' y1='{height - pad}' x2='{width - pad}' y2='{height - pad}' stroke='black'/>",
        f"<line x1='{pad}' y1='{pad}' x2='{pad}' y2='{height - pad}' stroke='black'/>",
        f"<text x='{pad}' y='{height - pad + 16}' font-size='10'>{x0:.3g}</text>",
        f"<text x='{width - pad}' y='{height - pad + 16}' text-anchor='end' font-size='10'>{x1:.3g}</text>",
        f"<text x='{pad - 4}' y='{height - pad}' text-anchor='end' font-size='10'>{y0:.3g}</text>",
        f"<text x='{pad - 4}' y='{pad}' text-anchor='end' font-size='10'>{y1:.3g}</text>",
    ]
    for idx, (label, (xs, ys)) in enumerate(sorted(series.items())):
        color = colors[idx % len(colors)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f"<polyline points='{pts}' fill='none' stroke='{color}' stroke-width='1.5'/>")
        parts.append(f"<text x='{width - pad + 4}' y='{pad + 14 * idx}' font-size='10' fill='{color}'>{label}</text>")
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))
