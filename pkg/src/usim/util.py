"""Shared plumbing: seeded RNG streams, JSON helpers, tiny SVG charts."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


def make_rng(*seed_parts: int) -> np.random.Generator:
    """Deterministic generator keyed by an integer tuple.

    Derived streams (per dialogue, per epoch, ...) use the same root seed plus
    distinguishing indices, so results do not depend on execution order.
    """
    return np.random.default_rng(list(seed_parts))


def canonical_json(obj: Any) -> str:
    """Stable serialization used for fingerprints and byte-identical outputs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def fingerprint(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def stable_hash(text: str) -> int:
    """Process-independent 63-bit hash (python's hash() is salted per run)."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big") >> 1


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str | Path) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_jsonl(path: str | Path, rows: Iterable[Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(canonical_json(row))
            fh.write("\n")


def read_jsonl(path: str | Path) -> list[Any]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def parallel_map(fn, items: Sequence[Any], jobs: int = 1) -> list[Any]:
    """Map over independent work items; jobs > 1 uses a process pool.

    Every item must carry its own seed so the result is order-independent.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def cpu_jobs(requested: int | None) -> int:
    if requested is not None and requested > 0:
        return requested
    return max(1, os.cpu_count() or 1)


def svg_line_chart(
    series: dict[str, Sequence[float]],
    path: str | Path,
    title: str = "",
    x_label: str = "epoch",
    y_label: str = "",
    width: int = 640,
    height: int = 400,
) -> None:
    """Minimal multi-series line chart, no plotting dependency."""
    pad = 50
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    all_vals = [v for vs in series.values() for v in vs if np.isfinite(v)]
    if not all_vals:
        all_vals = [0.0, 1.0]
    y_min, y_max = min(all_vals), max(all_vals)
    if y_max - y_min < 1e-12:
        y_max = y_min + 1.0
    n = max((len(vs) for vs in series.values()), default=2)
    n = max(n, 2)

    def sx(i: float) -> float:
        return pad + (width - 2 * pad) * i / (n - 1)

    def sy(v: float) -> float:
        return height - pad - (height - 2 * pad) * (v - y_min) / (y_max - y_min)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="11">{x_label}</text>',
        f'<text x="12" y="{height / 2}" font-size="11" transform="rotate(-90 12 {height / 2})" text-anchor="middle">{y_label}</text>',
        f'<text x="{pad - 6}" y="{sy(y_min) + 4}" text-anchor="end" font-size="10">{y_min:.3g}</text>',
        f'<text x="{pad - 6}" y="{sy(y_max) + 4}" text-anchor="end" font-size="10">{y_max:.3g}</text>',
    ]
    for idx, (name, vals) in enumerate(series.items()):
        color = colors[idx % len(colors)]
        pts = " ".join(f"{sx(i):.1f},{sy(v):.1f}" for i, v in enumerate(vals))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(
            f'<text x="{width - pad + 4}" y="{pad + 14 * idx}" font-size="10" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(parts), encoding="utf-8")
