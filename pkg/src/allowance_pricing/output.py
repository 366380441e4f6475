"""CSV and manifest emission for reproducible runs.

Floats are written with 17 significant digits so a round trip through the
file reproduces the exact double; line endings are LF on every platform.
The manifest records the config snapshot, seed, version and a sha256 per
artifact: identical inputs must reproduce identical checksums.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np


def _f(x: float) -> str:
    return "%.17g" % float(x)


def _open(path: str):
    return open(path, "w", encoding="utf-8", newline="\n")


def write_curves_csv(path: str, rows: Iterable[Tuple[int, float, float]]) -> None:
    """Long-format curve export: one (t, g, alpha) row per node."""
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "g", "alpha"])
        for t, g, a in rows:
            w.writerow([t, _f(g), _f(a)])


def curve_rows(times: Sequence[int], grid: np.ndarray, curves: Sequence[np.ndarray]):
    for t, vals in zip(times, curves):
        for g, a in zip(grid, vals):
            yield t, g, a


def write_comparison_csv(
    path: str,
    grid: np.ndarray,
    times: Sequence[int],
    first: Sequence[np.ndarray],
    second: Sequence[np.ndarray],
    labels: Tuple[str, str],
) -> None:
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "g", f"alpha_{labels[0]}", f"alpha_{labels[1]}", "diff"])
        for t, a, b in zip(times, first, second):
            for g, x, y in zip(grid, a, b):
                w.writerow([t, _f(g), _f(x), _f(y), _f(x - y)])


def write_residuals_csv(path: str, histories: Sequence[Sequence[float]]) -> None:
    """Inner-iteration residuals: one row per (period, iteration)."""
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "iteration", "residual"])
        for t, hist in enumerate(histories):
            for i, r in enumerate(hist, start=1):
                w.writerow([t, i, _f(r)])


def write_convergence_csv(path: str, rows: Sequence[dict]) -> None:
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_time", "n_space", "dt", "dg", "error"])
        for row in rows:
            w.writerow(
                [row["n_time"], row["n_space"], _f(row["dt"]), _f(row["dg"]), _f(row["error"])]
            )


def write_bucket_csv(path: str, report) -> None:
    """Martingale diagnostic buckets plus the terminal-mean summary row."""
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "bucket", "n_buckets", "state_lo", "state_hi", "count", "mean", "stderr", "flagged"])
        for b in report.buckets:
            w.writerow(
                [b.time, b.index, b.n_buckets, _f(b.state_lo), _f(b.state_hi),
                 b.count, _f(b.mean), _f(b.stderr), int(b.flagged)]
            )
        w.writerow(
            ["terminal", "", "", "", "", report.n_paths,
             _f(report.terminal_mean), _f(report.terminal_stderr), int(report.terminal_flagged)]
        )


def write_text(path: str, text: str) -> None:
    with _open(path) as fh:
        fh.write(text)
        if not text.endswith("\n"):
            fh.write("\n")


def sha256_of(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    path: str,
    config_text: str,
    seed: int,
    version: str,
    wall_clock_s: float,
    artifacts: Sequence[str],
    workers: Optional[int] = None,
) -> Dict:
    """Checksum every artifact and snapshot the run inputs next to them."""
    manifest = {
        "version": version,
        "seed": seed,
        "workers": workers,
        "wall_clock_s": wall_clock_s,
        "config": config_text,
        "artifacts": {os.path.basename(p): sha256_of(p) for p in sorted(artifacts)},
    }
    with _open(path) as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
