"""Reports, CSV tables and SVG figures written by the command line.

Floats in reports are written as fixed-precision strings so that two runs
with the same configuration produce byte-identical files.  SVGs are
rendered by matplotlib with the date stamp and random ids disabled for the
same reason.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .config import SCHEMA  # noqa: E402

DIGITS = 6


def plain(obj, digits=DIGITS):
    """Convert numpy scalars/arrays and floats to JSON-safe, fixed-format values."""
    if isinstance(obj, dict):
        return {str(k): plain(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v, digits) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist(), digits)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.{digits}e}"
    if isinstance(obj, complex):
        return [plain(obj.real, digits), plain(obj.imag, digits)]
    return obj


def build_report(cfg, result, artifacts=(), extra=None):
    """The ``report_v1`` dictionary for a finished suite."""
    rep = {
        "schema": SCHEMA,
        "subcommand": cfg.subcommand,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "tolerances": plain(cfg.tolerances),
        "passed": bool(result.passed),
        "criteria": [c.to_dict(DIGITS) for c in result.criteria],
        "data": plain(result.data),
        "artifacts": sorted(str(a) for a in artifacts),
    }
    if extra:
        rep.update(plain(extra))
    return rep


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.12e}" if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def _save_svg(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": "lightray", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def heatmap_svg(path, images, titles, extent=(-1, 1, -1, 1), cmap="viridis"):
    """Side-by-side heatmaps; NaN pixels (outside the disc) are left blank."""
    fig, axes = plt.subplots(1, len(images), figsize=(4 * len(images), 3.6))
    axes = np.atleast_1d(axes)
    for ax, img, title in zip(axes, images, titles):
        im = ax.imshow(np.asarray(img).T, origin="lower", extent=extent, cmap=cmap)
        ax.set_title(title)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    return _save_svg(fig, path)


def sinogram_svg(path, values, axis1, title="sinogram"):
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(np.real(values), aspect="auto", origin="lower", cmap="magma",
                   extent=(0, values.shape[1], axis1[0], axis1[-1]))
    ax.set_xlabel("inflow sample")
    ax.set_ylabel("time shift T")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    return _save_svg(fig, path)


def histogram_svg(path, samples, title, xlabel):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, vals in samples.items():
        ax.hist(np.asarray(vals, dtype=float), bins=30, alpha=0.6, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save_svg(fig, path)


def line_svg(path, x, series, title, xlabel, ylabel, logy=True):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, y in series.items():
        ax.plot(x, y, marker="o", label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save_svg(fig, path)
