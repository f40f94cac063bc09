"""Optional PNG rendering of the plot-data series (headless Agg backend).

Only used when a CLI command is run with ``--plot``; PNG metadata is fixed so
reruns produce identical bytes.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path) -> Path:
    from .reports import atomic_write

    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata={"Software": None})
    _pyplot().close(fig)
    return atomic_write(path, buf.getvalue())


def plot_ramp(levels_units, ideal_units, path, title="") -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    p = np.arange(len(levels_units))
    ax.step(p, levels_units, where="post", label="integer ramp")
    ax.plot(p, ideal_units, "o", ms=3, label="ideal inverse")
    ax.set_xlabel("ramp cycle index")
    ax.set_ylabel("level (unit steps)")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_error_decomposition(rows, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    bits = [r["bits"] for r in rows]
    ax.plot(bits, [r["quant_rmse"] for r in rows], "s-", label="quantization")
    ax.errorbar(bits, [r["mismatch_mean"] for r in rows], yerr=[r["mismatch_std"] for r in rows],
                fmt="o-", capsize=3, label="mismatch")
    ax.set_xlabel("resolution (bits)")
    ax.set_ylabel("RMSE (ramp LSB)")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_calibration(pre, post, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    bins = np.linspace(0, max(np.max(pre), np.max(post)) * 1.05 + 1e-9, 40)
    ax.hist(pre, bins=bins, alpha=0.6, label="before calibration")
    ax.hist(post, bins=bins, alpha=0.6, label="after calibration")
    ax.set_xlabel("column RMSE (LSB)")
    ax.set_ylabel("columns")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def plot_inl(rows, path, title="") -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    cols = sorted({r[0] for r in rows})
    for c in cols[:8]:
        sel = [r for r in rows if r[0] == c]
        ax.plot([r[1] for r in sel], [r[3] for r in sel], lw=0.8)
    sel = [r for r in rows if r[0] == cols[0]]
    ax.plot([r[1] for r in sel], [r[2] for r in sel], "k--", lw=1.2, label="ideal")
    ax.set_xlabel("code")
    ax.set_ylabel("transfer level (LSB)")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)
