"""Report figures.  Everything renders off-screen to files."""
from __future__ import annotations

from itertools import combinations
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bench import TimingRow, UniquenessReport  # noqa: E402
from .puf import Verdict  # noqa: E402

COLORS = {"real": "#1f77b4", "user": "#ff7f0e", "sys": "#2ca02c"}


def _human(size: int) -> str:
    for unit, scale in (("GiB", 1 << 30), ("MiB", 1 << 20), ("KiB", 1 << 10)):
        if size >= scale:
            return f"{size / scale:g} {unit}"
    return f"{size} B"


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_timing(rows: Sequence[TimingRow], path) -> Path:
    """Grouped bars of real/user/sys seconds per (size, process)."""
    labels = [f"{_human(r.file_size_bytes)}\n{r.process}" for r in rows]
    x = np.arange(len(rows))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(5, 1.3 * len(rows)), 4))
    for i, field in enumerate(("real", "user", "sys")):
        vals = [getattr(r, f"{field}_s") for r in rows]
        ax.bar(x + (i - 1) * width, [v if v is not None else 0.0 for v in vals], width,
               label=field, color=COLORS[field])
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("seconds (mean)")
    reps = sorted({r.repeats for r in rows})
    ax.set_title(f"Envelope timing, {'/'.join(map(str, reps))} repeats")
    ax.legend()
    return _save(fig, path)


def plot_uniqueness(report: UniquenessReport, path) -> Path:
    """Response bits per trial, with the verdict marked beside each row."""
    bits = np.array([r.response for r in report.table.rows], dtype=float)
    fig, ax = plt.subplots(figsize=(6, 0.25 * len(bits) + 1.5))
    ax.imshow(bits, cmap="Greys", aspect="auto", interpolation="nearest", vmin=0, vmax=1)
    for i, v in enumerate(report.per_row_verdicts):
        ax.text(bits.shape[1] + 0.3, i, "V" if v is Verdict.ACCEPTED else "x",
                color="green" if v is Verdict.ACCEPTED else "red", va="center", fontsize=8)
    ax.set_xlim(-0.5, bits.shape[1] + 1)
    ax.set_xlabel("response bit")
    ax.set_ylabel("trial")
    ax.set_title(f"Uniqueness {report.ratio:.1%} over {report.total_trials} trials")
    return _save(fig, path)


def plot_hd_histogram(responses: Sequence[np.ndarray], path, intra: Sequence[float] = ()) -> Path:
    """Histogram of pairwise fractional Hamming distances between instances."""
    inter = [np.mean(a != b) for a, b in combinations(responses, 2)]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    bins = np.linspace(0, 1, 51)
    ax.hist(inter, bins=bins, alpha=0.7, label="inter-instance")
    if len(intra):
        ax.hist(intra, bins=bins, alpha=0.7, label="intra-instance")
    ax.axvline(0.5, color="k", lw=0.8, ls="--")
    ax.set_xlabel("fractional Hamming distance")
    ax.set_ylabel("count")
    ax.legend()
    return _save(fig, path)
