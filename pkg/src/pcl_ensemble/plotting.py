"""Static report figures. Uses the Agg backend; figures are only ever written to files."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

REPORT_RC = {
    "font.family": "serif",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # deterministic files for unchanged inputs
    "svg.hashsalt": "pcl-ensemble",
    "path.simplify": False,
}


def figsize(scale: float = 1.0, width_pt: float = 219.1):
    """Golden-ratio figure size for a fraction of an ACL column width."""
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    width = width_pt / 72.27 * scale * 1.6
    return width, width * golden


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {"Software": None} if path.suffix == ".png" else {}
    fig.savefig(path, metadata=metadata)
    plt.close(fig)
    return path


def plot_sweep(points, path: str | Path, reference: float | None = None) -> Path:
    """F1 against ensemble size."""
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=figsize())
        ns = [p.n for p in points]
        ax.plot(ns, [p.f1 for p in points], marker="o", ms=3, lw=1.2, color="C0", label="F1")
        ax.plot(ns, [p.precision for p in points], lw=0.8, ls="--", color="C1", label="precision")
        ax.plot(ns, [p.recall for p in points], lw=0.8, ls=":", color="C2", label="recall")
        if reference is not None:
            ax.axhline(reference, color="0.5", lw=0.6)
        ax.set_xlabel("ensemble size (top-N models)")
        ax.set_ylabel("dev score")
        ax.set_xlim(0.5, max(ns) + 0.5)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_family_summary(rows: Sequence[Mapping], path: str | Path) -> Path:
    """Grouped bars of averaged precision/recall/F1, one group per (family, variant) row."""
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=figsize(1.4))
        labels = [f"{r['family']}\n{r['variant']}" for r in rows]
        width = 0.27
        for k, metric in enumerate(("precision", "recall", "f1")):
            xs = [i + (k - 1) * width for i in range(len(rows))]
            ax.bar(xs, [r[metric] for r in rows], width, label=metric, color=f"C{k}")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(labels, rotation=45, ha="right")
        ax.set_ylim(0, 1)
        ax.set_ylabel("mean dev score")
        ax.legend(frameon=False, ncol=3)
        return _save(fig, path)
