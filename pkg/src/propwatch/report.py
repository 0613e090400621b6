"""Figure rendering for analysis reports.

Histograms render as bar charts next to their CSV twins so a run
directory carries both the plot data and a ready-to-view image.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .aggregator import Histogram  # noqa: E402
from .errors import OutputUnwritable  # noqa: E402

MS = 1_000_000


def render_histogram_png(
    hist: Histogram,
    path: str | Path,
    title: str = "",
    xlabel: str = "time slot (ms)",
    ylabel: str = "frequency",
) -> Path:
    """Draw one delta histogram as a bar chart PNG."""
    starts = [(hist.origin_ns + k * hist.bin_width_ns) / MS for k in range(len(hist.counts))]
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.bar(
        starts,
        hist.counts,
        width=hist.bin_width_ns / MS,
        align="edge",
        color="#4878a8",
        edgecolor="white",
        linewidth=0.5,
    )
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title, fontsize=10)
    ax.margins(x=0.01)
    fig.tight_layout()
    try:
        fig.savefig(path, dpi=140)
    except OSError as exc:
        raise OutputUnwritable(f"cannot write {path}: {exc}") from None
    finally:
        plt.close(fig)
    return Path(path)
