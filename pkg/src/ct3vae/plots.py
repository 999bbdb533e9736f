"""Matplotlib figure rendering for the report paths.

Figures are written as SVG next to the CSV they illustrate.  Output is kept
byte-deterministic: a fixed hash salt for element ids and no embedded
creation date.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "ct3vae"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def line_plot(path, x_values, series, xlabel, ylabel, title=None, logx=False):
    """One line per entry of ``series`` (name -> y values) over shared x."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name in sorted(series):
        ax.plot(x_values, series[name], marker="o", label=name)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def bar_plot(path, labels, series, xlabel, ylabel, title=None):
    """Grouped bars: ``series`` maps a name to one value per label."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    names = sorted(series)
    width = 0.8 / max(len(names), 1)
    for j, name in enumerate(names):
        offsets = [i + j * width for i in range(len(labels))]
        ax.bar(offsets, series[name], width=width, label=name)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(labels))])
    ax.set_xticklabels([str(lab) for lab in labels])
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(names) > 1:
        ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
