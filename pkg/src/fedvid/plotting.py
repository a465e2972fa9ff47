"""Figure helpers for report bundles.

Every function draws onto a fresh figure, writes it next to the CSV output
and closes it. The Agg backend is forced so plotting works headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _figure(width=4.5, aspect=0.62):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(width, width * aspect))
    return fig, ax


def _save(fig, path, formats=("png",)) -> list[Path]:
    path = Path(path)
    out = []
    with plt.rc_context(RC):
        for fmt in formats:
            p = path.with_suffix("." + fmt)
            fig.savefig(p, format=fmt)
            out.append(p)
    plt.close(fig)
    return out


def line_chart(series: dict, path, xlabel: str, ylabel: str, title: str = "",
               hline: tuple[float, str] | None = None, formats=("png",)) -> list[Path]:
    """``series`` maps a legend label to ``(x, y)`` sequences."""
    fig, ax = _figure()
    for label, (x, y) in series.items():
        ax.plot(x, y, marker="o", markersize=3, linewidth=1.2, label=label)
    if hline is not None:
        ax.axhline(hline[0], color="0.4", linestyle="--", linewidth=1, label=hline[1])
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path, formats)


def bar_chart(labels, groups: dict, path, ylabel: str, title: str = "",
              errors: dict | None = None, formats=("png",)) -> list[Path]:
    """Grouped bars: ``groups`` maps a series name to one value per label."""
    fig, ax = _figure(width=max(4.5, 0.55 * len(labels) * len(groups)))
    x = np.arange(len(labels))
    width = 0.8 / max(len(groups), 1)
    for i, (name, values) in enumerate(groups.items()):
        err = errors.get(name) if errors else None
        ax.bar(x + (i - (len(groups) - 1) / 2) * width, values, width, yerr=err,
               capsize=2, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(groups) > 1:
        ax.legend(frameon=False)
    return _save(fig, path, formats)


def contour_grid(a, b, loss, path, title: str = "", formats=("png",)) -> list[Path]:
    fig, ax = _figure(width=4.0, aspect=0.9)
    loss = np.asarray(loss)
    if len(b) == 1:
        ax.plot(a, loss[0], linewidth=1.2)
        ax.set_xlabel("a")
        ax.set_ylabel("loss")
    else:
        cs = ax.contour(a, b, loss, levels=20, linewidths=0.8)
        ax.clabel(cs, fontsize=6, inline=True)
        ax.plot([0.0], [0.0], marker="x", color="k")
        ax.set_xlabel("a")
        ax.set_ylabel("b")
    if title:
        ax.set_title(title)
    return _save(fig, path, formats)
