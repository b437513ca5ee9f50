"""Static SVG line charts of the CSV diagnostics."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import read_csv  # noqa: E402

# fixed salt and no timestamp keep the SVG output reproducible
plt.rcParams["svg.hashsalt"] = "flatpop"
plt.rcParams["figure.figsize"] = (6.0, 3.6)
plt.rcParams["axes.linewidth"] = 0.6

_LOG_COLUMNS = {"mass", "atoms", "distance", "aeg_distance", "error_bound"}


def line_chart(x: Sequence[float], series: dict[str, Sequence[float]], out: str | Path,
               xlabel: str = "t", title: str | None = None, log: bool = False) -> Path:
    """Draw one line per entry of ``series`` against ``x`` and save as SVG."""
    fig, ax = plt.subplots()
    try:
        for name, y in series.items():
            ax.plot(x, y, lw=1.2, label=name)
        if log:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend(frameon=False)
        ax.grid(alpha=0.3, lw=0.4)
        fig.tight_layout()
        out = Path(out)
        fig.savefig(out, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return out


def plot_csv(csv_path: str | Path, out: str | Path | None = None) -> list[Path]:
    """Render every non-time column of a diagnostics CSV to its own SVG.

    Columns whose values are all positive and which usually span decades
    (mass, distances, atom counts) get a log axis.  Returns the written paths.
    """
    csv_path = Path(csv_path)
    header, rows = read_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} has no data rows")
    cols = list(zip(*rows))
    x = cols[0]
    written = []
    for name, y in zip(header[1:], cols[1:]):
        target = Path(out) if out is not None and len(header) == 2 else csv_path.with_name(f"{csv_path.stem}_{name}.svg")
        log = name in _LOG_COLUMNS and all(v > 0 for v in y)
        written.append(line_chart(x, {name: y}, target, xlabel=header[0], title=name, log=log))
    return written
