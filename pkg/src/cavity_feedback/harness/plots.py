"""SVG line charts drawn from written CSV outputs.

Plots are a convenience: they are not hashed into the manifest and nothing reads them back.
Requires matplotlib (``pip install cavity-feedback[plot]``).
"""
from __future__ import annotations

import csv
import fnmatch
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class Chart:
    pattern: str
    x: str
    ys: tuple[str, ...]
    suffix: str = ""
    group: str | None = None
    logx: bool = False
    logy: bool = False


CHARTS = (
    Chart("decay_*.csv", "t", ("abs_C",), logy=True),
    Chart("survival.csv", "t", ("fraction",)),
    Chart("sweep_tm.csv", "t_m", ("abs_C1", "abs_C1_analytic", "abs_C1_no_decay"), "_coherence"),
    Chart("sweep_tm.csv", "t_m", ("tphi", "tphi_analytic", "tphi_idle"), "_tphi", logy=True),
    Chart("sweep_heating.csv", "gamma_up", ("gamma_phi", "gamma_phi_analytic"), group="mode"),
    Chart("hmm_trace.csv", "iteration", ("log_likelihood",)),
)


def _read(path: Path) -> list[dict[str, str]]:
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _series(rows, x, y):
    pts = [(float(r[x]), float(r[y])) for r in rows]
    return [p for p in pts if p[1] == p[1]]


def render(out_dir: Path, names) -> list[Path]:
    """Write one SVG per matching chart into ``out_dir/plots``; returns the paths written."""
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    written = []
    for chart in CHARTS:
        for name in sorted(n for n in names if fnmatch.fnmatch(n, chart.pattern)):
            rows = _read(out_dir / name)
            if not rows:
                continue
            groups = sorted({r[chart.group] for r in rows}) if chart.group else [None]
            fig, ax = plt.subplots(figsize=(6, 4))
            for g in groups:
                sub = [r for r in rows if g is None or r[chart.group] == g]
                for y in chart.ys:
                    pts = _series(sub, chart.x, y)
                    if pts:
                        label = y if g is None else f"{g} {y}"
                        ax.plot(*zip(*pts), marker="o" if y in ("abs_C1", "tphi", "gamma_phi") else None,
                                label=label)
            ax.set_xlabel(chart.x)
            ax.set_xscale("log" if chart.logx else "linear")
            ax.set_yscale("log" if chart.logy else "linear")
            ax.legend(fontsize="small")
            fig.tight_layout()
            target = out_dir / "plots" / f"{Path(name).stem}{chart.suffix}.svg"
            target.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(target, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(target)
    return written
