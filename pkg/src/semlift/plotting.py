"""Figures for lift reports: oracle vs lifted matrices and check deviations."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import spl  # noqa: E402
from .lifter import KernelOracle, LiftTrace  # noqa: E402

FLOOR = 1e-18


def plot_matrices(oracle: np.ndarray, lifted: np.ndarray | None, title: str, path: Path) -> Path:
    panels = [("kernel oracle", oracle)]
    if lifted is not None:
        panels += [("closed SPL", lifted), ("|difference|", np.abs(oracle - lifted))]
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 4), squeeze=False)
    for ax, (name, mat) in zip(axes[0], panels):
        im = ax.imshow(mat, cmap="RdBu_r" if name != "|difference|" else "viridis", interpolation="nearest")
        ax.set_title(name)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_deviations(trace: LiftTrace, tol: float, path: Path) -> Path:
    labels, values = [], []
    for s in trace.steps:
        for n, d in s.checks:
            labels.append(f"{s.rule}\nn={n}")
            values.append(d)
    if trace.closed:
        for e in trace.closed.evidence:
            labels.append(f"{e['check']}\nn={e['size']}")
            values.append(e["deviation"])
    for f in trace.failures:
        for n, d in f.deviations:
            labels.append(f"{f.stage} (failed)\nn={n}")
            values.append(d)
    fig, ax = plt.subplots(figsize=(max(6, 0.5 * len(values) + 2), 4))
    shown = [max(v, FLOOR) if np.isfinite(v) else 1e3 for v in values]
    colors = ["tab:blue" if v <= tol else "tab:red" for v in values]
    ax.bar(range(len(shown)), shown, color=colors)
    ax.axhline(tol, color="k", linestyle="--", linewidth=1, label=f"tolerance {tol:g}")
    ax.set_yscale("log")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_ylabel("max abs deviation")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_figures(trace: LiftTrace, oracle: KernelOracle | None, out_dir: str | Path, stem: str, tol: float) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [plot_deviations(trace, tol, out_dir / f"{stem}_deviations.png")]
    if oracle is not None:
        sizes = trace.closed.checked_sizes if trace.closed else []
        n = max(sizes) if sizes else 4
        try:
            mat = oracle.matrix(n)
        except Exception:  # an unrunnable kernel just gets no matrix figure
            return written
        lifted = None
        if trace.closed is not None:
            lifted = spl.as_real_operator(trace.closed.expr, mat.shape, bindings={oracle.fn.size_param: n})
        title = f"{trace.entry} at n={n}"
        written.append(plot_matrices(mat, lifted, title, out_dir / f"{stem}_matrices.png"))
    return written
