"""PNG figures for report tables (Agg backend, no display needed)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .output import OutputBundle, Table  # noqa: E402


def _columns(table: Table) -> dict[str, np.ndarray]:
    data = np.array(table.rows, dtype=float).reshape(len(table.rows), len(table.header))
    return {name: data[:, i] for i, name in enumerate(table.header)}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_branch_weights(table: Table, path: Path) -> Path:
    c = _columns(table)
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, label in (("w_branch1", "branch 1"), ("w_branch2", "branch 2"),
                       ("w_gap", "gap"), ("w_empty", "empty branch")):
        ax.semilogy(c["t"], np.maximum(c[key], 1e-16), label=label)
    ax.set_xlabel("t")
    ax.set_ylabel("ensemble-mean weight")
    ax.set_ylim(1e-6, 2)
    ax.legend()
    return _save(fig, path)


def plot_h_functions(tables: dict[str, Table], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, table in sorted(tables.items()):
        c = _columns(table)
        label = name.removesuffix(".csv").replace("h_function", "").strip("_") or "main"
        ax.plot(c["t"], c["H"], label=label)
    ax.set_xlabel("t")
    ax.set_ylabel("coarse-grained H")
    ax.legend()
    return _save(fig, path)


def plot_marginals(table: Table, path: Path) -> Path:
    c = _columns(table)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(c["x"], c["setting_a"], label="setting a")
    ax.plot(c["x"], c["setting_b"], "--", label="setting b")
    ax.set_xlabel("x (second particle)")
    ax.set_ylabel("ensemble-mean marginal")
    ax.legend()
    return _save(fig, path)


def plot_rates(table: Table, path: Path) -> Path | None:
    c = _columns(table)
    fig, ax = plt.subplots(figsize=(6, 4))
    if "y" not in c:
        ax.plot(c["x"], c["rate_full"], label="full integral")
        ax.plot(c["x"], c["rate_gradient"], "--", label="gradient expansion")
        ax.set_xlabel("x")
        ax.set_ylabel("density rate")
        ax.legend()
    elif "z" not in c:
        n = int(round(np.sqrt(len(c["x"]))))
        img = ax.imshow(c["rate_full"].reshape(n, n).T, origin="lower",
                        extent=(c["x"].min(), c["x"].max(), c["y"].min(), c["y"].max()))
        fig.colorbar(img, ax=ax, label="density rate (full integral)")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
    else:
        plt.close(fig)
        return None
    return _save(fig, path)


def plot_density(table: Table, path: Path) -> Path | None:
    c = _columns(table)
    if "y" in c:
        return None
    times = np.unique(c["t"])
    xs = np.unique(c["x"])
    grid = c["value"].reshape(len(times), len(xs))
    fig, ax = plt.subplots(figsize=(6, 4))
    img = ax.imshow(grid, aspect="auto", origin="lower",
                    extent=(xs.min(), xs.max(), times.min(), times.max()))
    fig.colorbar(img, ax=ax, label="<D>")
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    return _save(fig, path)


def plot_sweep(table: Table, path: Path) -> Path:
    c = _columns(table)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(c["amplification"], c["decay_rate"], "o-")
    ax.set_xlabel("amplification A")
    ax.set_ylabel("fitted empty-branch decay rate")
    return _save(fig, path)


_SINGLE = {
    "branch_weights.csv": plot_branch_weights,
    "marginals.csv": plot_marginals,
    "rates.csv": plot_rates,
    "density.csv": plot_density,
    "sweep.csv": plot_sweep,
}


def render_figures(bundles: list[OutputBundle], directory, counts=None) -> dict[str, Path]:
    """One PNG per plottable table, named after the CSV it shows."""
    out = Path(directory)
    counts = counts or {}
    written: dict[str, Path] = {}
    for b in bundles:
        prefix = lambda name: name if counts.get(name, 1) == 1 else f"{b.name}_{name}"
        for name, table in b.tables.items():
            if name in _SINGLE and table.rows:
                fname = prefix(name).removesuffix(".csv") + ".png"
                path = _SINGLE[name](table, out / fname)
                if path is not None:
                    written[fname] = path
        h_tables = {n: t for n, t in b.tables.items() if n.startswith("h_function") and t.rows}
        if h_tables:
            fname = prefix("h_function.csv").removesuffix(".csv") + ".png"
            written[fname] = plot_h_functions(h_tables, out / fname)
    return written
