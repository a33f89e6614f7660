"""Figure rendering from experiment CSVs.

Every renderer validates its input schema first and fails loudly on missing
columns or empty data; no science is recomputed here.  Output is rasterized
deterministically: fixed style, fixed dpi, no timestamps, so identical inputs
produce identical bytes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

KINDS = ("phase", "sweep", "acf", "schematic")

REQUIRED_COLUMNS = {
    "phase": {"R", "delta", "snr", "kappa", "margin"},
    "sweep": {"snr", "method", "sw_median", "sw_p25", "sw_p75"},
    "acf": {"beta", "variant", "lag", "acf"},
    "schematic": {"stage", "x1", "x2"},
}

STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
}


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class FigureSpec:
    inputs: tuple[Path, ...]
    kind: str
    output: Path
    title: str = ""
    style_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if not self.inputs:
            raise SchemaError("at least one input file is required")


def read_table(path: Path, kind: str) -> dict[str, np.ndarray]:
    """Load a CSV as named columns, enforcing the kind's schema."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file {path} does not exist")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file, no header")
        missing = REQUIRED_COLUMNS[kind] - set(reader.fieldnames)
        if missing:
            raise SchemaError(f"{path}: missing columns {sorted(missing)} for kind {kind!r}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    table: dict[str, np.ndarray] = {}
    for name in reader.fieldnames:
        values = [row[name] for row in rows]
        try:
            table[name] = np.array([float(v) for v in values])
        except ValueError:
            table[name] = np.array(values)
    return table


def _finalize(fig, spec: FigureSpec) -> Path:
    if spec.title:
        fig.suptitle(spec.title)
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.output, metadata={"Software": None})
    plt.close(fig)
    return spec.output


def render_phase(spec: FigureSpec) -> Path:
    """Contour panels of the certificate margin; the zero level is drawn
    heavy, tracing the boundary of the certified region."""
    tables = [read_table(p, "phase") for p in spec.inputs]
    presets = []
    for table in tables:
        for key in sorted(set(zip(table["R"], table["delta"]))):
            mask = (table["R"] == key[0]) & (table["delta"] == key[1])
            presets.append((key, {c: table[c][mask] for c in ("snr", "kappa", "margin")}))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(presets), figsize=(4.2 * len(presets), 3.6),
                                 squeeze=False)
        for ax, ((radius, delta), data) in zip(axes[0], presets):
            snr = np.unique(data["snr"])
            kappa = np.unique(data["kappa"])
            grid = np.full((len(snr), len(kappa)), np.nan)
            si = np.searchsorted(snr, data["snr"])
            ki = np.searchsorted(kappa, data["kappa"])
            grid[si, ki] = data["margin"]
            if np.isnan(grid).any():
                raise SchemaError("phase grid is not a full (snr, kappa) product")
            finite = np.where(np.isfinite(grid), grid, np.nanmax(grid[np.isfinite(grid)]))
            ax.contourf(kappa, snr, finite, levels=12, cmap="RdBu", alpha=0.75)
            if (finite.min() < 0) and (finite.max() > 0):
                ax.contour(kappa, snr, finite, levels=[0.0], colors="k", linewidths=2.0)
            ax.set_yscale("log")
            ax.set_xlabel("condition number")
            ax.set_ylabel("snr")
            ax.set_title(f"R={radius:g}, delta={delta:g}")
    return _finalize(fig, spec)


def render_sweep(spec: FigureSpec) -> Path:
    """Median curves per method with quartile bands, on log-log axes."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.2, 3.8))
        for path in spec.inputs:
            table = read_table(path, "sweep")
            for method in sorted(set(table["method"])):
                mask = table["method"] == method
                order = np.argsort(table["snr"][mask])
                snr = table["snr"][mask][order]
                med = table["sw_median"][mask][order]
                lo = table["sw_p25"][mask][order]
                hi = table["sw_p75"][mask][order]
                ax.plot(snr, med, marker="o", label=method)
                ax.fill_between(snr, lo, hi, alpha=0.25)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("snr")
        ax.set_ylabel("sliced Wasserstein distance")
        ax.legend()
    return _finalize(fig, spec)


def render_acf(spec: FigureSpec) -> Path:
    """Autocorrelation curves, one panel per coupling value."""
    tables = [read_table(p, "acf") for p in spec.inputs]
    betas = sorted({b for t in tables for b in t["beta"]})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(betas), figsize=(3.8 * len(betas), 3.2),
                                 squeeze=False, sharey=True)
        for ax, beta in zip(axes[0], betas):
            for table in tables:
                mask_b = table["beta"] == beta
                for variant in sorted(set(table["variant"][mask_b])):
                    mask = mask_b & (table["variant"] == variant)
                    order = np.argsort(table["lag"][mask])
                    ax.plot(table["lag"][mask][order], table["acf"][mask][order],
                            label=variant)
            ax.set_title(f"beta={beta:g}")
            ax.set_xlabel("lag")
            ax.axhline(0.0, color="k", linewidth=0.6)
        axes[0, 0].set_ylabel("autocorrelation")
        axes[0, -1].legend()
    return _finalize(fig, spec)


def render_schematic(spec: FigureSpec) -> Path:
    """Scatter plus first-coordinate density for each pipeline stage."""
    table = read_table(spec.inputs[0], "schematic")
    stages = list(dict.fromkeys(table["stage"]))  # keep file order
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, len(stages), figsize=(3.4 * len(stages), 5.4),
                                 squeeze=False)
        for j, stage in enumerate(stages):
            mask = table["stage"] == stage
            x1, x2 = table["x1"][mask], table["x2"][mask]
            axes[0, j].scatter(x1, x2, s=4, alpha=0.4, linewidths=0)
            axes[0, j].set_title(str(stage))
            axes[0, j].set_aspect("equal", adjustable="datalim")
            lo, hi = x1.min(), x1.max()
            pad = 0.05 * (hi - lo + 1e-12)
            edges = np.linspace(lo - pad, hi + pad, 41)
            axes[1, j].hist(x1, bins=edges, density=True, alpha=0.7)
            axes[1, j].set_xlabel("first coordinate")
        axes[1, 0].set_ylabel("density")
    return _finalize(fig, spec)


RENDERERS = {
    "phase": render_phase,
    "sweep": render_sweep,
    "acf": render_acf,
    "schematic": render_schematic,
}


def render(spec: FigureSpec) -> Path:
    """Render the requested figure kind; returns the written path."""
    return RENDERERS[spec.kind](spec)
