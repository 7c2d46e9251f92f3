"""Figure rendering for the report paths.

Every CLI command that writes a CSV/JSON report also renders a PNG next to
it. Rendering is deterministic for identical inputs (fixed size, fixed
dpi, no timestamps), so re-runs stay byte-identical.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def _save(fig, path) -> None:
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_sweep(sweep, path, raw_baseline=None) -> None:
    """Metric curves against the excision prefix k, with raw baselines."""
    ks = [row.k for row in sweep.rows]
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    series = [
        ("rank1", [row.rank1 for row in sweep.rows], "tab:blue"),
        ("map", [row.mean_ap for row in sweep.rows], "tab:orange"),
        ("auc", [row.auc for row in sweep.rows], "tab:green"),
    ]
    for i, far in enumerate(sweep.far_targets):
        series.append(
            (f"tar_far_{far:g}", [row.tars[i][1] for row in sweep.rows], "tab:red")
        )
    for label, values, color in series:
        ax.plot(ks, values, label=label, color=color, linewidth=1.4)
    if raw_baseline:
        for label, values, color in series:
            if label in raw_baseline:
                ax.axhline(raw_baseline[label], color=color, linestyle="--", linewidth=0.9)
    ax.set_xlabel("components excised (k)")
    ax.set_ylabel("metric value")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"excision sweep ({sweep.measure}, fit on {sweep.fit_source})")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def render_selection(selection, path) -> None:
    """Gallery self rank-1 curve with the chosen k* marked."""
    ks = [k for k, _ in selection.curve]
    values = [r for _, r in selection.curve]
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    ax.plot(ks, values, color="tab:blue", linewidth=1.4, label="gallery self rank-1")
    ax.axvline(selection.k_star, color="tab:red", linestyle="--", linewidth=1.0,
               label=f"k* = {selection.k_star}")
    ax.set_xlabel("components excised (k)")
    ax.set_ylabel("rank-1")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"subspace selection ({selection.rule})")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def render_report(report, path) -> None:
    """CMC points plus the scalar metrics as a side panel."""
    fig, (ax, side) = plt.subplots(
        1, 2, figsize=(7.5, 4.0), gridspec_kw={"width_ratios": [2.2, 1.0]}
    )
    ks = [k for k, _ in report.cmc]
    accs = [a for _, a in report.cmc]
    ax.plot(ks, accs, marker="o", color="tab:blue")
    ax.set_xlabel("rank k")
    ax.set_ylabel("identification rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"CMC ({report.measure}{', templated' if report.templated else ''})")
    ax.grid(alpha=0.3)
    lines = [f"auc  = {report.auc:.4f}", f"map  = {report.mean_ap:.4f}"]
    lines += [f"tar@{f:g} = {t:.4f}" for f, t in report.tar_at_far]
    if report.subspace_descriptor:
        lines.append(f"subspace: {report.subspace_descriptor}")
    if report.excluded_probes:
        lines.append(f"excluded probes: {report.excluded_probes}")
    side.axis("off")
    side.text(0.0, 0.95, "\n".join(lines), va="top", family="monospace", fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def render_probe(report, path) -> None:
    """Per-class accuracy bars with the overall accuracy line."""
    labeled = [(label, acc) for label, acc, _ in report.per_class if acc is not None]
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    xs = np.arange(len(labeled))
    ax.bar(xs, [acc for _, acc in labeled], color="tab:blue", width=0.6)
    ax.axhline(report.accuracy, color="tab:red", linestyle="--", linewidth=1.0,
               label=f"overall = {report.accuracy:.4f}")
    ax.set_xticks(xs)
    ax.set_xticklabels([label for label, _ in labeled], rotation=20, ha="right")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.05)
    title = f"attribute probe: {report.attribute}"
    if report.auc is not None:
        title += f" (auc = {report.auc:.4f})"
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    _save(fig, path)
