"""Report and figure rendering.

Evaluation results go to a tab-separated key-value file with matplotlib
figures saved alongside; generated volumes are visualized as average
timestamp and count images.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import DetectionMetrics  # noqa: E402
from .volumes import (  # noqa: E402
    EventVolume,
    collapse_time,
    volume_average_timestamp_image,
)


def write_report(path, values: dict) -> None:
    """Key-value report: one `key<TAB>value` line per metric."""
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            lines.append(f"{key}\t{value:.6g}")
        else:
            lines.append(f"{key}\t{value}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, value = line.split("\t", 1)
        try:
            out[key] = float(value)
        except ValueError:
            out[key] = value
    return out


def detection_report(metrics: DetectionMetrics, out_dir) -> Path:
    """Write the detection report plus a precision-recall curve figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    values = dict(metrics.as_dict())
    for flag in ("precision_defined", "easy_defined", "hard_defined", "combined_defined"):
        values[flag] = int(getattr(metrics, flag))
    report_path = out_dir / "report.tsv"
    write_report(report_path, values)

    fig, ax = plt.subplots(figsize=(5, 4))
    if metrics.pr_recall is not None and len(metrics.pr_recall):
        ax.plot(np.concatenate([[0.0], metrics.pr_recall]),
                np.concatenate([[metrics.pr_precision[0]], metrics.pr_precision]),
                drawstyle="steps-post", color="tab:blue")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_title(f"AP = {metrics.ap:.3f}")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "pr_curve.png", dpi=120)
    plt.close(fig)
    return report_path


def pose_report(predicted: np.ndarray, truth: np.ndarray, values: dict, out_dir) -> Path:
    """Write the pose report plus a per-joint error bar figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.tsv"
    write_report(report_path, values)

    errors = np.linalg.norm(np.asarray(predicted) - np.asarray(truth), axis=-1)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(np.arange(len(errors)), errors, color="tab:orange")
    ax.set_xlabel("joint index")
    ax.set_ylabel("error (px)")
    ax.set_title(f"MPJPE = {values.get('mpjpe', float('nan')):.3f} px")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(out_dir / "joint_errors.png", dpi=120)
    plt.close(fig)
    return report_path


def volume_figures(volume: EventVolume, prefix) -> list[Path]:
    """Average-timestamp and event-count images for a volume."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    timestamps = volume_average_timestamp_image(volume)
    counts = collapse_time(volume)[0]
    ts_path = prefix.with_name(prefix.name + "_timestamps.png")
    count_path = prefix.with_name(prefix.name + "_counts.png")
    plt.imsave(ts_path, timestamps, cmap="viridis", vmin=0.0, vmax=1.0)
    vmax = float(counts.max()) if counts.size and counts.max() > 0 else 1.0
    plt.imsave(count_path, counts, cmap="magma", vmin=0.0, vmax=vmax)
    return [ts_path, count_path]


def training_curves(rows: list[dict], out_dir) -> Path | None:
    """Loss curves from parsed scalar-log rows, one panel per step kind."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kinds = sorted({r["kind"] for r in rows})
    if not kinds:
        return None
    fig, axes = plt.subplots(1, len(kinds), figsize=(5 * len(kinds), 3.5), squeeze=False)
    for ax, kind in zip(axes[0], kinds):
        steps = [r["step"] for r in rows if r["kind"] == kind]
        totals = [r["total"] for r in rows if r["kind"] == kind]
        ax.plot(steps, totals, lw=0.8)
        ax.set_title(f"{kind} loss")
        ax.set_xlabel("step")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out_dir / "training_curves.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
