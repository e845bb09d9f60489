"""Static SVG plots of loss curves and precision-recall curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import THRESHOLDS, match, merge_matches, precision_recall  # noqa: E402
from .scene import CLASSES, Detection, Scene  # noqa: E402
from .train import EpochRecord  # noqa: E402

# fixed ids and no timestamp keep the SVG bytes reproducible
_RC = {"svg.hashsalt": "graphpillars", "svg.fonttype": "path"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def plot_loss_curves(curves: dict[str, list[EpochRecord]], path) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, curve in curves.items():
            epochs = [r.epoch for r in curve]
            ax.plot(epochs, [r.train_loss for r in curve], label=f"{name} train")
            if any(r.val_loss is not None for r in curve):
                ax.plot(epochs, [r.val_loss for r in curve], linestyle="--", label=f"{name} val")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(fontsize="small")
        fig.tight_layout()
        return _save(fig, path)


def plot_pr_curves(detections: dict[int, list[Detection]], scenes: list[Scene], path) -> Path:
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(CLASSES), figsize=(4 * len(CLASSES), 4), sharey=True)
        for ax, name in zip(axes, CLASSES):
            for thr in THRESHOLDS:
                parts = [match([d for d in detections.get(s.scene_id, []) if d.class_name == name],
                               [lab for lab in s.labels if lab.class_name == name], thr) for s in scenes]
                merged = merge_matches(parts) if parts else None
                if merged is None or merged.num_gt == 0 or not len(merged.scores):
                    continue
                precision, recall = precision_recall(merged)
                ax.plot(recall, precision, label=f"{thr} m")
            ax.set_title(name)
            ax.set_xlabel("recall")
            ax.set_xlim(0, 1)
            ax.set_ylim(0, 1.05)
        axes[0].set_ylabel("precision")
        for ax in axes:
            if ax.get_legend_handles_labels()[0]:
                ax.legend(fontsize="small")
        fig.tight_layout()
        return _save(fig, path)
