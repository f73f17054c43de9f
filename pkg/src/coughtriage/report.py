"""Report rendering: JSON artifacts, delimited metric tables, and
matplotlib figures (ROC curves, training curves, confusion matrices)."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import EvalReport  # noqa: E402


def write_json(path: str | Path, payload: dict) -> None:
    """Deterministic JSON: sorted keys, no timestamps."""
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1),
                          encoding="utf-8")


def write_metrics_csv(path: str | Path, reports: list[EvalReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "n", "loss", "accuracy", "auroc",
                         "tp", "fp", "tn", "fn"])
        for r in reports:
            cm = r.confusion
            writer.writerow([r.extra.get("fold", 0), r.n_examples,
                             f"{r.loss:.6f}",
                             "" if r.accuracy is None else f"{r.accuracy:.6f}",
                             "" if r.auroc is None else f"{r.auroc:.6f}",
                             cm.tp, cm.fp, cm.tn, cm.fn])


def format_report_table(reports: list[EvalReport]) -> str:
    header = f"{'fold':>4} {'n':>6} {'loss':>9} {'acc':>7} {'auroc':>7} " \
             f"{'tp':>5} {'fp':>5} {'tn':>5} {'fn':>5}"
    lines = [header, "-" * len(header)]
    for r in reports:
        cm = r.confusion
        acc = "  n/a" if r.accuracy is None else f"{r.accuracy:7.4f}"
        auc = "  n/a" if r.auroc is None else f"{r.auroc:7.4f}"
        lines.append(f"{r.extra.get('fold', 0):>4} {r.n_examples:>6} "
                     f"{r.loss:9.4f} {acc} {auc} "
                     f"{cm.tp:>5} {cm.fp:>5} {cm.tn:>5} {cm.fn:>5}")
    return "\n".join(lines)


def save_roc_figure(path: str | Path, reports: list[EvalReport],
                    title: str = "ROC") -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    for r in reports:
        if r.roc is None:
            continue
        fpr = [p[0] for p in r.roc.points]
        tpr = [p[1] for p in r.roc.points]
        label = f"fold {r.extra.get('fold', 0)} (AUROC {r.auroc:.3f})"
        ax.plot(fpr, tpr, lw=1.2, label=label)
    ax.plot([0, 1], [0, 1], "k--", lw=0.8, label="chance")
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_curves(path: str | Path, train_loss, train_acc,
                         val_loss=None, val_acc=None) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    epochs = range(1, len(train_loss) + 1)
    ax1.plot(epochs, train_loss, label="train")
    if val_loss:
        ax1.plot(epochs, val_loss, label="validation")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("cross-entropy loss")
    ax1.legend()
    ax2.plot(epochs, train_acc, label="train")
    if val_acc:
        ax2.plot(epochs, val_acc, label="validation")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confusion_figure(path: str | Path, report: EvalReport) -> None:
    cm = report.confusion
    grid = [[cm.tn, cm.fp], [cm.fn, cm.tp]]
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(grid, cmap="Blues")
    for i in range(2):
        for j in range(2):
            ax.text(j, i, str(grid[i][j]), ha="center", va="center")
    ax.set_xticks([0, 1], ["pred 0", "pred 1"])
    ax.set_yticks([0, 1], ["true 0", "true 1"])
    ax.set_title("Confusion matrix")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
