"""Report figures written next to the JSON/text outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import roc_curve  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_training_curves(report: dict, path) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_auc) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        epochs = range(1, len(report["train_loss"]) + 1)
        ax_loss.plot(epochs, report["train_loss"], color="tab:blue")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("train loss")
        ax_auc.plot(epochs, report["val_auc"], color="tab:orange")
        if report.get("best_epoch") is not None:
            ax_auc.axvline(report["best_epoch"] + 1, color="0.5", ls="--", lw=0.8, label="best")
            ax_auc.legend(frameon=False)
        ax_auc.set_xlabel("epoch")
        ax_auc.set_ylabel("validation AUC")
        return _save(fig, path)


def plot_roc(scores, labels, path, auc: float | None = None) -> Path:
    fpr, tpr = roc_curve(scores, labels)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.4, 3.2))
        ax.step(fpr, tpr, where="post", color="tab:blue",
                label=f"AUC {auc:.3f}" if auc is not None else None)
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls=":")
        for x in (0.1, 0.3, 0.5):
            ax.axvline(x, color="0.85", lw=0.6)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("recall")
        if auc is not None:
            ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def plot_ablation(rows: list[dict], path) -> Path:
    ok = [r for r in rows if r["status"] == "ok"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 0.45 * max(len(rows), 2) + 1.0))
        names = [r["variant"] for r in rows]
        aucs = [r["auc"] if r["status"] == "ok" else 0.0 for r in rows]
        colors = ["tab:blue" if r["status"] == "ok" else "tab:red" for r in rows]
        ax.barh(names, aucs, color=colors)
        for i, r in enumerate(rows):
            text = f"{r['auc']:.3f}" if r["status"] == "ok" else "failed"
            ax.text(aucs[i] + 0.01, i, text, va="center", fontsize=8)
        ax.axvline(0.5, color="0.6", lw=0.8, ls=":")
        ax.set_xlim(0, 1.08)
        ax.invert_yaxis()
        ax.set_xlabel("AUC" + (f" ({ok[0]['eval_set']} set)" if ok else ""))
        return _save(fig, path)
