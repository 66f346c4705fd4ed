"""Training reports: metrics JSON, per-class CSV, and matplotlib figures."""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def write_metrics_json(path, report):
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def write_per_class_csv(path, report, class_names=None, train_counts=None, test_counts=None):
    """One row per class: index, name, train/test counts, accuracy percent."""
    rows = len(report.per_class)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "name", "train_count", "test_count", "accuracy_percent"])
        for c in range(rows):
            w.writerow([
                c + 1,
                class_names[c] if class_names and c < len(class_names) else f"C{c + 1}",
                int(train_counts[c]) if train_counts is not None else "",
                int(test_counts[c]) if test_counts is not None else "",
                f"{report.per_class[c]:.2f}",
            ])
        w.writerow(["OA", "", "", "", f"{report.oa:.2f}"])
        w.writerow(["AA", "", "", "", f"{report.aa:.2f}"])
        w.writerow(["kappa_x100", "", "", "", f"{report.kappa_x100:.2f}"])


def plot_training_curves(path, history):
    """Loss and training accuracy per epoch, twin axes."""
    epochs = range(1, len(history["loss"]) + 1)
    fig, ax_loss = plt.subplots(figsize=(7, 4.2))
    ax_loss.plot(epochs, history["loss"], color="tab:red", label="loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean training loss", color="tab:red")
    ax_loss.tick_params(axis="y", labelcolor="tab:red")
    ax_acc = ax_loss.twinx()
    ax_acc.plot(epochs, history["accuracy"], color="tab:blue", label="accuracy")
    ax_acc.set_ylabel("training accuracy (%)", color="tab:blue")
    ax_acc.tick_params(axis="y", labelcolor="tab:blue")
    ax_acc.set_ylim(0, 102)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_per_class_accuracy(path, report, class_names=None):
    """Horizontal bars of per-class accuracy with OA/AA reference lines."""
    count = len(report.per_class)
    names = [class_names[c] if class_names and c < len(class_names) else f"C{c + 1}"
             for c in range(count)]
    fig, ax = plt.subplots(figsize=(7, max(2.5, 0.35 * count + 1.2)))
    ax.barh(range(count), report.per_class, color="tab:green")
    ax.set_yticks(range(count), names)
    ax.invert_yaxis()
    ax.set_xlabel("accuracy (%)")
    ax.set_xlim(0, 102)
    ax.axvline(report.oa, color="tab:red", linestyle="--", linewidth=1, label=f"OA {report.oa:.1f}")
    ax.axvline(report.aa, color="tab:blue", linestyle=":", linewidth=1, label=f"AA {report.aa:.1f}")
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(out_dir, report, history=None, class_names=None,
                 train_counts=None, test_counts=None):
    """Emit metrics.json, per_class.csv, and figures into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_json(out / "metrics.json", report)
    write_per_class_csv(out / "per_class.csv", report, class_names,
                        train_counts, test_counts)
    plot_per_class_accuracy(out / "per_class.png", report, class_names)
    if history is not None and history["loss"]:
        plot_training_curves(out / "training.png", history)
    return out / "metrics.json"
