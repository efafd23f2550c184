"""Report rendering: delimited metric files plus matplotlib figures.

Every report path writes machine-readable output (TSV or JSONL) and a
PNG next to it, so a run directory is self-describing.
"""

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def der_tsv_rows(report):
    rows = [("metric", "value")]
    rows += [(k, f"{v:.6f}" if isinstance(v, float) else str(v)) for k, v in report.as_dict().items()]
    return rows


def write_der_tsv(report, path):
    lines = ["\t".join(row) for row in der_tsv_rows(report)]
    Path(path).write_text("\n".join(lines) + "\n")
    return path


def format_der_table(report):
    """Aligned human-readable summary of a scoring report."""
    d = report.as_dict()
    rows = [
        ("DER", d["der_pct"]),
        ("FA", d["fa_pct"]),
        ("MI", d["mi_pct"]),
        ("CF", d["cf_pct"]),
    ]
    width = max(len(name) for name, _ in rows)
    lines = [f"{name:<{width}}  {value:6.2f}%" for name, value in rows]
    lines.append(
        f"scored {d['scored_frames']} frames, "
        f"{d['ref_speaker_frames']} reference speaker-frames "
        f"(frame {d['frame_dur']:g}s, collar 0)"
    )
    return "\n".join(lines)


def render_der_figure(report, path):
    d = report.as_dict()
    names = ["DER", "FA", "MI", "CF"]
    values = [d["der_pct"], d["fa_pct"], d["mi_pct"], d["cf_pct"]]
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    bars = ax.bar(names, values, color=["#444444", "#1f77b4", "#ff7f0e", "#2ca02c"])
    for bar, v in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, v, f"{v:.2f}", ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("% of reference speech")
    ax.set_title("Diarization error breakdown")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def read_training_log(path):
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def render_training_curves(records, path):
    """Loss components and dev DER against optimizer steps."""
    loss_keys = [
        k for k in ("loss_total", "loss_diar", "loss_ext", "loss_dis", "loss_ort", "loss_spa")
        if any(k in r for r in records)
    ]
    fig, axes = plt.subplots(1, 2 , figsize=(9, 3.2))
    ax = axes[0]
    for key in loss_keys:
        xs = [r["step"] for r in records if key in r]
        ys = [r[key] for r in records if key in r]
        ax.plot(xs, ys, label=key.replace("loss_", ""), linewidth=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    ax.set_title("Training losses")

    ax = axes[1]
    for key, color in (("dev_der", "#d62728"), ("train_der", "#1f77b4")):
        xs = [r["step"] for r in records if key in r]
        ys = [100.0 * r[key] for r in records if key in r]
        if xs:
            ax.plot(xs, ys, marker="o", markersize=3, linewidth=1, label=key, color=color)
    ax.set_xlabel("step")
    ax.set_ylabel("DER %")
    ax.legend(fontsize=7)
    ax.set_title("Evaluation DER")
    for a in axes:
        a.spines["top"].set_visible(False)
        a.spines["right"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
