"""Named hyperparameter presets.

``desk`` is the default: small enough to train and verify on a laptop
CPU in minutes. ``paper`` mirrors published full-scale settings
(80-dim features, 256-dim embeddings, 4+2 transformer stacks, peak lr
5e-4 with 30 warmup epochs, global batch 128 as 64 x 2 accumulation);
it is provided as configuration only and is far too heavy for the
bundled synthetic corpora.
"""

import copy

DESK = {
    "seed": 0,
    "synth": {
        "num_sequences": 200,
        "frames": 200,
        "feat_dim": 16,
        "pool_size": 8,
        "speakers_per_mix": [2],
        "overlap_target": None,
        "overlap_tol": 0.1,
        "mean_scale": 3.0,
        "feature_scale": 1.0,
        "min_separation": 4.0,
        "p_on_off": 0.1,
        "p_off_on": 0.1,
        "frame_dur": 0.01,
        "ratios": [0.8, 0.1, 0.1],
        "holdout_speakers": False,
    },
    "model": {
        "feat_dim": 16,
        "embed_dim": 32,
        "max_speakers": 2,
        "encoder_blocks": 2,
        "decoder_blocks": 2,
        "attention_heads": 4,
        "ffn_dim": 64,
        "demux_cnn_stacks": 2,
        "demux_kernel_size": 5,
        "dropout": 0.0,
    },
    "loss_weights": {"diar": 1.0, "ext": 1e-2, "dis": 2.5, "ort": 1e-3, "spa": 1e-5},
    "train": {
        "batch_size": 8,
        "grad_accum": 1,
        "peak_lr": 1e-3,
        "warmup_epochs": 25,
        "total_epochs": 250,
        "eval_every_epochs": 5,
        "existence_gating": "ground-truth",
        "binarize_threshold": 0.5,
        "median_window": 1,
    },
    "pretrain": {"epochs": 5, "lr": 1e-3},
}

PAPER = copy.deepcopy(DESK)
PAPER["synth"].update({"feat_dim": 80, "frames": 500})
PAPER["model"].update(
    {
        "feat_dim": 80,
        "embed_dim": 256,
        "max_speakers": 3,
        "encoder_blocks": 4,
        "decoder_blocks": 2,
        "attention_heads": 4,
        "ffn_dim": 1024,
        "dropout": 0.1,
    }
)
PAPER["train"].update(
    {"batch_size": 64, "grad_accum": 2, "peak_lr": 5e-4, "warmup_epochs": 30, "total_epochs": 100}
)

PRESETS = {"desk": DESK, "paper": PAPER}


def get_preset(name):
    from .errors import DataError

    if name not in PRESETS:
        raise DataError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return copy.deepcopy(PRESETS[name])
