"""Optimization: Adam under a warmup/decay schedule, the pretrain-then-adapt
recipe, periodic scoring, and checkpointing.

One sequence runs on one tape; a global batch is batch_size x grad_accum
sequences whose losses are scaled by 1/(global batch) before backward, so
gradient accumulation is exactly equivalent to a larger batch. All
randomness (init, data order, dropout) derives from the config seed, and
the per-step log is line-delimited JSON so identical runs produce
identical logs.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tt
from .errors import DataError, NumericError
from .losses import (
    LossWeights,
    align_to_reference,
    loss_diar,
    loss_dis,
    loss_ext,
    loss_ort,
    loss_spa,
    loss_total,
)
from .metrics import DerReport, binarize, frame_error_counts, segments_from_frames
from .model import (
    DiarizationModel,
    DiarizationOutput,
    ModelConfig,
    SpeakerEncoder,
    SpeakerEncoderConfig,
    init_diarization_params,
    valid_speaker_set,
)
from .synth import load_corpus
from .util import seeded_rng


class NonFiniteLossError(NumericError):
    pass


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    train_dir: str = None
    dev_dir: str = None
    out_dir: str = None
    batch_size: int = 8
    grad_accum: int = 1
    peak_lr: float = 1e-3
    warmup_epochs: int = 25
    total_epochs: int = 250
    eval_every_epochs: int = 5
    seed: int = 0
    adapt_from: str = None
    spk_encoder: str = None
    existence_gating: str = "ground-truth"
    target_train_der: float = None
    binarize_threshold: float = 0.5
    median_window: int = 1

    def validate(self):
        self.model.validate()
        self.weights.validate()
        for name in ("batch_size", "grad_accum", "warmup_epochs", "total_epochs", "eval_every_epochs"):
            if getattr(self, name) <= 0:
                raise DataError(f"train: {name} must be positive")
        if self.peak_lr <= 0:
            raise DataError("train: peak_lr must be positive")
        if self.warmup_epochs >= self.total_epochs:
            raise DataError(
                f"train: warmup_epochs {self.warmup_epochs} must be below "
                f"total_epochs {self.total_epochs}"
            )
        if self.existence_gating not in ("ground-truth", "predicted"):
            raise DataError(
                f"train: existence_gating must be 'ground-truth' or 'predicted', "
                f"got {self.existence_gating!r}"
            )
        return self


def noam_lr(step, warmup_steps, peak_lr):
    """Linear warmup to ``peak_lr`` at ``warmup_steps``, then 1/sqrt decay."""
    if step < 1:
        raise DataError(f"noam_lr: step must be >= 1, got {step}")
    if warmup_steps < 1:
        raise DataError(f"noam_lr: warmup_steps must be >= 1, got {warmup_steps}")
    return peak_lr * min(step / warmup_steps, math.sqrt(warmup_steps / step))


class Adam:
    """Adam with the usual moment defaults and bias correction."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr):
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1**self.t)
            v_hat = self.v[i] / (1.0 - self.beta2**self.t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# speaker-encoder pretraining


def pretrain_speaker_encoder(corpus, embed_dim, epochs=5, lr=1e-3, seed=0):
    """Train the companion encoder with speaker classification, then freeze it.

    Sequence-level cross-entropy: each source is pooled over its active
    frames and classified against the corpus speaker pool. The classifier
    head is discarded; the returned encoder is frozen. Also returns a
    history dict with per-step and per-epoch mean losses.
    """
    class_of = {p.speaker_id: i for i, p in enumerate(corpus.profiles)}
    n_classes = len(class_of)
    if n_classes < 2:
        raise DataError(f"pretrain: need at least 2 speakers, corpus pool has {n_classes}")

    items = []
    for sample in corpus.samples:
        for s, spk in enumerate(sample.speaker_ids):
            mask = sample.labels[:, s].astype(np.float64)
            if mask.sum() == 0:
                continue
            items.append((sample.sources[s], mask, class_of[spk]))
    if not items:
        raise DataError("pretrain: corpus has no active sources")

    encoder = SpeakerEncoder.create(
        SpeakerEncoderConfig(feat_dim=corpus.feat_dim, embed_dim=embed_dim), seed=seed
    )
    # Zero-init classifier: the first forward scores every class equally.
    w_cls = tt.parameter(np.zeros((n_classes, embed_dim)))
    b_cls = tt.parameter(np.zeros((n_classes, 1)))
    opt = Adam(encoder.parameter_list() + [w_cls, b_cls])
    rng = seeded_rng(seed, "pretrain-order")

    step_losses = []
    epoch_losses = []
    for _epoch in range(epochs):
        order = rng.permutation(len(items))
        epoch_sum = 0.0
        for idx in order:
            source, mask, label = items[idx]
            emb = encoder.encode(source)
            pooled = tt.mul(tt.matmul(emb, tt.constant(mask[:, None])), 1.0 / mask.sum())
            logits = tt.add(tt.matmul(w_cls, pooled), b_cls)
            zmax = float(logits.data.max())
            lse = tt.add(tt.log(tt.tsum(tt.exp(tt.sub(logits, zmax)))), zmax)
            ce = tt.sub(lse, logits[label, 0])
            opt.zero_grad()
            tt.backward(ce)
            opt.step(lr)
            value = ce.item()
            step_losses.append(value)
            epoch_sum += value
        epoch_losses.append(epoch_sum / len(items))
    encoder.freeze()
    return encoder, {"step_loss": step_losses, "epoch_loss": epoch_losses}


# ---------------------------------------------------------------------------
# adaptation


def adapt(base_model, new_config, seed=0):
    """Initialize a wider-speaker model from a trained narrower one.

    Shared modules copy over bit-exactly; new demultiplexer branches are
    freshly initialized. The speaker count may only grow.
    """
    base_cfg = base_model.config
    new_config.validate()
    if new_config.max_speakers < base_cfg.max_speakers:
        raise DataError(
            f"adapt: max_speakers may not shrink ({base_cfg.max_speakers} -> "
            f"{new_config.max_speakers})"
        )
    for name in ("feat_dim", "embed_dim", "encoder_blocks", "decoder_blocks",
                 "attention_heads", "ffn_dim", "demux_cnn_stacks", "demux_kernel_size"):
        if getattr(base_cfg, name) != getattr(new_config, name):
            raise DataError(
                f"adapt: config field {name} differs "
                f"({getattr(base_cfg, name)} vs {getattr(new_config, name)})"
            )
    params = init_diarization_params(new_config, seeded_rng(seed, "adapt-init"))
    for name, value in base_model.params.items():
        params[name] = tt.parameter(value.data.copy())
    return DiarizationModel(new_config, params)


# ---------------------------------------------------------------------------
# inference and evaluation


def infer(model, features, frame_dur=0.01, recording_id="rec", threshold=0.5, median_window=1):
    """Run the network on (F, T) features and emit decisions plus segments.

    The valid speaker set comes from the predicted existence
    probabilities; heads below the boundary stay silent.
    """
    if isinstance(model, (str, Path)):
        model = DiarizationModel.load(model)
    out = model.forward(np.asarray(features, dtype=np.float64))
    posterior = out.posteriors.data.copy()
    existence = out.existence.data.reshape(-1).copy()
    valid = valid_speaker_set(existence)
    decisions = binarize(posterior, valid, threshold, median_window)
    speaker_labels = [f"spk{s}" for s in range(posterior.shape[1])]
    segments = segments_from_frames(decisions, frame_dur, speaker_labels, recording_id)
    return DiarizationOutput(posterior, existence, valid), segments


def evaluate_corpus_der(model, corpus, threshold=0.5, median_window=1):
    """Aggregate frame-level DER of the model over a corpus."""
    totals = np.zeros(5, dtype=np.int64)
    for sample in corpus.samples:
        out = model.forward(sample.mixture)
        valid = valid_speaker_set(out.existence.data)
        decisions = binarize(out.posteriors.data, valid, threshold, median_window)
        totals += np.asarray(
            frame_error_counts(sample.labels, decisions), dtype=np.int64
        )
    fa, mi, cf, ref_frames, scored = (int(v) for v in totals)
    if ref_frames == 0:
        raise DataError("evaluate: corpus reference contains no speech")
    return DerReport(fa, mi, cf, ref_frames, scored, corpus.frame_dur)


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class TrainResult:
    steps: int
    records: list
    best_dev_der: float = None
    final_train_der: float = None
    stopped_early: bool = False
    log_path: str = None
    best_ckpt: str = None
    last_ckpt: str = None
    model: DiarizationModel = None


def _sample_losses(model, sample, weights, gating, oracle_cache, spk_encoder, rng):
    """Forward one sequence and assemble its loss components."""
    S = model.config.max_speakers
    actives = [s for s in range(sample.labels.shape[1]) if sample.existence[s]]
    k = len(actives)
    if k > S:
        raise DataError(
            f"train: sample {sample.sample_id} has {k} active speakers but the "
            f"model has {S} output heads"
        )
    T = sample.labels.shape[0]
    label_matrix = np.zeros((T, S))
    label_matrix[:, :k] = sample.labels[:, actives]
    p_true = np.zeros(S)
    p_true[:k] = 1.0

    out = model.forward(sample.mixture, rng)
    ext = loss_ext(out.existence, p_true)
    if gating == "ground-truth":
        valid = list(range(k))
    else:
        valid = list(valid_speaker_set(out.existence.data))

    components = {"ext": ext.item()}
    if not valid:
        total = loss_total(weights, ext=ext)
        components["total"] = total.item()
        return total, components, None

    pit = loss_diar(out.posteriors, label_matrix, valid)
    components["diar"] = pit.value
    dis = ort = spa = None
    if weights.dis > 0 or weights.ort > 0:
        aligned = align_to_reference(out.branch_embeddings, valid, pit)
        if weights.dis > 0:
            key = sample.sample_id
            if key not in oracle_cache:
                oracle_cache[key] = [
                    spk_encoder.encode(sample.sources[src]).data for src in actives
                ]
            oracle = [tt.constant(arr) for arr in oracle_cache[key]]
            dis = loss_dis(aligned, oracle[: len(aligned)])
            components["dis"] = dis.item()
        if weights.ort > 0:
            protos = [tt.tmean(b, axis=1, keepdims=True) for b in aligned]
            ort = loss_ort(aligned, protos)
            components["ort"] = ort.item()
    if weights.spa > 0:
        spa = loss_spa(out.branch_embeddings, valid)
        components["spa"] = spa.item()
    total = loss_total(weights, diar=pit.loss, ext=ext, dis=dis, ort=ort, spa=spa)
    components["total"] = total.item()
    return total, components, pit.perm


def train(config, train_corpus=None, dev_corpus=None):
    """Optimize the model on a corpus; returns the result bundle.

    Writes ``log.jsonl``, ``best.ckpt`` and ``last.ckpt`` under
    ``config.out_dir`` when given. The valid speaker set during training
    follows the ground-truth existence labels unless configured otherwise.
    """
    config.validate()
    if train_corpus is None:
        if not config.train_dir:
            raise DataError("train: no training corpus given")
        train_corpus = load_corpus(config.train_dir)
    if dev_corpus is None and config.dev_dir:
        dev_corpus = load_corpus(config.dev_dir)
    if train_corpus.feat_dim != config.model.feat_dim:
        raise DataError(
            f"train: corpus feature dim {train_corpus.feat_dim} does not match "
            f"model feat_dim {config.model.feat_dim}"
        )

    if config.adapt_from:
        model = adapt(DiarizationModel.load(config.adapt_from), config.model, config.seed)
    else:
        model = DiarizationModel.create(config.model, config.seed)

    spk_encoder = None
    if config.weights.dis > 0:
        if config.spk_encoder is None:
            raise DataError(
                "train: matching loss enabled (dis weight > 0) but no frozen "
                "speaker encoder checkpoint configured"
            )
        spk_encoder = (
            config.spk_encoder
            if isinstance(config.spk_encoder, SpeakerEncoder)
            else SpeakerEncoder.load(config.spk_encoder)
        )
        if not spk_encoder.frozen:
            spk_encoder.freeze()

    out_dir = Path(config.out_dir) if config.out_dir else None
    log_fh = None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "log.jsonl", "w")

    n_train = len(train_corpus.samples)
    global_batch = config.batch_size * config.grad_accum
    steps_per_epoch = math.ceil(n_train / global_batch)
    warmup_steps = config.warmup_epochs * steps_per_epoch
    data_rng = seeded_rng(config.seed, "data-order")
    dropout_rng = seeded_rng(config.seed, "dropout") if config.model.dropout > 0 else None

    opt = Adam(model.parameter_list())
    oracle_cache = {}
    records = []
    step = 0
    best_dev = None
    final_train_der = None
    stopped = False

    def emit(record):
        records.append(record)
        if log_fh:
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            log_fh.flush()

    def save(name):
        if not out_dir:
            return None
        model.step = step
        path = out_dir / name
        model.save(path, rng_state=data_rng.bit_generator.state)
        return str(path)

    best_ckpt = last_ckpt = None
    for epoch in range(config.total_epochs):
        order = data_rng.permutation(n_train)
        for start in range(0, n_train, global_batch):
            batch_ids = order[start : start + global_batch]
            step += 1
            lr = noam_lr(step, warmup_steps, config.peak_lr)
            opt.zero_grad()
            batch_components = []
            batch_perms = []
            for idx in batch_ids:
                sample = train_corpus.samples[int(idx)]
                total, components, perm = _sample_losses(
                    model, sample, config.weights, config.existence_gating,
                    oracle_cache, spk_encoder, dropout_rng,
                )
                if not np.isfinite(total.data):
                    raise NonFiniteLossError(
                        f"train: non-finite loss at step {step} on {sample.sample_id}; "
                        f"components: {components}"
                    )
                tt.backward(tt.mul(total, 1.0 / len(batch_ids)))
                batch_components.append(components)
                batch_perms.append(list(perm) if perm is not None else None)
            opt.step(lr)

            record = {"step": step, "epoch": epoch, "lr": lr, "perms": batch_perms}
            for key in ("diar", "ext", "dis", "ort", "spa", "total"):
                vals = [c[key] for c in batch_components if key in c]
                if vals:
                    record[f"loss_{key}"] = float(np.mean(vals))
            emit(record)

        at_eval = (epoch + 1) % config.eval_every_epochs == 0 or epoch == config.total_epochs - 1
        if at_eval:
            if dev_corpus is not None:
                report = evaluate_corpus_der(
                    model, dev_corpus, config.binarize_threshold, config.median_window
                )
                emit({"step": step, "epoch": epoch, "dev_der": report.der})
                if best_dev is None or report.der < best_dev:
                    best_dev = report.der
                    best_ckpt = save("best.ckpt")
            if config.target_train_der is not None:
                report = evaluate_corpus_der(
                    model, train_corpus, config.binarize_threshold, config.median_window
                )
                final_train_der = report.der
                emit({"step": step, "epoch": epoch, "train_der": report.der})
                if report.der <= config.target_train_der:
                    stopped = True
        if stopped:
            break

    last_ckpt = save("last.ckpt")
    if best_ckpt is None:
        best_ckpt = last_ckpt
    if log_fh:
        log_fh.close()
    return TrainResult(
        steps=step,
        records=records,
        best_dev_der=best_dev,
        final_train_der=final_train_der,
        stopped_early=stopped,
        log_path=str(out_dir / "log.jsonl") if out_dir else None,
        best_ckpt=best_ckpt,
        last_ckpt=last_ckpt,
        model=model,
    )
