"""The diarization network and its frozen single-speaker companion encoder.

Four stages: a transformer mixture encoder (pre-norm, no positional
encoding anywhere, so it is frame-permutation equivariant), per-speaker
1-D CNN demultiplexer branches, a transformer attractor decoder whose
queries are the temporal-average prototypes (self-attention among
prototypes, cross-attention into the mixture embeddings), and two heads:
frame/attractor dot-product posteriors and a shared linear existence
probe. Matrices are laid out features x time throughout.

Normalization inside CNN branches uses the statistics of the sequence
being processed; with one sequence per tape this is identical in
training and evaluation, which keeps checkpoints free of running stats.
"""

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tt
from .errors import DataError
from .tensor import ShapeError
from .util import seeded_rng

_CKPT_MAGIC = b"SPKDMX01"


@dataclass(frozen=True)
class ModelConfig:
    feat_dim: int = 16
    embed_dim: int = 32
    max_speakers: int = 2
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    attention_heads: int = 4
    ffn_dim: int = 64
    demux_cnn_stacks: int = 2
    demux_kernel_size: int = 5
    dropout: float = 0.0

    def validate(self):
        if self.embed_dim % self.attention_heads != 0:
            raise DataError(
                f"model: embed_dim {self.embed_dim} not divisible by "
                f"attention_heads {self.attention_heads}"
            )
        if self.max_speakers < 1:
            raise DataError("model: max_speakers must be >= 1")
        if self.demux_kernel_size % 2 == 0:
            raise DataError(
                f"model: demux_kernel_size must be odd for same-length padding, "
                f"got {self.demux_kernel_size}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise DataError(f"model: dropout must be in [0,1), got {self.dropout}")
        return self


@dataclass
class ForwardOutput:
    mixture_embeddings: tt.Tensor       # (D, T)
    branch_embeddings: list             # S tensors, each (D, T)
    prototypes: tt.Tensor               # (D, S)
    attractors: tt.Tensor               # (D, S)
    posteriors: tt.Tensor               # (T, S)
    existence: tt.Tensor                # (1, S)


@dataclass
class DiarizationOutput:
    posteriors: np.ndarray              # (T, S)
    existence: np.ndarray               # (S,)
    valid: tuple


def valid_speaker_set(values):
    """Indices whose existence value clears the 0.5 decision boundary."""
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    return tuple(int(i) for i, v in enumerate(flat) if v >= 0.5)


def prototypes(branch_embeddings):
    """Temporal-average prototype per branch, stacked to (D, S)."""
    cols = [tt.tmean(b, axis=1, keepdims=True) for b in branch_embeddings]
    return tt.concat(cols, 1)


# ---------------------------------------------------------------------------
# parameter construction


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_diarization_params(config, rng):
    D, F = config.embed_dim, config.feat_dim
    P = {}

    def w(name, shape, fan_in):
        P[name] = tt.parameter(_uniform(rng, shape, fan_in))

    def zeros(name, shape):
        P[name] = tt.parameter(np.zeros(shape))

    def ones(name, shape):
        P[name] = tt.parameter(np.ones(shape))

    def norm(prefix):
        ones(f"{prefix}.g", (D, 1))
        zeros(f"{prefix}.b", (D, 1))

    def attn(prefix):
        for nm in ("wq", "wk", "wv", "wo"):
            w(f"{prefix}.{nm}", (D, D), D)

    def ffn(prefix):
        w(f"{prefix}.w1", (config.ffn_dim, D), D)
        zeros(f"{prefix}.b1", (config.ffn_dim, 1))
        w(f"{prefix}.w2", (D, config.ffn_dim), config.ffn_dim)
        zeros(f"{prefix}.b2", (D, 1))

    w("input_proj.w", (D, F), F)
    zeros("input_proj.b", (D, 1))
    for i in range(config.encoder_blocks):
        norm(f"enc{i}.ln1")
        attn(f"enc{i}.attn")
        norm(f"enc{i}.ln2")
        ffn(f"enc{i}.ffn")
    norm("enc_out")
    for s in range(config.max_speakers):
        for j in range(config.demux_cnn_stacks):
            for k in range(config.demux_kernel_size):
                w(f"demux{s}.conv{j}.w{k}", (D, D), D * config.demux_kernel_size)
            zeros(f"demux{s}.conv{j}.b", (D, 1))
            norm(f"demux{s}.norm{j}")
    for i in range(config.decoder_blocks):
        norm(f"dec{i}.ln1")
        attn(f"dec{i}.self")
        norm(f"dec{i}.ln2")
        attn(f"dec{i}.cross")
        norm(f"dec{i}.ln3")
        ffn(f"dec{i}.ffn")
    norm("dec_out")
    w("exist.w", (1, D), D)
    zeros("exist.b", (1, 1))
    return P


# ---------------------------------------------------------------------------
# building blocks


def _norm_affine(params, prefix, x, axis):
    n_time = x.shape[1]
    y = tt.layer_norm(x, axis)
    return tt.add(
        tt.mul(y, tt.expand(params[f"{prefix}.g"], 1, n_time)),
        tt.expand(params[f"{prefix}.b"], 1, n_time),
    )


def _attention(params, prefix, q_in, kv_in, heads):
    q = tt.matmul(params[f"{prefix}.wq"], q_in)
    k = tt.matmul(params[f"{prefix}.wk"], kv_in)
    v = tt.matmul(params[f"{prefix}.wv"], kv_in)
    d = q.shape[0] // heads
    scale = 1.0 / math.sqrt(d)
    outs = []
    for h in range(heads):
        rows = slice(h * d, (h + 1) * d)
        scores = tt.mul(tt.matmul(tt.transpose(q[rows, :]), k[rows, :]), scale)
        attn = tt.softmax(scores, axis=1)
        outs.append(tt.matmul(v[rows, :], tt.transpose(attn)))
    return tt.matmul(params[f"{prefix}.wo"], tt.concat(outs, 0))


def _ffn(params, prefix, x):
    n_time = x.shape[1]
    h = tt.relu(
        tt.add(tt.matmul(params[f"{prefix}.w1"], x), tt.expand(params[f"{prefix}.b1"], 1, n_time))
    )
    return tt.add(
        tt.matmul(params[f"{prefix}.w2"], h), tt.expand(params[f"{prefix}.b2"], 1, n_time)
    )


def _dropout(x, p, rng):
    if rng is None or p <= 0.0:
        return x
    mask = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return tt.mul(x, tt.constant(mask))


def _conv1d(params, prefix, x, kernel):
    n_time = x.shape[1]
    pad = (kernel - 1) // 2
    if pad:
        z = tt.zeros((x.shape[0], pad))
        x = tt.concat([z, x, z], 1)
    acc = tt.matmul(params[f"{prefix}.w0"], x[:, 0:n_time])
    for k in range(1, kernel):
        acc = tt.add(acc, tt.matmul(params[f"{prefix}.w{k}"], x[:, k : k + n_time]))
    return tt.add(acc, tt.expand(params[f"{prefix}.b"], 1, n_time))


# ---------------------------------------------------------------------------
# the model


class DiarizationModel:
    def __init__(self, config, params, step=0):
        self.config = config.validate()
        self.params = params
        self.step = step

    @classmethod
    def create(cls, config, seed=0):
        rng = seeded_rng(seed, "model-init")
        return cls(config, init_diarization_params(config, rng))

    def parameter_list(self):
        return list(self.params.values())

    def mixture_encode(self, features, rng=None):
        """Encode a mixture feature matrix (F, T) into embeddings (D, T)."""
        x = features if isinstance(features, tt.Tensor) else tt.constant(features)
        if x.data.ndim != 2 or x.shape[0] != self.config.feat_dim:
            raise ShapeError(
                f"mixture_encode: input feature dim {x.shape[0] if x.data.ndim == 2 else x.shape} "
                f"does not match model feat_dim {self.config.feat_dim}"
            )
        n_time = x.shape[1]
        h = tt.add(
            tt.matmul(self.params["input_proj.w"], x),
            tt.expand(self.params["input_proj.b"], 1, n_time),
        )
        p = self.config.dropout
        for i in range(self.config.encoder_blocks):
            q = _norm_affine(self.params, f"enc{i}.ln1", h, 0)
            a = _attention(self.params, f"enc{i}.attn", q, q, self.config.attention_heads)
            h = tt.add(h, _dropout(a, p, rng))
            f = _ffn(self.params, f"enc{i}.ffn", _norm_affine(self.params, f"enc{i}.ln2", h, 0))
            h = tt.add(h, _dropout(f, p, rng))
        return _norm_affine(self.params, "enc_out", h, 0)

    def demultiplex(self, mixture_embeddings, rng=None):
        """Split embeddings (D, T) into one (D, T) sequence per speaker slot."""
        if mixture_embeddings.shape[0] != self.config.embed_dim:
            raise ShapeError(
                f"demultiplex: embedding dim {mixture_embeddings.shape[0]} does not match "
                f"model embed_dim {self.config.embed_dim}"
            )
        branches = []
        for s in range(self.config.max_speakers):
            h = mixture_embeddings
            for j in range(self.config.demux_cnn_stacks):
                h = _conv1d(self.params, f"demux{s}.conv{j}", h, self.config.demux_kernel_size)
                h = _norm_affine(self.params, f"demux{s}.norm{j}", h, 1)
                h = tt.relu(h)
                h = _dropout(h, self.config.dropout, rng)
            branches.append(h)
        return branches

    def attractor_decode(self, protos, mixture_embeddings, rng=None):
        """Decode prototypes (D, S) against embeddings (D, T) into attractors (D, S)."""
        if protos.shape[0] != self.config.embed_dim:
            raise ShapeError(
                f"attractor_decode: prototype dim {protos.shape[0]} does not match "
                f"model embed_dim {self.config.embed_dim}"
            )
        h = protos
        p = self.config.dropout
        for i in range(self.config.decoder_blocks):
            q = _norm_affine(self.params, f"dec{i}.ln1", h, 0)
            h = tt.add(h, _dropout(
                _attention(self.params, f"dec{i}.self", q, q, self.config.attention_heads), p, rng
            ))
            q = _norm_affine(self.params, f"dec{i}.ln2", h, 0)
            h = tt.add(h, _dropout(
                _attention(self.params, f"dec{i}.cross", q, mixture_embeddings,
                           self.config.attention_heads), p, rng
            ))
            q = _norm_affine(self.params, f"dec{i}.ln3", h, 0)
            h = tt.add(h, _dropout(_ffn(self.params, f"dec{i}.ffn", q), p, rng))
        return _norm_affine(self.params, "dec_out", h, 0)

    def posteriors(self, branch_embeddings, attractors):
        """Per-frame activity probability: sigmoid of embedding-attractor dot."""
        cols = []
        for s, branch in enumerate(branch_embeddings):
            scores = tt.matmul(tt.transpose(branch), attractors[:, s : s + 1])
            cols.append(tt.sigmoid(scores))
        return tt.concat(cols, 1)

    def existence(self, attractors):
        """Shared linear head on each attractor, sigmoid-squashed, shape (1, S)."""
        n = attractors.shape[1]
        z = tt.add(
            tt.matmul(self.params["exist.w"], attractors),
            tt.expand(self.params["exist.b"], 1, n),
        )
        return tt.sigmoid(z)

    def forward(self, features, rng=None):
        E = self.mixture_encode(features, rng)
        branches = self.demultiplex(E, rng)
        protos = prototypes(branches)
        A = self.attractor_decode(protos, E, rng)
        return ForwardOutput(
            mixture_embeddings=E,
            branch_embeddings=branches,
            prototypes=protos,
            attractors=A,
            posteriors=self.posteriors(branches, A),
            existence=self.existence(A),
        )

    def save(self, path, rng_state=None):
        save_checkpoint(
            path,
            kind="diarization",
            config=asdict(self.config),
            params=self.params,
            step=self.step,
            rng_state=rng_state,
        )
        return path

    @classmethod
    def load(cls, path):
        blob = load_checkpoint(path)
        if blob["kind"] != "diarization":
            raise DataError(f"{path}: checkpoint kind {blob['kind']!r} is not a diarization model")
        config = ModelConfig(**blob["config"])
        params = {k: tt.parameter(v) for k, v in blob["params"].items()}
        return cls(config, params, step=blob["step"])


# ---------------------------------------------------------------------------
# companion single-speaker encoder


@dataclass(frozen=True)
class SpeakerEncoderConfig:
    feat_dim: int = 16
    embed_dim: int = 32
    kernels: tuple = (3, 3, 1)


def init_speaker_params(config, rng):
    D, F = config.embed_dim, config.feat_dim
    P = {}
    in_dims = (F,) + (D,) * (len(config.kernels) - 1)
    for j, (kernel, f_in) in enumerate(zip(config.kernels, in_dims)):
        for k in range(kernel):
            P[f"spk.conv{j}.w{k}"] = tt.parameter(_uniform(rng, (D, f_in), f_in * kernel))
        P[f"spk.conv{j}.b"] = tt.parameter(np.zeros((D, 1)))
        if j < len(config.kernels) - 1:
            P[f"spk.norm{j}.g"] = tt.parameter(np.ones((D, 1)))
            P[f"spk.norm{j}.b"] = tt.parameter(np.zeros((D, 1)))
    return P


class SpeakerEncoder:
    """Frame-wise CNN that embeds a single speaker's source features.

    After pretraining it is frozen and its frame-level output serves as
    the matching target for the demultiplexer branches.
    """

    def __init__(self, config, params, frozen=False):
        self.config = config
        self.params = params
        self.frozen = frozen

    @classmethod
    def create(cls, config, seed=0):
        rng = seeded_rng(seed, "speaker-encoder-init")
        return cls(config, init_speaker_params(config, rng))

    def parameter_list(self):
        return list(self.params.values())

    def freeze(self):
        for p in self.params.values():
            p.requires_grad = False
        self.frozen = True
        return self

    def encode(self, features):
        x = features if isinstance(features, tt.Tensor) else tt.constant(features)
        if x.data.ndim != 2 or x.shape[0] != self.config.feat_dim:
            raise ShapeError(
                f"speaker_encode: input feature dim "
                f"{x.shape[0] if x.data.ndim == 2 else x.shape} does not match "
                f"encoder feat_dim {self.config.feat_dim}"
            )
        h = x
        last = len(self.config.kernels) - 1
        for j, kernel in enumerate(self.config.kernels):
            h = _conv1d(self.params, f"spk.conv{j}", h, kernel)
            if j < last:
                h = _norm_affine(self.params, f"spk.norm{j}", h, 1)
                h = tt.relu(h)
        return h

    def save(self, path):
        save_checkpoint(
            path,
            kind="speaker_encoder",
            config={**asdict(self.config), "kernels": list(self.config.kernels)},
            params=self.params,
            step=0,
            rng_state=None,
            extra={"frozen": self.frozen},
        )
        return path

    @classmethod
    def load(cls, path):
        blob = load_checkpoint(path)
        if blob["kind"] != "speaker_encoder":
            raise DataError(f"{path}: checkpoint kind {blob['kind']!r} is not a speaker encoder")
        cfg_dict = dict(blob["config"])
        cfg_dict["kernels"] = tuple(cfg_dict["kernels"])
        config = SpeakerEncoderConfig(**cfg_dict)
        frozen = bool(blob.get("extra", {}).get("frozen", False))
        params = {k: tt.parameter(v) for k, v in blob["params"].items()}
        enc = cls(config, params, frozen=False)
        return enc.freeze() if frozen else enc


# ---------------------------------------------------------------------------
# checkpoint container: magic, length-prefixed JSON header, raw f64 payload


def save_checkpoint(path, kind, config, params, step, rng_state, extra=None):
    header = {
        "version": 1,
        "kind": kind,
        "config": config,
        "step": int(step),
        "rng_state": rng_state,
        "extra": extra or {},
        "dtype": "<f8",
        "params": [{"name": k, "shape": list(v.data.shape)} for k, v in params.items()],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for v in params.values():
            fh.write(np.ascontiguousarray(v.data, dtype="<f8").tobytes())
    return path


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file (bad magic)")
        (head_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(head_len).decode("utf-8"))
        params = {}
        for meta in header["params"]:
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise DataError(f"{path}: truncated parameter payload for {meta['name']}")
            params[meta["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    header["params"] = params
    return header
