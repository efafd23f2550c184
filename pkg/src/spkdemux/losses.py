"""Training objectives: activity BCE under the best speaker permutation,
existence BCE, embedding matching, orthogonality, and sparsity.

The permutation search decomposes into a linear assignment over per-pair
frame-summed BCE costs; the chosen permutation is computed once per
sequence per step and reused by the matching and orthogonality terms.
Probabilities are clamped to [eps, 1-eps] before any log so every loss
stays finite at saturated predictions. Ties between permutations break
to the lexicographically smallest, keeping runs reproducible.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .assignment import assign_min
from .errors import DataError

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    diar: float = 1.0
    ext: float = 1e-2
    dis: float = 2.5
    ort: float = 1e-3
    spa: float = 1e-5

    def validate(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise DataError(f"loss weight {name!r} must be nonnegative, got {value}")
        return self


@dataclass
class PitResult:
    loss: tt.Tensor
    value: float
    perm: tuple          # perm[r] = prediction slot matched to reference slot r
    cost: np.ndarray     # (n, n) frame-summed BCE per (reference, prediction) pair


def clip_prob(p, eps=PROB_EPS):
    """Clamp probabilities into [eps, 1-eps] ahead of any logarithm."""
    if not 0.0 < eps < 0.5:
        raise DataError(f"clip_prob: eps must be in (0, 0.5), got {eps}")
    return tt.clip(p, eps, 1.0 - eps)


def _bce_sum(target, prob):
    """Sum of elementwise binary cross-entropy; ``target`` is a constant."""
    t = tt.constant(np.asarray(target, dtype=np.float64))
    p = clip_prob(prob)
    pos = tt.mul(t, tt.log(p))
    negt = tt.constant(1.0 - t.data)
    neg = tt.mul(negt, tt.log(tt.sub(1.0, p)))
    return tt.neg(tt.tsum(tt.add(pos, neg)))


def bce_cost_matrix(posteriors, labels, valid):
    """Frame-summed BCE between every (reference, prediction) slot pair.

    Entry (r, c) matches the r-th valid reference column against the
    c-th valid prediction head. Returns (cells, values): live graph
    nodes for the loss path and their float values for the solver.
    """
    valid = list(valid)
    if not valid:
        raise DataError("bce_cost_matrix: empty valid speaker set")
    labels = np.asarray(labels, dtype=np.float64)
    n = len(valid)
    cells = [[None] * n for _ in range(n)]
    values = np.zeros((n, n))
    for r, sr in enumerate(valid):
        target = labels[:, sr : sr + 1]
        for c, sc in enumerate(valid):
            cell = _bce_sum(target, posteriors[:, sc : sc + 1])
            cells[r][c] = cell
            values[r, c] = cell.item()
    return cells, values


def loss_diar(posteriors, labels, valid, forced_perm=None):
    """Mean BCE under the best assignment of reference to prediction slots.

    Gradient flows only through the matched cost cells. ``forced_perm``
    pins the permutation (used by gradient checks, where the assignment
    must not jump during perturbation).
    """
    valid = list(valid)
    n = len(valid)
    if n == 0:
        raise DataError("loss_diar: empty valid speaker set")
    n_frames = posteriors.shape[0]
    cells, values = bce_cost_matrix(posteriors, labels, valid)
    if forced_perm is None:
        perm, _total = assign_min(values)
    else:
        perm = tuple(forced_perm)
    matched = cells[0][perm[0]]
    for r in range(1, n):
        matched = tt.add(matched, cells[r][perm[r]])
    loss = tt.mul(matched, 1.0 / (n_frames * n))
    return PitResult(loss=loss, value=loss.item(), perm=perm, cost=values)


def loss_ext(existence_probs, existence_labels):
    """Mean BCE over all existence heads (active and inactive alike)."""
    p = np.asarray(existence_labels, dtype=np.float64).reshape(-1)
    total = existence_probs.size
    if total != p.size:
        raise DataError(
            f"loss_ext: {total} predicted heads vs {p.size} existence labels"
        )
    flat_target = p.reshape(existence_probs.shape)
    return tt.mul(_bce_sum(flat_target, existence_probs), 1.0 / total)


def align_to_reference(branch_embeddings, valid, pit):
    """Order the valid prediction branches by the matched reference slots."""
    if pit is None:
        raise DataError("alignment requires the permutation from the diarization loss this step")
    valid = list(valid)
    return [branch_embeddings[valid[pit.perm[r]]] for r in range(len(valid))]


def loss_dis(aligned_branches, oracle_embeddings, num_frames=None):
    """Mean per-frame Euclidean distance between matched and oracle embeddings.

    ``aligned_branches[r]`` must correspond to ``oracle_embeddings[r]``
    (reference order); the oracle side carries no gradient.
    """
    n = len(aligned_branches)
    if n == 0 or n != len(oracle_embeddings):
        raise DataError(
            f"loss_dis: {n} aligned branches vs {len(oracle_embeddings)} oracle embeddings"
        )
    T = num_frames or aligned_branches[0].shape[1]
    total = None
    for branch, oracle in zip(aligned_branches, oracle_embeddings):
        oracle_const = oracle if isinstance(oracle, tt.Tensor) else tt.constant(oracle)
        if oracle_const.requires_grad:
            raise DataError("loss_dis: oracle embeddings must not carry gradient")
        norms = tt.l2_norm(tt.sub(oracle_const, branch), axis=0)
        term = tt.tsum(norms)
        total = term if total is None else tt.add(total, term)
    return tt.mul(total, 1.0 / (T * n))


def loss_ort(aligned_branches, aligned_prototypes, eps=1e-8):
    """Pull frames toward their own prototype, push speaker pairs apart.

    For each frame and each ordered speaker pair (i, j), add
    (1 - cos(frame_i, prototype_i)) + |cos(frame_i, frame_j)|, averaged
    over frames and pairs. With fewer than two speakers the pair set is
    empty and the loss is 0.
    """
    n = len(aligned_branches)
    if n != len(aligned_prototypes):
        raise DataError(f"loss_ort: {n} branches vs {len(aligned_prototypes)} prototypes")
    if n < 2:
        return tt.constant(0.0)
    T = aligned_branches[0].shape[1]
    total = None
    for i in range(n):
        for j in range(i + 1, n):
            proto = tt.expand(aligned_prototypes[i], 1, T)
            positive = tt.sub(1.0, tt.cosine_similarity(aligned_branches[i], proto, axis=0, eps=eps))
            negative = tt.absval(
                tt.cosine_similarity(aligned_branches[i], aligned_branches[j], axis=0, eps=eps)
            )
            term = tt.tsum(tt.add(positive, negative))
            total = term if total is None else tt.add(total, term)
    pairs = n * (n - 1) // 2
    return tt.mul(total, 1.0 / (T * pairs))


def loss_spa(branch_embeddings, valid):
    """Mean L1 norm of the valid branches' frame embeddings."""
    valid = list(valid)
    if not valid:
        return tt.constant(0.0)
    T = branch_embeddings[valid[0]].shape[1]
    total = None
    for s in valid:
        term = tt.l1_norm(branch_embeddings[s])
        total = term if total is None else tt.add(total, term)
    return tt.mul(total, 1.0 / (T * len(valid)))


def loss_total(weights, diar=None, ext=None, dis=None, ort=None, spa=None):
    """Weighted sum of the supplied components; missing components are skipped.

    A sample with no valid speakers supplies only the existence term.
    """
    weights.validate()
    parts = [
        (weights.diar, diar),
        (weights.ext, ext),
        (weights.dis, dis),
        (weights.ort, ort),
        (weights.spa, spa),
    ]
    total = None
    for lam, component in parts:
        if component is None:
            continue
        term = tt.mul(component, float(lam))
        total = term if total is None else tt.add(total, term)
    if total is None:
        raise DataError("loss_total: no components supplied")
    return total


# ---------------------------------------------------------------------------
# gradient-check case construction (used by the gradcheck CLI and tests)


def loss_gradcheck_case(name, seed=0, feat_dim=5, embed_dim=8, num_frames=6, num_speakers=3):
    """Build (f, x): a scalar loss as a function of the input features.

    The function closes over a small randomly initialized model, random
    labels, and a frozen assignment permutation computed at the base
    point, so finite differences probe a fixed smooth branch of the loss.
    """
    from .model import DiarizationModel, ModelConfig, SpeakerEncoder, SpeakerEncoderConfig
    from .util import seeded_rng

    rng = seeded_rng(seed, "gradcheck-loss", name)
    config = ModelConfig(
        feat_dim=feat_dim,
        embed_dim=embed_dim,
        max_speakers=num_speakers,
        encoder_blocks=1,
        decoder_blocks=1,
        attention_heads=2,
        ffn_dim=12,
        demux_cnn_stacks=1,
        demux_kernel_size=3,
    )
    net = DiarizationModel.create(config, seed=seed + 101)
    labels = (rng.random((num_frames, num_speakers)) < 0.5).astype(np.float64)
    labels[0, :] = 1.0  # every head active somewhere, keeping all slots valid
    existence = np.ones(num_speakers)
    valid = list(range(num_speakers))
    x0 = rng.normal(size=(feat_dim, num_frames))

    oracle = None
    if name in ("loss_dis", "loss_total"):
        spk = SpeakerEncoder.create(
            SpeakerEncoderConfig(feat_dim=feat_dim, embed_dim=embed_dim), seed=seed + 202
        ).freeze()
        sources = rng.normal(size=(num_speakers, feat_dim, num_frames))
        oracle = [spk.encode(sources[s]) for s in range(num_speakers)]

    def run(x, forced_perm=None):
        out = net.forward(x)
        pit = loss_diar(out.posteriors, labels, valid, forced_perm=forced_perm)
        if name == "loss_diar":
            return pit.loss, pit
        if name == "loss_ext":
            return loss_ext(out.existence, existence), pit
        aligned = align_to_reference(out.branch_embeddings, valid, pit)
        protos = [tt.tmean(b, axis=1, keepdims=True) for b in aligned]
        if name == "loss_dis":
            return loss_dis(aligned, oracle), pit
        if name == "loss_ort":
            return loss_ort(aligned, protos), pit
        if name == "loss_spa":
            return loss_spa(out.branch_embeddings, valid), pit
        if name == "loss_total":
            total = loss_total(
                LossWeights(),
                diar=pit.loss,
                ext=loss_ext(out.existence, existence),
                dis=loss_dis(aligned, oracle),
                ort=loss_ort(aligned, protos),
                spa=loss_spa(out.branch_embeddings, valid),
            )
            return total, pit
        raise DataError(f"unknown loss gradcheck case {name!r}")

    _, base_pit = run(tt.constant(x0))
    frozen = base_pit.perm

    def f(x):
        return run(x, forced_perm=frozen)[0]

    return f, x0
