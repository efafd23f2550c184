"""Synthetic diarization corpora: Gaussian-cluster sources with Markov activity.

Each speaker is a Gaussian cluster in feature space plus a two-state
(on/off) Markov chain for speech activity. A mixture frame is the exact
elementwise sum of the active speakers' source frames, so every sample
satisfies the additive observation model bit-for-bit: silent frames are
stored as zeros in the source tensors.

A corpus serializes to one directory: flat little-endian binary tensors
per sequence plus a JSON manifest, and the labels additionally export as
a reference RTTM at the corpus frame duration.
"""

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import DataError
from .util import seeded_rng

_MANIFEST = "manifest.json"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    mean: tuple
    scale: float
    p_on_off: float
    p_off_on: float

    def mean_array(self):
        return np.asarray(self.mean, dtype=np.float64)


@dataclass
class MixtureSample:
    sample_id: str
    mixture: np.ndarray        # (F, T)
    sources: np.ndarray        # (k, F, T), zero where inactive
    labels: np.ndarray         # (T, k) in {0, 1}
    speaker_ids: tuple
    existence: np.ndarray      # (k,) in {0, 1}; 1 iff the label column is non-zero
    overlap: float

    @property
    def num_frames(self):
        return self.mixture.shape[1]

    @property
    def num_speakers(self):
        return len(self.speaker_ids)


@dataclass
class Corpus:
    feat_dim: int
    frame_dur: float
    seed: int
    profiles: list
    samples: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    @property
    def mean_overlap(self):
        if not self.samples:
            return 0.0
        return float(np.mean([s.overlap for s in self.samples]))


@dataclass(frozen=True)
class SynthConfig:
    num_sequences: int = 200
    frames: int = 200
    feat_dim: int = 16
    pool_size: int = 8
    speakers_per_mix: tuple = (2,)
    overlap_target: float = None
    overlap_tol: float = 0.1
    mean_scale: float = 3.0
    feature_scale: float = 1.0
    min_separation: float = 4.0
    p_on_off: float = 0.1
    p_off_on: float = 0.1
    frame_dur: float = 0.01

    def validate(self):
        if self.num_sequences <= 0 or self.frames <= 0 or self.feat_dim <= 0:
            raise DataError("synth: num_sequences, frames, and feat_dim must be positive")
        ks = _mix_sizes(self)
        if any(k < 1 for k in ks):
            raise DataError("synth: speakers_per_mix entries must be >= 1")
        if self.pool_size < max(ks):
            raise DataError(
                f"synth: pool_size {self.pool_size} smaller than speakers_per_mix {max(ks)}"
            )
        for p in (self.p_on_off, self.p_off_on):
            if not 0.0 < p < 1.0:
                raise DataError("synth: Markov switch probabilities must lie in (0, 1)")
        return self


def make_speaker_pool(config, rng):
    """Draw well-separated Gaussian speaker profiles from the config."""
    means = []
    tries = 0
    while len(means) < config.pool_size:
        tries += 1
        if tries > 10000:
            raise DataError(
                "synth: could not place speaker means at the requested separation; "
                "lower min_separation or mean_scale"
            )
        cand = rng.normal(scale=config.mean_scale, size=config.feat_dim)
        if all(np.linalg.norm(cand - m) >= config.min_separation for m in means):
            means.append(cand)
    return [
        SpeakerProfile(
            speaker_id=f"spk{idx:03d}",
            mean=tuple(float(x) for x in m),
            scale=config.feature_scale,
            p_on_off=config.p_on_off,
            p_off_on=config.p_off_on,
        )
        for idx, m in enumerate(means)
    ]


def sample_activity(profile, num_frames, rng):
    """One speech-activity track from the speaker's two-state Markov chain."""
    p_on = profile.p_off_on / (profile.p_on_off + profile.p_off_on)
    y = np.zeros(num_frames, dtype=np.uint8)
    state = 1 if rng.random() < p_on else 0
    for t in range(num_frames):
        y[t] = state
        flip = profile.p_on_off if state == 1 else profile.p_off_on
        if rng.random() < flip:
            state = 1 - state
    return y


def overlap_ratio(labels):
    """Fraction of speech frames where two or more speakers are active."""
    active = labels.sum(axis=1)
    speech = int((active >= 1).sum())
    if speech == 0:
        return 0.0
    return float((active >= 2).sum() / speech)


def mix_sources(sources, labels):
    """Assemble the mixture as the exact sum of active source frames.

    ``sources`` must already be zero at inactive frames, so the sum over
    the speaker axis realizes the additive observation model exactly.
    """
    if sources.shape[0] != labels.shape[1] or sources.shape[2] != labels.shape[0]:
        raise DataError(
            f"mix_sources: sources {sources.shape} inconsistent with labels {labels.shape}"
        )
    return sources.sum(axis=0)


def _mix_sizes(config):
    k = config.speakers_per_mix
    return tuple(k) if isinstance(k, (tuple, list)) else (int(k),)


def _generate_sample(config, profiles, sample_id, rng):
    k = int(rng.choice(np.asarray(_mix_sizes(config))))
    chosen = [profiles[i] for i in rng.choice(len(profiles), size=k, replace=False)]
    T, F = config.frames, config.feat_dim

    for _ in range(1000):
        labels = np.stack([sample_activity(p, T, rng) for p in chosen], axis=1)
        if np.any(labels.sum(axis=0) == 0):
            continue  # every chosen speaker must speak at least once
        ratio = overlap_ratio(labels)
        if config.overlap_target is None or abs(ratio - config.overlap_target) <= config.overlap_tol:
            break
    else:
        what = (
            f"overlap target {config.overlap_target} +- {config.overlap_tol}"
            if config.overlap_target is not None
            else "activity constraint (every speaker audible)"
        )
        raise DataError(
            f"synth: {what} is infeasible for switch probabilities "
            f"(p_on_off={config.p_on_off}, p_off_on={config.p_off_on}); adjust the Markov parameters"
        )

    sources = np.zeros((k, F, T))
    for s, prof in enumerate(chosen):
        active = labels[:, s].astype(bool)
        n_act = int(active.sum())
        sources[s][:, active] = (
            prof.mean_array()[:, None] + rng.normal(scale=prof.scale, size=(F, n_act))
        )
    return MixtureSample(
        sample_id=sample_id,
        mixture=mix_sources(sources, labels),
        sources=sources,
        labels=labels,
        speaker_ids=tuple(p.speaker_id for p in chosen),
        existence=(labels.sum(axis=0) > 0).astype(np.uint8),
        overlap=overlap_ratio(labels),
    )


def generate_corpus(config, seed):
    """Generate a labeled corpus; fully reproducible from (config, seed)."""
    config.validate()
    pool_rng = seeded_rng(seed, "speaker-pool")
    profiles = make_speaker_pool(config, pool_rng)
    samples = [
        _generate_sample(config, profiles, f"seq{i:05d}", seeded_rng(seed, "sequence", i))
        for i in range(config.num_sequences)
    ]
    return Corpus(
        feat_dim=config.feat_dim,
        frame_dur=config.frame_dur,
        seed=seed,
        profiles=profiles,
        samples=samples,
    )


@dataclass
class SplitResult:
    train: Corpus
    dev: Corpus
    test: Corpus
    dropped: int = 0


def split(corpus, ratios, seed, holdout_speakers=False):
    """Partition a corpus into train/dev/test by the given ratios.

    With ``holdout_speakers`` the speaker pool is partitioned first and
    sequences mixing both sides are dropped (count reported), so train
    and test share no speaker identities.
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3:
        raise DataError(f"split: ratios must be three values summing to 1, got {ratios}")
    rng = seeded_rng(seed, "split")

    def _sub(samples):
        return Corpus(corpus.feat_dim, corpus.frame_dur, corpus.seed, corpus.profiles, samples)

    dropped = 0
    if holdout_speakers:
        ids = [p.speaker_id for p in corpus.profiles]
        perm = list(rng.permutation(len(ids)))
        n_test_spk = max(1, round(ratios[2] * len(ids)))
        test_ids = {ids[i] for i in perm[:n_test_spk]}
        test_samples, rest = [], []
        for s in corpus.samples:
            inside = set(s.speaker_ids) & test_ids
            if not inside:
                rest.append(s)
            elif set(s.speaker_ids) <= test_ids:
                test_samples.append(s)
            else:
                dropped += 1
        order = list(rng.permutation(len(rest)))
        cut = round(len(rest) * ratios[0] / (ratios[0] + ratios[1]))
        train_samples = [rest[i] for i in order[:cut]]
        dev_samples = [rest[i] for i in order[cut:]]
    else:
        order = list(rng.permutation(len(corpus.samples)))
        n = len(order)
        c1 = round(n * ratios[0])
        c2 = round(n * (ratios[0] + ratios[1]))
        train_samples = [corpus.samples[i] for i in order[:c1]]
        dev_samples = [corpus.samples[i] for i in order[c1:c2]]
        test_samples = [corpus.samples[i] for i in order[c2:]]

    for name, part in (("train", train_samples), ("dev", dev_samples), ("test", test_samples)):
        if not part:
            raise DataError(f"split: {name} partition is empty (ratios {ratios}, corpus size {len(corpus)})")
    return SplitResult(_sub(train_samples), _sub(dev_samples), _sub(test_samples), dropped)


# ---------------------------------------------------------------------------
# serialization


def save_corpus(corpus, out_dir):
    """Write the corpus directory: binary tensors, manifest, reference RTTM."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in corpus.samples:
        files = {
            "mixture": f"{s.sample_id}.mix.bin",
            "sources": f"{s.sample_id}.src.bin",
            "labels": f"{s.sample_id}.lab.bin",
        }
        s.mixture.astype("<f8").tofile(out / files["mixture"])
        s.sources.astype("<f8").tofile(out / files["sources"])
        s.labels.astype(np.uint8).tofile(out / files["labels"])
        entries.append(
            {
                "sample_id": s.sample_id,
                "speaker_ids": list(s.speaker_ids),
                "existence": [int(v) for v in s.existence],
                "overlap": s.overlap,
                "files": files,
                "shapes": {
                    "mixture": list(s.mixture.shape),
                    "sources": list(s.sources.shape),
                    "labels": list(s.labels.shape),
                },
            }
        )
    manifest = {
        "format_version": _FORMAT_VERSION,
        "dtype": {"mixture": "<f8", "sources": "<f8", "labels": "u1"},
        "feat_dim": corpus.feat_dim,
        "frame_dur": corpus.frame_dur,
        "seed": corpus.seed,
        "mean_overlap": corpus.mean_overlap,
        "profiles": [asdict(p) for p in corpus.profiles],
        "sequences": entries,
    }
    (out / _MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    export_reference_rttm(corpus, out / "ref.rttm")
    return out / _MANIFEST


def load_corpus(corpus_dir):
    path = Path(corpus_dir)
    manifest_path = path / _MANIFEST
    if not manifest_path.exists():
        raise DataError(f"load_corpus: no {_MANIFEST} in {path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != _FORMAT_VERSION:
        raise DataError(f"load_corpus: unsupported format version {manifest.get('format_version')}")
    profiles = [
        SpeakerProfile(
            speaker_id=p["speaker_id"],
            mean=tuple(p["mean"]),
            scale=p["scale"],
            p_on_off=p["p_on_off"],
            p_off_on=p["p_off_on"],
        )
        for p in manifest["profiles"]
    ]
    samples = []
    for e in manifest["sequences"]:
        shp = e["shapes"]
        mixture = np.fromfile(path / e["files"]["mixture"], dtype="<f8").reshape(shp["mixture"])
        sources = np.fromfile(path / e["files"]["sources"], dtype="<f8").reshape(shp["sources"])
        labels = np.fromfile(path / e["files"]["labels"], dtype=np.uint8).reshape(shp["labels"])
        samples.append(
            MixtureSample(
                sample_id=e["sample_id"],
                mixture=mixture,
                sources=sources,
                labels=labels,
                speaker_ids=tuple(e["speaker_ids"]),
                existence=np.asarray(e["existence"], dtype=np.uint8),
                overlap=e["overlap"],
            )
        )
    return Corpus(
        feat_dim=manifest["feat_dim"],
        frame_dur=manifest["frame_dur"],
        seed=manifest["seed"],
        profiles=profiles,
        samples=samples,
    )


def export_reference_rttm(corpus, path):
    from .metrics import SegmentList, rttm_write, segments_from_frames

    lists = []
    for s in corpus.samples:
        seglist = segments_from_frames(
            s.labels, corpus.frame_dur, list(s.speaker_ids), s.sample_id
        )
        lists.append(seglist if seglist.segments else SegmentList(s.sample_id, []))
    rttm_write(lists, path)
    return path
