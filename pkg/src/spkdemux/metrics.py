"""Frame-level diarization scoring and RTTM segment interchange.

Scoring is frame-native with zero collar: reference and hypothesis
activity matrices are compared after an optimal one-to-one speaker
mapping (maximum total frame overlap, solved as a min-cost assignment).
Per frame, missed speech is reference speakers beyond the hypothesis
count, false alarm the reverse, and confusion the matched-but-wrong
remainder, so DER = FA + MI + CF holds exactly by construction.
"""

from dataclasses import dataclass, field

import numpy as np

from .assignment import assign_min
from .errors import DataError


class RttmParseError(DataError):
    pass


class ScoringError(DataError):
    pass


@dataclass(frozen=True)
class Segment:
    onset: float
    duration: float
    speaker: str


@dataclass
class SegmentList:
    recording_id: str
    segments: list = field(default_factory=list)

    def speakers(self):
        return sorted({s.speaker for s in self.segments})

    def total_speech(self):
        return sum(s.duration for s in self.segments)


def merge_same_speaker(segments):
    """Union the intervals of each speaker; overlaps within a speaker merge."""
    by_spk = {}
    for seg in segments:
        by_spk.setdefault(seg.speaker, []).append((seg.onset, seg.onset + seg.duration))
    merged = []
    for spk in sorted(by_spk):
        intervals = sorted(by_spk[spk])
        acc = [list(intervals[0])]
        for lo, hi in intervals[1:]:
            if lo <= acc[-1][1]:
                acc[-1][1] = max(acc[-1][1], hi)
            else:
                acc.append([lo, hi])
        merged.extend(Segment(lo, hi - lo, spk) for lo, hi in acc)
    merged.sort(key=lambda s: (s.onset, s.speaker))
    return merged


# ---------------------------------------------------------------------------
# RTTM


def rttm_write(segment_lists, path):
    """Write SPEAKER lines, onsets and durations to 3 decimal places."""
    lines = []
    for sl in segment_lists:
        for seg in sorted(sl.segments, key=lambda s: (s.onset, s.speaker)):
            if seg.duration <= 0:
                raise DataError(f"rttm_write: non-positive duration {seg.duration} for {sl.recording_id}")
            lines.append(
                f"SPEAKER {sl.recording_id} 1 {seg.onset:.3f} {seg.duration:.3f} "
                f"<NA> <NA> {seg.speaker} <NA> <NA>"
            )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))
    return path


def rttm_read(path):
    """Parse an RTTM file into per-recording SegmentLists.

    Same-speaker overlaps are merged on load. Malformed lines raise with
    the offending line number.
    """
    recordings = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith(";;"):
                continue
            fields = line.split()
            if len(fields) != 10:
                raise RttmParseError(
                    f"{path}:{lineno}: expected 10 fields, found {len(fields)}"
                )
            if fields[0] != "SPEAKER":
                raise RttmParseError(f"{path}:{lineno}: unsupported record type {fields[0]!r}")
            try:
                onset = float(fields[3])
                duration = float(fields[4])
            except ValueError:
                raise RttmParseError(f"{path}:{lineno}: onset/duration are not numbers") from None
            if duration <= 0:
                raise RttmParseError(f"{path}:{lineno}: non-positive duration {duration}")
            recordings.setdefault(fields[1], []).append(Segment(onset, duration, fields[7]))
    return [
        SegmentList(rec, merge_same_speaker(segs)) for rec, segs in sorted(recordings.items())
    ]


# ---------------------------------------------------------------------------
# frame <-> segment conversion


def segments_from_frames(decisions, frame_dur, speaker_labels, recording_id):
    """Merge per-speaker frame runs into labeled segments."""
    decisions = np.asarray(decisions)
    segments = []
    for s in range(decisions.shape[1]):
        col = decisions[:, s].astype(bool)
        t = 0
        while t < len(col):
            if col[t]:
                start = t
                while t < len(col) and col[t]:
                    t += 1
                segments.append(
                    Segment(start * frame_dur, (t - start) * frame_dur, speaker_labels[s])
                )
            else:
                t += 1
    segments.sort(key=lambda seg: (seg.onset, seg.speaker))
    return SegmentList(recording_id, segments)


def frames_from_segments(seglist, frame_dur, num_frames=None):
    """Rasterize segments onto the frame grid; returns (matrix T x S, speakers)."""
    speakers = seglist.speakers()
    end = 0
    spans = []
    for seg in seglist.segments:
        a = int(round(seg.onset / frame_dur))
        b = int(round((seg.onset + seg.duration) / frame_dur))
        spans.append((a, b, speakers.index(seg.speaker)))
        end = max(end, b)
    T = num_frames if num_frames is not None else end
    mat = np.zeros((T, len(speakers)), dtype=np.uint8)
    for a, b, s in spans:
        mat[a : min(b, T), s] = 1
    return mat, speakers


# ---------------------------------------------------------------------------
# binarization


def binarize(posteriors, valid, threshold=0.5, median_window=1):
    """Threshold posteriors into frame decisions.

    Heads outside the valid set are forced inactive. Values exactly at
    the threshold count as active. ``median_window`` > 1 applies a
    per-speaker binary median (majority) smoother with edge replication.
    """
    if not 0.0 < threshold < 1.0:
        raise DataError(f"binarize: threshold must be in (0,1), got {threshold}")
    if median_window < 1 or median_window % 2 == 0:
        raise DataError(f"binarize: median_window must be odd and >= 1, got {median_window}")
    post = np.asarray(posteriors, dtype=np.float64)
    decisions = np.zeros(post.shape, dtype=np.uint8)
    valid = sorted(set(valid))
    decisions[:, valid] = (post[:, valid] >= threshold).astype(np.uint8)
    if median_window > 1:
        half = median_window // 2
        padded = np.pad(decisions, ((half, half), (0, 0)), mode="edge")
        windows = np.stack(
            [padded[i : i + decisions.shape[0]] for i in range(median_window)], axis=0
        )
        decisions = (windows.sum(axis=0) * 2 > median_window).astype(np.uint8)
        keep = np.zeros(post.shape[1], dtype=bool)
        keep[valid] = True
        decisions[:, ~keep] = 0
    return decisions


# ---------------------------------------------------------------------------
# DER


@dataclass
class DerReport:
    fa_frames: int
    mi_frames: int
    cf_frames: int
    ref_speaker_frames: int
    scored_frames: int
    frame_dur: float = 0.01

    def _frac(self, n):
        return n / self.ref_speaker_frames

    @property
    def fa(self):
        return self._frac(self.fa_frames)

    @property
    def mi(self):
        return self._frac(self.mi_frames)

    @property
    def cf(self):
        return self._frac(self.cf_frames)

    @property
    def der(self):
        return self._frac(self.fa_frames + self.mi_frames + self.cf_frames)

    def as_dict(self):
        return {
            "der": self.der,
            "fa": self.fa,
            "mi": self.mi,
            "cf": self.cf,
            "der_pct": 100.0 * self.der,
            "fa_pct": 100.0 * self.fa,
            "mi_pct": 100.0 * self.mi,
            "cf_pct": 100.0 * self.cf,
            "ref_speaker_frames": self.ref_speaker_frames,
            "scored_frames": self.scored_frames,
            "frame_dur": self.frame_dur,
        }


def frame_error_counts(reference, hypothesis):
    """Frame error counts after the optimal reference->hypothesis mapping."""
    ref = np.asarray(reference).astype(bool)
    hyp = np.asarray(hypothesis).astype(bool)
    if ref.ndim != 2 or hyp.ndim != 2:
        raise ScoringError("der: activity matrices must be 2-D (frames x speakers)")
    if ref.shape[0] != hyp.shape[0]:
        raise ScoringError(
            f"der: frame counts differ, reference {ref.shape[0]} vs hypothesis {hyp.shape[0]}"
        )
    n_ref, n_hyp = ref.shape[1], hyp.shape[1]
    ncorr = np.zeros(ref.shape[0], dtype=np.int64)
    if n_ref and n_hyp:
        overlap = ref.astype(np.int64).T @ hyp.astype(np.int64)  # (n_ref, n_hyp)
        n = max(n_ref, n_hyp)
        padded = np.zeros((n, n))
        padded[:n_ref, :n_hyp] = -overlap.astype(np.float64)
        perm, _ = assign_min(padded)
        for r in range(n_ref):
            h = perm[r]
            if h < n_hyp:
                ncorr += ref[:, r] & hyp[:, h]
    nr = ref.sum(axis=1)
    nh = hyp.sum(axis=1)
    mi = int(np.maximum(nr - nh, 0).sum())
    fa = int(np.maximum(nh - nr, 0).sum())
    cf = int((np.minimum(nr, nh) - ncorr).sum())
    return fa, mi, cf, int(nr.sum()), int(ref.shape[0])


def der(reference, hypothesis, frame_dur=0.01):
    """Score one recording's frame activity matrices (zero collar).

    Speaker axes need not match; the mapping between reference and
    hypothesis speakers is optimal by total frame overlap.
    """
    fa, mi, cf, ref_frames, scored = frame_error_counts(reference, hypothesis)
    if ref_frames == 0:
        raise ScoringError("der: reference contains no speech; DER is undefined")
    return DerReport(fa, mi, cf, ref_frames, scored, frame_dur)


def der_from_segments(ref_lists, hyp_lists, frame_dur=0.01):
    """Aggregate DER over recordings, mapping speakers per recording."""
    hyps = {sl.recording_id: sl for sl in hyp_lists}
    extra = set(hyps) - {sl.recording_id for sl in ref_lists}
    totals = np.zeros(5, dtype=np.int64)
    for ref_sl in ref_lists:
        hyp_sl = hyps.get(ref_sl.recording_id, SegmentList(ref_sl.recording_id, []))
        ref_end = max(
            (int(round((s.onset + s.duration) / frame_dur)) for s in ref_sl.segments), default=0
        )
        hyp_end = max(
            (int(round((s.onset + s.duration) / frame_dur)) for s in hyp_sl.segments), default=0
        )
        T = max(ref_end, hyp_end)
        ref_mat, _ = frames_from_segments(ref_sl, frame_dur, T)
        hyp_mat, _ = frames_from_segments(hyp_sl, frame_dur, T)
        totals += np.asarray(frame_error_counts(ref_mat, hyp_mat), dtype=np.int64)
    for rec in sorted(extra):  # hypothesis-only recordings score as pure false alarm
        sl = hyps[rec]
        T = max(int(round((s.onset + s.duration) / frame_dur)) for s in sl.segments)
        mat, _ = frames_from_segments(sl, frame_dur, T)
        totals += np.asarray([int(mat.sum()), 0, 0, 0, T], dtype=np.int64)
    fa, mi, cf, ref_frames, scored = (int(v) for v in totals)
    if ref_frames == 0:
        raise ScoringError("der: reference contains no speech; DER is undefined")
    return DerReport(fa, mi, cf, ref_frames, scored, frame_dur)
