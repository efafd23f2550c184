"""Speaker diarization via demultiplexed speaker embeddings.

A self-contained desk-scale stack: dense-tensor reverse-mode autodiff,
the four-stage diarization network, permutation-invariant objectives,
synthetic corpora, training, and frame-level DER scoring.
"""

from . import tensor
from .assignment import assign_min, assign_min_exhaustive, assign_min_hungarian
from .errors import DataError, NumericError
from .gradcheck import GradCheckReport, finite_diff_check, run_component
from .losses import (
    LossWeights,
    PitResult,
    align_to_reference,
    bce_cost_matrix,
    clip_prob,
    loss_diar,
    loss_dis,
    loss_ext,
    loss_ort,
    loss_spa,
    loss_total,
)
from .metrics import (
    DerReport,
    Segment,
    SegmentList,
    binarize,
    der,
    der_from_segments,
    frame_error_counts,
    rttm_read,
    rttm_write,
    segments_from_frames,
)
from .model import (
    DiarizationModel,
    DiarizationOutput,
    ModelConfig,
    SpeakerEncoder,
    SpeakerEncoderConfig,
    prototypes,
    valid_speaker_set,
)
from .synth import (
    Corpus,
    MixtureSample,
    SpeakerProfile,
    SynthConfig,
    generate_corpus,
    load_corpus,
    mix_sources,
    save_corpus,
    split,
)
from .tensor import Tensor
from .train import (
    Adam,
    NonFiniteLossError,
    TrainConfig,
    TrainResult,
    adapt,
    evaluate_corpus_der,
    infer,
    noam_lr,
    pretrain_speaker_encoder,
    train,
)

__version__ = "0.1.0"
