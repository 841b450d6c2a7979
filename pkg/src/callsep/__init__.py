"""Two-speaker call separation toolkit.

Time-domain separation of stereo call recordings: corpus preparation,
a convolutional mask-estimation separator, an embedding-similarity
training objective, evaluation metrics, and a streaming deployment
simulator with persistent speaker channels.
"""

from .audio import Waveform, read_audio, read_wav_mono, write_wav
from .bss import DecompositionResult, bss_decompose
from .corpus import (
    MixtureTriple,
    SplitManifest,
    group_shuffle_split,
    load_manifest,
    load_stereo_call,
    make_mixture,
    prepare_corpus_dir,
    save_corpus,
    segment_triples,
)
from .embeddings import (
    EmbeddingVector,
    SimilarityConfig,
    StubEmbedder,
    composite_loss,
    cosine_similarity,
    get_backend,
    similarity_loss,
    similarity_report,
)
from .errors import (
    AlignmentError,
    AudioFormatError,
    BackendMissingError,
    CallsepError,
    CheckpointMismatchError,
    DivergenceError,
    EmptySplitError,
    MissingReferenceError,
)
from .metrics import pit_loss, pit_si_snr, si_sdr_improvement, si_snr
from .model import (
    ConvTasNet,
    SeparatorConfig,
    adapt_external_state_dict,
    build_model,
    count_parameters,
    load_checkpoint,
    load_into,
    receptive_field_frames,
    receptive_field_seconds,
    save_checkpoint,
    separate,
)
from .streaming import (
    ChannelState,
    StreamSegment,
    SyncReport,
    assign_channels,
    length_sweep,
    mixture_consistent_scale,
    run_stream,
    segment_stream,
    sync_error,
)
from .trainer import TrainConfig, TrainRecord, evaluate, sweep, train

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "AudioFormatError",
    "BackendMissingError",
    "CallsepError",
    "ChannelState",
    "CheckpointMismatchError",
    "ConvTasNet",
    "DecompositionResult",
    "DivergenceError",
    "EmbeddingVector",
    "EmptySplitError",
    "MissingReferenceError",
    "MixtureTriple",
    "SeparatorConfig",
    "SimilarityConfig",
    "SplitManifest",
    "StreamSegment",
    "StubEmbedder",
    "SyncReport",
    "TrainConfig",
    "TrainRecord",
    "Waveform",
    "adapt_external_state_dict",
    "assign_channels",
    "bss_decompose",
    "build_model",
    "composite_loss",
    "cosine_similarity",
    "count_parameters",
    "evaluate",
    "get_backend",
    "group_shuffle_split",
    "length_sweep",
    "mixture_consistent_scale",
    "load_checkpoint",
    "load_into",
    "load_manifest",
    "load_stereo_call",
    "make_mixture",
    "pit_loss",
    "pit_si_snr",
    "prepare_corpus_dir",
    "read_audio",
    "read_wav_mono",
    "receptive_field_frames",
    "receptive_field_seconds",
    "run_stream",
    "save_checkpoint",
    "save_corpus",
    "segment_stream",
    "segment_triples",
    "separate",
    "si_sdr_improvement",
    "si_snr",
    "similarity_loss",
    "similarity_report",
    "sweep",
    "sync_error",
    "train",
    "write_wav",
]
