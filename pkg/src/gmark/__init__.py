"""Dual-domain watermark codec for Gaussian latent tensors."""

__version__ = "0.1.0"

from .codec import (
    DetectionResult,
    KeyMaterial,
    detect_latent,
    detect_scores_batch,
    embed_batch,
    embed_latent,
    prepare,
)
from .errors import (
    BadMagicError,
    BadVersionError,
    CapacityError,
    FormatError,
    PayloadError,
    TrainingError,
    TruncatedError,
)
from .frequency import (
    FreqPattern,
    build_ring_pattern,
    circular_mask,
    dft2_centered,
    idft2_centered,
    inject_freq,
    score_freq,
)
from .fusion import FuserModel, FuserTrainConfig, load_fuser, save_fuser, train_fuser
from .keys import WatermarkKey, generate_key, load_key, save_key, xor_bits
from .latent_io import read_latent, read_signal_map, write_latent, write_signal_map
from .latents import sample_gaussian, sign_map
from .restorer import (
    GnrTrainConfig,
    RestorerModel,
    load_restorer,
    restore,
    save_restorer,
    train_restorer,
)
from .shuffle import ShuffleKey, permutation, shuffle, unshuffle
from .simulate import (
    BenchmarkConfig,
    BenchmarkReport,
    InversionNoiseModel,
    run_benchmark,
    write_report,
)
from .spatial import (
    UpsampleLayout,
    downsample,
    extract_bits,
    inject_spatial,
    make_layout,
    score_spatial,
    upsample,
)
from .stats import (
    ThresholdPolicy,
    UserRegistry,
    bit_accuracy,
    choose_threshold,
    evaluate,
    fpr_exact,
    identify,
    load_registry,
    make_registry,
    save_registry,
)
from .transforms import TransformSpec, apply_transform, inverse_transform_estimate
