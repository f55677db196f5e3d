"""attrdial: measure scalar image attributes, normalize them to [0, 1],
and steer a small diffusion model with them."""

from .config import ModelConfig, ScheduleConfig, TrainConfig
from .diffusion import (
    Adam,
    DenoiserParams,
    ModelParams,
    NoiseSchedule,
    denoise,
    eq_loss,
    init_model_params,
    q_sample,
    sample,
    sample_batch,
    train,
    train_step,
)
from .encoder import (
    SinusoidSpec,
    ValueEncoderParams,
    ValueTokens,
    compose,
    encode,
    encode_backward,
    init_value_encoder,
    sinusoid,
)
from .errors import (
    AttrDialError,
    ConfigError,
    ContractError,
    DecodeError,
    DegenerateDistributionError,
    TrainingDivergenceError,
    UnbalanceableBinError,
    UndefinedRateError,
    UnsupportedFormatError,
)
from .evaluate import (
    SafetyEvalResult,
    SweepResult,
    avg_diff,
    removal_rate,
    run_safety_eval,
    run_sweep,
    spearman,
)
from .image import (
    GrayImage,
    Histogram256,
    Image,
    decode_image,
    encode_image,
    histogram256,
    image_from_array,
    to_grayscale,
    value_channel,
)
from .mapping import (
    BinAssignment,
    MappingTable,
    assign_bins,
    balance,
    rank_normalize,
    to_normalized,
)
from .metrics import (
    AttributeKind,
    EmbeddingProvider,
    FileBackedEmbedder,
    RawScore,
    RealismPrompts,
    SafetyConcept,
    SyntheticEmbedder,
    brightness,
    cosine_similarity,
    detail,
    realism,
    safety,
    score_all,
)
from .reports import emit_report
from .store import Checkpoint, load_checkpoint, read_manifest, save_checkpoint, write_manifest
from .synth import CLASS_NAMES, CorpusConfig, SynthSpec, generate, generate_corpus

__version__ = "0.1.0"
