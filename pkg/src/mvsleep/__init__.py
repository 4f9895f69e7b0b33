from .config import ConfigError, RunConfig, derive_seed
from .edf import EdfFormatError, parse_edf, parse_hypnogram
from .encoders import MultiViewModel, build_encoder, count_parameters
from .epoching import SleepEpoch, kfold, make_split, segment_epochs
from .features import FeatureMatrix, read_features, write_features
from .losses import LossConfig, diverse_loss, nt_xent, total_loss
from .metrics import EvalReport, accuracy, cohen_kappa, macro_f1
from .pretrainer import (
    EncoderCheckpoint,
    LinearEvalConfig,
    PretrainConfig,
    extract_features,
    linear_eval,
    pretrain,
)
from .svm import (
    SvmConfig,
    SvmModel,
    cross_validate,
    predict,
    train_binary,
    train_multiclass,
)
from .synth import synthesize
from .views import AugmentConfig, StftConfig, make_views, stft

__all__ = [
    "AugmentConfig",
    "ConfigError",
    "EdfFormatError",
    "EncoderCheckpoint",
    "EvalReport",
    "FeatureMatrix",
    "LinearEvalConfig",
    "LossConfig",
    "MultiViewModel",
    "PretrainConfig",
    "RunConfig",
    "SleepEpoch",
    "StftConfig",
    "SvmConfig",
    "SvmModel",
    "accuracy",
    "build_encoder",
    "cohen_kappa",
    "count_parameters",
    "cross_validate",
    "derive_seed",
    "diverse_loss",
    "extract_features",
    "kfold",
    "linear_eval",
    "macro_f1",
    "make_split",
    "make_views",
    "nt_xent",
    "parse_edf",
    "parse_hypnogram",
    "predict",
    "pretrain",
    "read_features",
    "segment_epochs",
    "stft",
    "synthesize",
    "total_loss",
    "train_binary",
    "train_multiclass",
    "write_features",
]
