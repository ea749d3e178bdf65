"""Semi-generalist sensing model.

Classical signal-processing methods feed per-method undercomplete
autoencoders (compressors); their fixed-length codes are fused by a masked
denoising autoencoder (mixer), and an exhaustive sweep over channel masks
picks the method subset that best serves a labeled task.
"""
from .compressor import CompressorModel, train_compressor
from .errors import ConfigError, DataError, SGSMError, StageError, TrainingDivergence
from .kernels import BACKEND
from .mixer import MaskConfig, MixerModel, concat_codes, train_mixer
from .neural import TrainConfig
from .pipeline import (PipelineConfig, SGSMInstance, SyntheticTaskSpec, embed_dataset, pretrain,
                       run_selection, synth_dataset)
from .selection import (LabeledEmbeddingSet, SelectionResult, enumerate_masks, evaluate_subset,
                        select_best)
from .signal_methods import MethodSpec, SignalSequence, apply_method

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CompressorModel",
    "ConfigError",
    "DataError",
    "LabeledEmbeddingSet",
    "MaskConfig",
    "MethodSpec",
    "MixerModel",
    "PipelineConfig",
    "SGSMError",
    "SGSMInstance",
    "SelectionResult",
    "SignalSequence",
    "StageError",
    "SyntheticTaskSpec",
    "TrainConfig",
    "TrainingDivergence",
    "apply_method",
    "concat_codes",
    "embed_dataset",
    "enumerate_masks",
    "evaluate_subset",
    "pretrain",
    "run_selection",
    "select_best",
    "synth_dataset",
    "train_compressor",
    "train_mixer",
]
