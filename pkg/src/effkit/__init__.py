"""effkit: grouped convolutions, proxy-normalized activations, and the
supporting cost/roofline/resolution/training machinery, in NumPy with
optional Numba kernels (select with EFFKIT_BACKEND=numba|numpy|auto).
"""

from .backend import active_backend, requested_backend
from .checkpoint import load_checkpoint, save_checkpoint
from .convs import ConvSpec, conv_backward, conv_forward, round_group_size
from .layers import (
    Conv,
    GlobalAvgPool,
    Layer,
    Linear,
    NormAct,
    SqueezeExcite,
    decay_param_names,
)
from .model import (
    BASE_STAGES,
    VARIANTS,
    CostReport,
    EfficientNet,
    MBConv,
    ModelConfig,
    StageSpec,
    block_dims,
    build_model,
    count_cost,
    model_plan,
    native_resolution,
    round_channels,
    round_repeats,
)
from .norms import (
    ACTIVATIONS,
    EPSILON,
    EPSILON_TILDE,
    NormSpec,
    QuadratureRule,
    normalize,
    normalize_backward,
    pn_activation,
    pn_activation_backward,
    proxy_moment_grads,
    proxy_moments,
    scaled_activation,
    sigmoid,
)
from .perf import HardwareProfile, IntensityReport, intensity, monotonicity_check, roofline
from .resolution import (
    HALF_RESOLUTIONS,
    ResolutionPair,
    congruent,
    half_resolution,
    parity_profile,
    valid_test_resolutions,
)
from .tensor import load_tensor, make_rng, sample_moments, save_tensor
from .train import (
    Checkpoint,
    FinetuneRecipe,
    TrainRecipe,
    ema_update,
    finetune,
    rmsprop_step,
    smoothed_cross_entropy,
    train_loop,
)

__version__ = "0.1.0"

__all__ = [
    "ACTIVATIONS",
    "BASE_STAGES",
    "Checkpoint",
    "Conv",
    "ConvSpec",
    "CostReport",
    "EPSILON",
    "EPSILON_TILDE",
    "EfficientNet",
    "FinetuneRecipe",
    "GlobalAvgPool",
    "HALF_RESOLUTIONS",
    "HardwareProfile",
    "IntensityReport",
    "Layer",
    "Linear",
    "MBConv",
    "ModelConfig",
    "NormAct",
    "NormSpec",
    "QuadratureRule",
    "ResolutionPair",
    "SqueezeExcite",
    "StageSpec",
    "TrainRecipe",
    "VARIANTS",
    "active_backend",
    "block_dims",
    "build_model",
    "congruent",
    "conv_backward",
    "conv_forward",
    "count_cost",
    "decay_param_names",
    "ema_update",
    "finetune",
    "half_resolution",
    "intensity",
    "load_checkpoint",
    "load_tensor",
    "make_rng",
    "model_plan",
    "monotonicity_check",
    "native_resolution",
    "normalize",
    "normalize_backward",
    "parity_profile",
    "pn_activation",
    "pn_activation_backward",
    "proxy_moment_grads",
    "proxy_moments",
    "requested_backend",
    "rmsprop_step",
    "roofline",
    "round_channels",
    "round_group_size",
    "round_repeats",
    "sample_moments",
    "save_checkpoint",
    "save_tensor",
    "scaled_activation",
    "sigmoid",
    "smoothed_cross_entropy",
    "train_loop",
    "valid_test_resolutions",
]
