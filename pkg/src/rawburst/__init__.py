"""Conditioned burst denoising for low-light Bayer video.

A numpy implementation of the full pipeline: synthetic RAW burst data with
a physically parameterized noise model, a selective-scan burst mixer with
sequential and parallel kernels, a conditioned U-shaped denoiser, and a
deterministic training loop. A compiled scan kernel is used when the
optional extension built at install time is importable; everything falls
back to pure numpy otherwise.
"""

from .conditioning import (
    ADALN_EPS,
    AdaptiveLayerNorm,
    CaptureCondition,
    ConditionEmbedding,
    ConditionVocabulary,
    default_vocabulary,
)
from .kernels import active_backend, available_backends, set_backend
from .metrics import PsnrResult, combined_loss, l1_loss, ms_ssim, psnr, ssim
from .model import (
    BurstDenoiser,
    ModelConfig,
    build_model,
    config_hash,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .optim import Adam, cosine_lr
from .rawdata import (
    BayerFrame,
    SceneSpec,
    SensorProfile,
    VideoSequence,
    apply_noise,
    bayer_pack,
    bayer_unpack,
    crop_mosaic,
    default_profiles,
    load_dataset,
    load_sequence,
    make_dataset,
    manifest_hash,
    mosaic,
    noise_moments,
    render_sequence,
    save_sequence,
    synth_clean_video,
)
from .scan import (
    BurstSequence,
    SelectiveScanParams,
    burst_flatten,
    burst_unflatten,
    scan_parallel,
    scan_sequential,
    selective_scan,
)
from .tensor import Tensor, backward, no_grad
from .training import (
    ABLATION_VARIANTS,
    EvalReport,
    TrainConfig,
    TrainingDiverged,
    ablate,
    evaluate,
    noisy_baseline,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "ADALN_EPS",
    "ABLATION_VARIANTS",
    "Adam",
    "AdaptiveLayerNorm",
    "BayerFrame",
    "BurstDenoiser",
    "BurstSequence",
    "CaptureCondition",
    "ConditionEmbedding",
    "ConditionVocabulary",
    "EvalReport",
    "ModelConfig",
    "PsnrResult",
    "SceneSpec",
    "SelectiveScanParams",
    "SensorProfile",
    "Tensor",
    "TrainConfig",
    "TrainingDiverged",
    "VideoSequence",
    "ablate",
    "active_backend",
    "apply_noise",
    "available_backends",
    "backward",
    "bayer_pack",
    "bayer_unpack",
    "build_model",
    "burst_flatten",
    "burst_unflatten",
    "combined_loss",
    "config_hash",
    "cosine_lr",
    "count_parameters",
    "crop_mosaic",
    "default_profiles",
    "default_vocabulary",
    "evaluate",
    "l1_loss",
    "load_checkpoint",
    "load_dataset",
    "load_sequence",
    "make_dataset",
    "manifest_hash",
    "mosaic",
    "ms_ssim",
    "no_grad",
    "noise_moments",
    "noisy_baseline",
    "psnr",
    "render_sequence",
    "save_checkpoint",
    "save_sequence",
    "scan_parallel",
    "scan_sequential",
    "selective_scan",
    "set_backend",
    "ssim",
    "synth_clean_video",
    "train",
]
