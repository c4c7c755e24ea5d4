from .core import (
    CLEAN_T,
    LatentCode,
    NoiseSchedule,
    add_noise,
    make_schedule,
    schedule_from_betas,
)
from .sampler import (
    SamplerHooks,
    cfg_predict,
    ddim_invert,
    ddim_step,
    sample,
    train_loss,
)

__all__ = [
    "CLEAN_T",
    "LatentCode",
    "NoiseSchedule",
    "add_noise",
    "make_schedule",
    "schedule_from_betas",
    "SamplerHooks",
    "cfg_predict",
    "ddim_invert",
    "ddim_step",
    "sample",
    "train_loss",
]
