from .engine import (
    BACKENDS,
    EdgeConnectInpainter,
    InpaintConfig,
    InpaintEvalReport,
    InpaintEvalRow,
    LossWeights,
    composite,
    evaluate_checkpoint,
    finetune,
    get_backend,
    inpaint_polyp,
    pretrain,
)

__all__ = [
    "BACKENDS",
    "EdgeConnectInpainter",
    "InpaintConfig",
    "InpaintEvalReport",
    "InpaintEvalRow",
    "LossWeights",
    "composite",
    "evaluate_checkpoint",
    "finetune",
    "get_backend",
    "inpaint_polyp",
    "pretrain",
]
