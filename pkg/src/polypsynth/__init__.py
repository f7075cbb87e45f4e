"""Synthetic polyp generation: mask synthesis, edge-guided inpainting and segmentation evaluation."""
from .data import (
    BinaryMask,
    DatasetManifest,
    EdgeMap,
    MaskedSample,
    RasterImage,
    Record,
    load_dataset,
    pair_random_mask,
    split_dataset,
)
from .edges import CannyEdgeExtractor, extract_edges, extract_polyp_edges, merge_edges
from .exceptions import PolypSynthError
from .inpaint import EdgeConnectInpainter, InpaintConfig, evaluate_checkpoint, finetune, inpaint_polyp, pretrain
from .masks import MaskGanConfig, ProgressiveMaskGAN, filter_masks, sample_masks, train_mask_generator
from .metrics import fid, iou_suite, psnr, score_survey, ssim, survey_mean
from .pipeline import generate_batch, run_pipeline
from .segmentation import SegConfig, UNetSegmenter, build_mixed_dataset, evaluate_seg, train_unet

__version__ = "0.1.0"
