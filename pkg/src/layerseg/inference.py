"""Inference: per-region segmentation and stitching into image coordinates.

Inference never builds replacement pairs; each region crop and its region
image go through the forward pass once, the text slot is selected against
the polygon mask, and the binarized alpha is warped back into the full
image (union where crops overlap).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from layerseg.data import ImageSample, RegionCrop, crop_regions, make_region_image
from layerseg.errors import ValidationError
from layerseg.metrics import binarize, select_foreground_slot
from layerseg.model import TextSegModel, batch_to_tensor

log = logging.getLogger(__name__)

PostprocessHook = Callable[[np.ndarray, np.ndarray], np.ndarray]

_POSTPROCESS_REGISTRY: dict[str, PostprocessHook] = {}


def register_postprocess(name: str, hook: PostprocessHook) -> None:
    """Register a per-mask transform (mask, crop_image) -> mask.

    A Dense-CRF refinement would plug in here; only "identity" ships.
    """
    _POSTPROCESS_REGISTRY[name] = hook


def get_postprocess(name: str) -> PostprocessHook:
    if name not in _POSTPROCESS_REGISTRY:
        raise ValidationError(
            f"unknown postprocess hook {name!r}; "
            f"registered: {sorted(_POSTPROCESS_REGISTRY)}"
        )
    return _POSTPROCESS_REGISTRY[name]


register_postprocess("identity", lambda mask, crop: mask)


@dataclass
class SegResult:
    binary_mask: np.ndarray  # Hc x Wc {0, 1}
    fg_slot: int
    alpha_fg: np.ndarray  # Hc x Wc in [0, 1]
    crop: RegionCrop
    provenance: str = ""


def segment_crop(
    model: TextSegModel,
    crop: RegionCrop,
    threshold: float = 0.5,
    postprocess: str = "identity",
    provenance: str = "",
) -> SegResult:
    """Forward one crop and binarize its foreground alpha."""
    model.eval()
    with torch.no_grad():
        out = model(
            batch_to_tensor([crop.crop]),
            batch_to_tensor([make_region_image(crop)]),
        )
    alphas = out["alphas"][0].numpy()
    fg_slot = select_foreground_slot(alphas, crop.mask)
    alpha_fg = alphas[fg_slot]
    mask = binarize(alpha_fg, threshold)
    mask = get_postprocess(postprocess)(mask, crop.crop)
    return SegResult(
        binary_mask=mask,
        fg_slot=fg_slot,
        alpha_fg=alpha_fg,
        crop=crop,
        provenance=provenance,
    )


def stitch_masks(
    results: list[SegResult], image_shape: tuple[int, int]
) -> np.ndarray:
    """Warp per-crop masks back to image coordinates and union them."""
    from layerseg.data import resize_image

    full = np.zeros(image_shape, dtype=np.float32)
    for res in results:
        window = res.crop.window
        if window is None:
            raise ValidationError("crop lacks window geometry; cannot stitch")
        r0, c0, r1, c1 = window
        back = resize_image(res.binary_mask, r1 - r0, c1 - c0)
        full[r0:r1, c0:c1] = np.maximum(full[r0:r1, c0:c1], (back > 0.5).astype(np.float32))
    return full


def infer(
    model: TextSegModel,
    sample: ImageSample,
    crop_size: tuple[int, int],
    threshold: float = 0.5,
    postprocess: str = "identity",
    provenance: str = "",
) -> tuple[list[SegResult], np.ndarray]:
    """Segment every polygon region of a sample; returns (results, full mask)."""
    if not sample.polygons:
        log.warning("sample %s has no polygons; returning empty mask", sample.sample_id)
        return [], np.zeros(sample.image.shape[:2], dtype=np.float32)
    crops = crop_regions(sample, crop_size=crop_size)
    results = [
        segment_crop(model, crop, threshold, postprocess, provenance)
        for crop in crops
    ]
    return results, stitch_masks(results, sample.image.shape[:2])
