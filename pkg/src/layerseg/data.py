"""Dataset ingestion, region cropping, background replacement, augmentations.

Images are numpy float32 arrays, HWC, values in [0, 1]. Region masks are
float32 arrays holding exactly 0.0 or 1.0 so that masking identities such
as ``region_image == crop * M`` hold bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image

from layerseg.errors import ValidationError

log = logging.getLogger(__name__)

DEFAULT_CROP_SIZE = (128, 256)  # (height, width)
CROP_PAD_FRACTION = 0.05
MERGE_IOU_THRESHOLD = 0.5


@dataclass
class ImageSample:
    """One manifest record: image, polygon text regions, optional GT mask."""

    image: np.ndarray  # H x W x 3, float32 in [0, 1]
    polygons: list[np.ndarray]  # each P x 2, float (x, y) pixel coords
    gt_mask: np.ndarray | None = None  # H x W, float32 {0, 1}
    sample_id: str = ""


@dataclass
class RegionCrop:
    """Fixed-size crop around one text region group."""

    crop: np.ndarray  # Hc x Wc x 3
    mask: np.ndarray  # Hc x Wc, {0, 1}
    source_id: str = ""
    gt_mask: np.ndarray | None = None  # Hc x Wc, evaluation only
    window: tuple[int, int, int, int] | None = None  # (r0, c0, r1, c1) in source

    @property
    def region_image(self) -> np.ndarray:
        return make_region_image(self)


@dataclass
class ReplacementPair:
    """An original crop and its background-replaced twin (same mask)."""

    original: RegionCrop
    replaced: RegionCrop


# ---------------------------------------------------------------------------
# Manifest I/O


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.float32)


def save_mask(path: Path, mask: np.ndarray) -> None:
    """Write a {0,1} mask as an 8-bit image with 255 = foreground."""
    Image.fromarray((np.asarray(mask) > 0.5).astype(np.uint8) * 255).save(path)


def load_dataset(manifest_path: str | Path) -> list[ImageSample]:
    """Read a line-delimited manifest into memory, in manifest order.

    Each line is a JSON object with fields ``image`` (path relative to the
    manifest), ``polygons`` (list of [x, y] lists) and optional ``mask``.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ValidationError(f"manifest not found: {manifest_path}")
    root = manifest_path.parent
    samples: list[ImageSample] = []
    with open(manifest_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"manifest line {lineno}: invalid JSON ({exc})")
            if "image" not in rec:
                raise ValidationError(f"manifest line {lineno}: missing 'image' field")
            if "polygons" not in rec:
                raise ValidationError(f"manifest line {lineno}: missing 'polygons' field")
            image_path = root / rec["image"]
            if not image_path.is_file():
                raise ValidationError(
                    f"manifest line {lineno} ({rec['image']}): image file not found"
                )
            image = load_image(image_path)
            h, w = image.shape[:2]
            polygons = []
            for poly in rec["polygons"]:
                pts = np.asarray(poly, dtype=np.float64)
                if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
                    raise ValidationError(
                        f"manifest line {lineno} ({rec['image']}): "
                        f"polygon needs >=3 [x, y] points, got {poly!r}"
                    )
                pts[:, 0] = np.clip(pts[:, 0], 0, w - 1)
                pts[:, 1] = np.clip(pts[:, 1], 0, h - 1)
                polygons.append(pts)
            gt_mask = None
            if rec.get("mask"):
                mask_path = root / rec["mask"]
                if not mask_path.is_file():
                    raise ValidationError(
                        f"manifest line {lineno} ({rec['image']}): mask file not found"
                    )
                gt_mask = load_mask(mask_path)
                if gt_mask.shape != image.shape[:2]:
                    raise ValidationError(
                        f"manifest line {lineno} ({rec['image']}): "
                        "mask dimensions do not match image"
                    )
            samples.append(
                ImageSample(
                    image=image,
                    polygons=polygons,
                    gt_mask=gt_mask,
                    sample_id=rec.get("id", rec["image"]),
                )
            )
    return samples


# ---------------------------------------------------------------------------
# Rasterization and cropping


def rasterize_polygons(
    polygons: list[np.ndarray], height: int, width: int
) -> np.ndarray:
    """Even-odd fill of a polygon union, sampling at pixel centers.

    Pixel (r, c) is foreground when a ray from its center (c + 0.5, r + 0.5)
    crosses the edges of any polygon an odd number of times.
    """
    mask = np.zeros((height, width), dtype=np.float32)
    xs = np.arange(width, dtype=np.float64) + 0.5
    for poly in polygons:
        poly = np.asarray(poly, dtype=np.float64)
        inside = np.zeros((height, width), dtype=bool)
        n = len(poly)
        for r in range(height):
            y = r + 0.5
            crossings = np.zeros(width, dtype=np.int64)
            for i in range(n):
                x1, y1 = poly[i]
                x2, y2 = poly[(i + 1) % n]
                if (y1 <= y) != (y2 <= y):
                    x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
                    crossings += xs < x_cross
            inside[r] = (crossings % 2) == 1
        mask[inside] = 1.0
    return mask


def _bbox(poly: np.ndarray) -> tuple[float, float, float, float]:
    return (
        float(poly[:, 0].min()),
        float(poly[:, 1].min()),
        float(poly[:, 0].max()),
        float(poly[:, 1].max()),
    )


def _bbox_iou(a: tuple, b: tuple) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def _merge_groups(polygons: list[np.ndarray], iou_threshold: float) -> list[list[int]]:
    """Group polygon indices whose bounding rectangles overlap heavily."""
    n = len(polygons)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    boxes = [_bbox(p) for p in polygons]
    for i in range(n):
        for j in range(i + 1, n):
            if _bbox_iou(boxes[i], boxes[j]) >= iou_threshold:
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [groups[k] for k in sorted(groups, key=lambda k: min(groups[k]))]


def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of an HW or HWC float array."""
    import cv2

    out = cv2.resize(
        np.ascontiguousarray(image, dtype=np.float32),
        (width, height),
        interpolation=cv2.INTER_LINEAR,
    )
    return out


def crop_regions(
    sample: ImageSample,
    crop_size: tuple[int, int] = DEFAULT_CROP_SIZE,
    pad_fraction: float = CROP_PAD_FRACTION,
    merge_iou: float = MERGE_IOU_THRESHOLD,
) -> list[RegionCrop]:
    """Cut one fixed-size crop per polygon group.

    Each group's axis-aligned bounding rectangle is padded by
    ``pad_fraction`` per side, cropped, and resized (bilinear) to
    ``crop_size``. The group's polygons are rasterized directly at crop
    resolution so the mask stays binary. Groups whose mask rasterizes to
    zero area are skipped with a warning.
    """
    if not sample.polygons:
        raise ValidationError("sample has no polygons to crop")
    hc, wc = crop_size
    h, w = sample.image.shape[:2]
    crops: list[RegionCrop] = []
    skipped = 0
    for gi, group in enumerate(_merge_groups(sample.polygons, merge_iou)):
        polys = [sample.polygons[i] for i in group]
        x0 = min(_bbox(p)[0] for p in polys)
        y0 = min(_bbox(p)[1] for p in polys)
        x1 = max(_bbox(p)[2] for p in polys)
        y1 = max(_bbox(p)[3] for p in polys)
        px = (x1 - x0) * pad_fraction
        py = (y1 - y0) * pad_fraction
        x0 = max(0.0, x0 - px)
        y0 = max(0.0, y0 - py)
        x1 = min(float(w), x1 + px)
        y1 = min(float(h), y1 + py)
        c0, r0 = int(np.floor(x0)), int(np.floor(y0))
        c1, r1 = int(np.ceil(x1)), int(np.ceil(y1))
        c1 = max(c1, c0 + 1)
        r1 = max(r1, r0 + 1)
        window = sample.image[r0:r1, c0:c1]
        sy = hc / (r1 - r0)
        sx = wc / (c1 - c0)
        local_polys = [
            np.stack([(p[:, 0] - c0) * sx, (p[:, 1] - r0) * sy], axis=1) for p in polys
        ]
        mask = rasterize_polygons(local_polys, hc, wc)
        if mask.sum() == 0:
            skipped += 1
            continue
        crop = resize_image(window, hc, wc)
        np.clip(crop, 0.0, 1.0, out=crop)
        gt = None
        if sample.gt_mask is not None:
            gt_window = sample.gt_mask[r0:r1, c0:c1]
            gt = (resize_image(gt_window, hc, wc) > 0.5).astype(np.float32)
        crops.append(
            RegionCrop(
                crop=crop,
                mask=mask,
                source_id=f"{sample.sample_id}#{gi}",
                gt_mask=gt,
                window=(r0, c0, r1, c1),
            )
        )
    if skipped:
        log.warning(
            "crop_regions: skipped %d degenerate polygon group(s) in %s",
            skipped,
            sample.sample_id,
        )
    return crops


def make_region_image(crop: RegionCrop) -> np.ndarray:
    """Zero every pixel outside the region mask."""
    if crop.mask.sum() == 0:
        raise ValidationError("region mask has no foreground pixel")
    return crop.crop * crop.mask[..., None]


def replace_background(fg: RegionCrop, bg: RegionCrop) -> RegionCrop:
    """Composite ``fg`` over ``bg`` through the region mask of ``fg``."""
    if fg.crop.shape != bg.crop.shape:
        raise ValidationError(
            f"crop shape mismatch: {fg.crop.shape} vs {bg.crop.shape}"
        )
    m = fg.mask[..., None]
    composite = fg.crop * m + bg.crop * (1.0 - m)
    return RegionCrop(
        crop=composite, mask=fg.mask, source_id=f"{fg.source_id}+bg:{bg.source_id}"
    )


def make_replacement_pair(
    fg: RegionCrop, bg: RegionCrop, seed: int
) -> ReplacementPair:
    """Build a consistency-training pair.

    The foreground crop is color-augmented (never geometrically, which
    would break the mask correspondence) and composited over the
    background crop through the foreground mask.
    """
    augmented = RegionCrop(
        crop=augment_color(fg.crop, seed), mask=fg.mask, source_id=fg.source_id
    )
    return ReplacementPair(original=fg, replaced=replace_background(augmented, bg))


# ---------------------------------------------------------------------------
# Augmentations


def hflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, ::-1])


def translate(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Shift by (dx, dy) pixels (x right, y down), filling with zeros."""
    h, w = image.shape[:2]
    out = np.zeros_like(image)
    src_y = slice(max(0, -dy), min(h, h - dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_y = slice(max(0, dy), min(h, h + dy))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[dst_y, dst_x] = image[src_y, src_x]
    return out


def zoom_out(image: np.ndarray, scale: float) -> np.ndarray:
    """Shrink to ``scale`` and paste centered on a zero canvas."""
    h, w = image.shape[:2]
    nh = max(1, int(round(h * scale)))
    nw = max(1, int(round(w * scale)))
    small = resize_image(image, nh, nw)
    out = np.zeros_like(image)
    r0 = (h - nh) // 2
    c0 = (w - nw) // 2
    out[r0 : r0 + nh, c0 : c0 + nw] = small.reshape(out[r0 : r0 + nh, c0 : c0 + nw].shape)
    return out


def augment_geometric(image: np.ndarray, seed: int) -> np.ndarray:
    """Apply one of {horizontal flip, translation, zoom-out}, chosen by seed.

    Translation offsets are integers up to 10% of each dimension; zoom-out
    scales lie in [0.8, 1.0]. Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    kind = rng.integers(0, 3)
    if kind == 0:
        return hflip(image)
    if kind == 1:
        h, w = image.shape[:2]
        dx = int(rng.integers(-w // 10, w // 10 + 1))
        dy = int(rng.integers(-h // 10, h // 10 + 1))
        return translate(image, dx, dy)
    scale = float(rng.uniform(0.8, 1.0))
    return zoom_out(image, scale)


def apply_hsv_jitter(
    image: np.ndarray, hue_shift: float, sat_scale: float, val_scale: float
) -> np.ndarray:
    hsv = rgb_to_hsv(np.clip(image, 0.0, 1.0).astype(np.float64))
    hsv[..., 0] = (hsv[..., 0] + hue_shift) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] * sat_scale, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * val_scale, 0.0, 1.0)
    return np.clip(hsv_to_rgb(hsv), 0.0, 1.0).astype(np.float32)


def augment_color(image: np.ndarray, seed: int) -> np.ndarray:
    """HSV jitter: hue shift in [-0.1, 0.1], sat/value scale in [0.7, 1.3]."""
    rng = np.random.default_rng(seed)
    hue_shift = float(rng.uniform(-0.1, 0.1))
    sat_scale = float(rng.uniform(0.7, 1.3))
    val_scale = float(rng.uniform(0.7, 1.3))
    return apply_hsv_jitter(image, hue_shift, sat_scale, val_scale)


def per_sample_seed(global_seed: int, sample_id: str) -> int:
    """Stable per-sample seed so parallel worker order never matters."""
    digest = hashlib.sha256(f"{global_seed}:{sample_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
