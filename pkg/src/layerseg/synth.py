"""Deterministic synthetic text corpus for desk-scale verification.

Each generated image carries 1-3 words rendered from a built-in 5x7
bitmap font over a solid, gradient, or smooth-noise background, with a
quad polygon per word and an exact pixel mask. Everything is a pure
function of the seed.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

FONT_5X7 = {
    "A": [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    "B": ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."],
    "C": [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."],
    "D": ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."],
    "E": ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
    "F": ["#####", "#....", "#....", "####.", "#....", "#....", "#...."],
    "H": ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    "K": ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"],
    "L": ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
    "N": ["#...#", "##..#", "##..#", "#.#.#", "#..##", "#..##", "#...#"],
    "O": [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    "P": ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
    "S": [".####", "#....", "#....", ".###.", "....#", "....#", "####."],
    "T": ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
    "U": ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    "X": ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"],
    "Z": ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"],
}

GLYPH_H, GLYPH_W = 7, 5
DEFAULT_IMAGE_SIZE = (192, 256)  # (height, width)
CROP_FG_RANGE = (0.02, 0.6)  # allowed foreground fraction inside a word box


def render_word(word: str, scale: int) -> np.ndarray:
    """Render a word to a binary bitmap, one glyph column of spacing."""
    cols = len(word) * (GLYPH_W + 1) - 1
    bitmap = np.zeros((GLYPH_H, cols), dtype=np.uint8)
    for i, ch in enumerate(word):
        rows = FONT_5X7[ch]
        c0 = i * (GLYPH_W + 1)
        for r, row in enumerate(rows):
            for c, cell in enumerate(row):
                if cell == "#":
                    bitmap[r, c0 + c] = 1
    return np.kron(bitmap, np.ones((scale, scale), dtype=np.uint8))


def rotate_bitmap(bitmap: np.ndarray, angle_deg: float) -> tuple[np.ndarray, np.ndarray]:
    """Rotate a binary bitmap about its center, expanding the canvas.

    Returns the rotated bitmap and the rotated corner coordinates of the
    original bounding rectangle (in rotated-canvas pixel coordinates).
    """
    h, w = bitmap.shape
    theta = math.radians(angle_deg)
    cos, sin = abs(math.cos(theta)), abs(math.sin(theta))
    nw = int(math.ceil(w * cos + h * sin))
    nh = int(math.ceil(w * sin + h * cos))
    m = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle_deg, 1.0)
    m[0, 2] += (nw - w) / 2.0
    m[1, 2] += (nh - h) / 2.0
    rotated = cv2.warpAffine(
        bitmap, m, (nw, nh), flags=cv2.INTER_NEAREST, borderValue=0
    )
    corners = np.array(
        [[0, 0, 1], [w, 0, 1], [w, h, 1], [0, h, 1]], dtype=np.float64
    )
    rotated_corners = corners @ m.T
    return rotated, rotated_corners


def _make_background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    kind = rng.integers(0, 3)
    if kind == 0:  # solid
        color = rng.uniform(0.0, 1.0, size=3)
        return np.broadcast_to(color, (h, w, 3)).astype(np.float32).copy()
    if kind == 1:  # linear gradient
        c0 = rng.uniform(0.0, 1.0, size=3)
        c1 = rng.uniform(0.0, 1.0, size=3)
        if rng.integers(0, 2) == 0:
            t = np.linspace(0.0, 1.0, w)[None, :, None]
        else:
            t = np.linspace(0.0, 1.0, h)[:, None, None]
        grad = c0 * (1 - t) + c1 * t
        return np.broadcast_to(grad, (h, w, 3)).astype(np.float32).copy()
    # smooth noise: low-resolution noise upsampled
    base_color = rng.uniform(0.1, 0.9, size=3)
    coarse = rng.uniform(-0.15, 0.15, size=(8, 8, 3))
    noise = cv2.resize(coarse.astype(np.float32), (w, h), interpolation=cv2.INTER_LINEAR)
    return np.clip(base_color + noise, 0.0, 1.0).astype(np.float32)


def _pick_text_color(rng: np.random.Generator, bg_patch: np.ndarray) -> np.ndarray:
    """Sample a color contrasting with the local background mean."""
    bg_mean = bg_patch.reshape(-1, 3).mean(axis=0)
    for _ in range(50):
        color = rng.uniform(0.0, 1.0, size=3)
        if np.abs(color - bg_mean).mean() >= 0.3:
            return color.astype(np.float32)
    return np.where(bg_mean > 0.5, 0.0, 1.0).astype(np.float32)


def _boxes_overlap(a: tuple, b: tuple) -> bool:
    return not (a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1])


def _sample_word(
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Sample word text/scale/rotation until the box fill fraction fits."""
    letters = sorted(FONT_5X7)
    lo, hi = CROP_FG_RANGE
    while True:
        length = int(rng.integers(2, 6))
        word = "".join(rng.choice(letters, size=length))
        scale = int(rng.integers(3, 7))
        angle = float(rng.uniform(-15.0, 15.0))
        bitmap = render_word(word, scale)
        rotated, corners = rotate_bitmap(bitmap, angle)
        fill = rotated.sum() / rotated.size
        if lo <= fill <= hi:
            return rotated, corners, fill


def synth_generate(
    n: int,
    seed: int,
    out_dir: str | Path,
    image_size: tuple[int, int] = DEFAULT_IMAGE_SIZE,
) -> Path:
    """Write ``n`` synthetic images, masks and a manifest; return its path."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h, w = image_size
    rng = np.random.default_rng(seed)
    records = []
    for idx in range(n):
        image = _make_background(rng, h, w)
        gt_mask = np.zeros((h, w), dtype=np.uint8)
        polygons: list[list[list[float]]] = []
        placed_boxes: list[tuple] = []
        n_words = int(rng.integers(1, 4))
        for _ in range(n_words):
            rotated, corners, _ = _sample_word(rng)
            wh, ww = rotated.shape
            if wh >= h or ww >= w:
                continue
            placement = None
            for _ in range(25):
                r0 = int(rng.integers(0, h - wh))
                c0 = int(rng.integers(0, w - ww))
                box = (c0, r0, c0 + ww, r0 + wh)
                if not any(_boxes_overlap(box, b) for b in placed_boxes):
                    placement = (r0, c0)
                    break
            if placement is None:
                continue
            r0, c0 = placement
            placed_boxes.append((c0, r0, c0 + ww, r0 + wh))
            color = _pick_text_color(rng, image[r0 : r0 + wh, c0 : c0 + ww])
            on = rotated.astype(bool)
            region = image[r0 : r0 + wh, c0 : c0 + ww]
            region[on] = color
            gt_mask[r0 : r0 + wh, c0 : c0 + ww][on] = 1
            # polygon: rotated word rectangle, pushed 1.5px outward so the
            # rasterized quad strictly contains every glyph pixel
            center = corners.mean(axis=0)
            quad = []
            for cx, cy in corners:
                v = np.array([cx, cy]) - center
                norm = np.linalg.norm(v)
                p = center + v * (1.0 + 1.5 / max(norm, 1e-9))
                quad.append([float(p[0] + c0), float(p[1] + r0)])
            polygons.append(quad)
        if not polygons:
            # degenerate layout (all placements failed): stamp one word
            while True:
                rotated, corners, _ = _sample_word(rng)
                wh, ww = rotated.shape
                if wh < h and ww < w:
                    break
            r0, c0 = (h - wh) // 2, (w - ww) // 2
            color = _pick_text_color(rng, image[r0 : r0 + wh, c0 : c0 + ww])
            on = rotated.astype(bool)
            image[r0 : r0 + wh, c0 : c0 + ww][on] = color
            gt_mask[r0 : r0 + wh, c0 : c0 + ww][on] = 1
            quad = [
                [float(cx + c0), float(cy + r0)]
                for cx, cy in (corners - corners.mean(0)) * 1.05 + corners.mean(0)
            ]
            polygons.append(quad)
        image_name = f"synth_{idx:04d}.png"
        mask_name = f"synth_{idx:04d}_mask.png"
        Image.fromarray(
            np.clip(image * 255.0 + 0.5, 0, 255).astype(np.uint8)
        ).save(out_dir / image_name)
        Image.fromarray(gt_mask * 255).save(out_dir / mask_name)
        records.append(
            {
                "id": f"synth_{idx:04d}",
                "image": image_name,
                "mask": mask_name,
                "polygons": polygons,
            }
        )
    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return manifest_path
