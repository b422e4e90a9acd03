"""Foreground segmentation and patch-grid extraction for slide images.

A slide (or its thumbnail) is converted to HSV, thresholded on the
saturation channel to separate tissue from white background, and cut into
non-overlapping patches on a grid anchored at the origin. Patches whose
foreground fraction falls below ``keep_threshold`` are dropped, as are
incomplete patches at the right/bottom border.

All functions are pure; tiling many slides in parallel is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_PATCH_SIZE = 256
# No canonical values exist for these; 0.05 saturation and 50% foreground
# are common practice for H&E-style white-background removal and both are
# exposed as CLI flags.
DEFAULT_SAT_THRESHOLD = 0.05
DEFAULT_KEEP_THRESHOLD = 0.5


class EmptySlide(Exception):
    """No patch survived thresholding; the caller decides what to do."""


@dataclass
class SlideImage:
    """8-bit RGB image with an identifier."""

    slide_id: str
    pixels: np.ndarray  # (H, W, 3) uint8

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {self.pixels.dtype}")

    @property
    def height_px(self) -> int:
        return self.pixels.shape[0]

    @property
    def width_px(self) -> int:
        return self.pixels.shape[1]


@dataclass
class TilePatch:
    row: int
    col: int
    x0_px: int
    y0_px: int
    foreground_fraction: float


@dataclass
class TileSet:
    """Kept patches of one slide, sorted row-major on a regular grid."""

    slide_id: str
    patch_size_px: int
    patches: list[TilePatch] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.patches)

    def to_json_dict(self) -> dict:
        return {
            "slide_id": self.slide_id,
            "patch_size_px": self.patch_size_px,
            "patches": [
                {
                    "row": p.row,
                    "col": p.col,
                    "x0_px": p.x0_px,
                    "y0_px": p.y0_px,
                    "foreground_fraction": p.foreground_fraction,
                }
                for p in self.patches
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TileSet":
        return cls(
            slide_id=d["slide_id"],
            patch_size_px=int(d["patch_size_px"]),
            patches=[
                TilePatch(int(p["row"]), int(p["col"]), int(p["x0_px"]),
                          int(p["y0_px"]), float(p["foreground_fraction"]))
                for p in d["patches"]
            ],
        )


def rgb_to_hsv(pixels: np.ndarray) -> np.ndarray:
    """Hexcone RGB -> HSV. Hue in [0, 360); saturation and value in [0, 1].

    Accepts a single (3,) pixel or an (..., 3) array of 8-bit channels.
    """
    rgb = np.asarray(pixels, dtype=np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    cmax = rgb.max(axis=-1)
    cmin = rgb.min(axis=-1)
    delta = cmax - cmin

    h = np.zeros_like(cmax)
    nz = delta > 0
    rmax = nz & (cmax == r)
    gmax = nz & ~rmax & (cmax == g)
    bmax = nz & ~rmax & ~gmax
    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.where(rmax, np.mod((g - b) / np.where(nz, delta, 1.0), 6.0), h)
        h = np.where(gmax, (b - r) / np.where(nz, delta, 1.0) + 2.0, h)
        h = np.where(bmax, (r - g) / np.where(nz, delta, 1.0) + 4.0, h)
    h = np.mod(h * 60.0, 360.0)

    s = np.where(cmax > 0, delta / np.where(cmax > 0, cmax, 1.0), 0.0)
    return np.stack([h, s, cmax], axis=-1)


def foreground_mask(img: SlideImage, sat_threshold: float = DEFAULT_SAT_THRESHOLD) -> np.ndarray:
    """Boolean tissue mask: saturation strictly above the threshold."""
    if not (0.0 < sat_threshold < 1.0):
        raise ValueError(f"sat_threshold must lie in (0, 1), got {sat_threshold}")
    sat = rgb_to_hsv(img.pixels)[..., 1]
    return sat > sat_threshold


def tile(
    img: SlideImage,
    patch_size_px: int = DEFAULT_PATCH_SIZE,
    sat_threshold: float = DEFAULT_SAT_THRESHOLD,
    keep_threshold: float = DEFAULT_KEEP_THRESHOLD,
) -> TileSet:
    """Cut the foreground into non-overlapping patches.

    The grid is anchored at (0, 0) with stride ``patch_size_px``; border
    patches that do not fit entirely inside the image are discarded. A
    patch is kept iff its foreground pixel fraction is >= keep_threshold.

    Raises EmptySlide when nothing survives.
    """
    if patch_size_px < 1:
        raise ValueError("patch_size_px must be >= 1")
    if not (0.0 <= keep_threshold <= 1.0):
        raise ValueError("keep_threshold must lie in [0, 1]")

    mask = foreground_mask(img, sat_threshold)
    n_rows = img.height_px // patch_size_px
    n_cols = img.width_px // patch_size_px

    kept: list[TilePatch] = []
    for row in range(n_rows):
        y0 = row * patch_size_px
        for col in range(n_cols):
            x0 = col * patch_size_px
            frac = float(mask[y0:y0 + patch_size_px, x0:x0 + patch_size_px].mean())
            if frac >= keep_threshold:
                kept.append(TilePatch(row, col, x0, y0, frac))

    if not kept:
        raise EmptySlide(f"slide {img.slide_id!r}: no patch passed the foreground filter")
    return TileSet(slide_id=img.slide_id, patch_size_px=patch_size_px, patches=kept)
