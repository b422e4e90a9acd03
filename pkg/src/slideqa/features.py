"""Frozen patch descriptors and the binary embedding-bag format.

The built-in extractor is a stand-in for a pretrained backbone: each patch
is summarized by a 30-value color descriptor (per-channel mean, per-channel
std, 8-bin per-channel histogram) and projected to the target width with a
Gaussian matrix drawn once from the seed. Nothing here is trainable, and
nothing here participates in gradient computation.

Bags round-trip through a little-endian binary file:

    magic 'W2TB' | version u32 | M u32 | l u32
    | slide_id length u16 + UTF-8 bytes
    | M*l float32 row-major | M pairs of u32 (row, col)
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .tiling import SlideImage, TileSet

MAGIC = b"W2TB"
FORMAT_VERSION = 1
DESCRIPTOR_WIDTH = 30  # 3 means + 3 stds + 3 * 8 histogram bins


class EmptyBag(Exception):
    pass


class FormatError(Exception):
    pass


class NonFiniteValue(Exception):
    pass


@dataclass
class EmbeddingBag:
    """All patch embeddings of one slide, rows aligned with the tile order."""

    slide_id: str
    embeddings: np.ndarray  # (M, l) float32
    coords: list[tuple[int, int]]  # (row, col) per patch
    extractor_tag: str = ""

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float32)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] == 0:
            raise EmptyBag(f"bag needs an (M>=1, l) matrix, got {self.embeddings.shape}")
        if len(self.coords) != self.embeddings.shape[0]:
            raise FormatError("one coordinate pair per embedding row required")
        if not np.all(np.isfinite(self.embeddings)):
            raise NonFiniteValue("bag contains NaN/Inf embeddings")

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


def patch_descriptor(patch: np.ndarray) -> np.ndarray:
    """30-value color summary of one uint8 RGB patch, channels on [0, 1]."""
    x = np.asarray(patch, dtype=np.float64) / 255.0
    means = x.mean(axis=(0, 1))
    stds = x.std(axis=(0, 1))
    hists = []
    for c in range(3):
        counts, _ = np.histogram(x[..., c], bins=8, range=(0.0, 1.0))
        hists.append(counts / x[..., c].size)
    return np.concatenate([means, stds, *hists])


def projection_matrix(dim: int, seed: int) -> np.ndarray:
    """The fixed Gaussian projection shared by every patch and slide."""
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((DESCRIPTOR_WIDTH, dim)) / np.sqrt(DESCRIPTOR_WIDTH)).astype(np.float64)


def extract_builtin(img: SlideImage, tiles: TileSet, dim: int = 512, seed: int = 17) -> EmbeddingBag:
    """Embed every kept patch of ``tiles``; output depends only on (pixels, dim, seed)."""
    if dim < 1:
        raise ValueError("embedding width must be >= 1")
    if len(tiles.patches) == 0:
        raise EmptyBag(f"slide {img.slide_id!r} has no patches to embed")
    proj = projection_matrix(dim, seed)
    ps = tiles.patch_size_px
    rows = np.empty((len(tiles.patches), dim), dtype=np.float32)
    coords = []
    for i, p in enumerate(tiles.patches):
        patch = img.pixels[p.y0_px:p.y0_px + ps, p.x0_px:p.x0_px + ps]
        rows[i] = (patch_descriptor(patch) @ proj).astype(np.float32)
        coords.append((p.row, p.col))
    return EmbeddingBag(
        slide_id=tiles.slide_id,
        embeddings=rows,
        coords=coords,
        extractor_tag=f"builtin-color30-d{dim}-s{seed}",
    )


def export_bag(bag: EmbeddingBag, path: str) -> None:
    """Write the bag atomically (temp file in the same directory, then rename)."""
    sid = bag.slide_id.encode("utf-8")
    if len(sid) > 0xFFFF:
        raise FormatError("slide_id longer than the u16 length field allows")
    m, l = bag.embeddings.shape
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<III", FORMAT_VERSION, m, l)
    payload += struct.pack("<H", len(sid)) + sid
    payload += np.ascontiguousarray(bag.embeddings, dtype="<f4").tobytes()
    payload += np.asarray(bag.coords, dtype="<u4").tobytes()

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_bag_dir(directory: str) -> dict[str, EmbeddingBag]:
    """Load every *.w2tb in a directory, keyed by the stored slide_id."""
    bags: dict[str, EmbeddingBag] = {}
    for name in sorted(os.listdir(directory)):
        if name.endswith(".w2tb"):
            bag = import_bag(os.path.join(directory, name))
            bags[bag.slide_id] = bag
    return bags


def import_bag(path: str) -> EmbeddingBag:
    """Read a bag written by ``export_bag``; the round trip is bitwise exact."""
    with open(path, "rb") as f:
        blob = f.read()

    def need(n, what):
        if len(blob) < n:
            raise FormatError(f"truncated bag file: missing {what}")

    need(4, "magic")
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}")
    need(16, "header")
    version, m, l = struct.unpack_from("<III", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported bag version {version}")
    (sid_len,) = struct.unpack_from("<H", blob, 16)
    need(18 + sid_len, "slide id")
    slide_id = blob[18:18 + sid_len].decode("utf-8")

    at = 18 + sid_len
    mat_bytes = m * l * 4
    coord_bytes = m * 2 * 4
    if len(blob) != at + mat_bytes + coord_bytes:
        raise FormatError(
            f"declared {m}x{l} bag does not match payload of {len(blob) - at} bytes")
    emb = np.frombuffer(blob, dtype="<f4", count=m * l, offset=at).reshape(m, l)
    coords_arr = np.frombuffer(blob, dtype="<u4", count=m * 2, offset=at + mat_bytes).reshape(m, 2)
    if not np.all(np.isfinite(emb)):
        raise NonFiniteValue(f"bag {path!r} contains non-finite values")
    return EmbeddingBag(
        slide_id=slide_id,
        embeddings=emb.copy(),
        coords=[(int(r), int(c)) for r, c in coords_arr],
        extractor_tag="imported",
    )
