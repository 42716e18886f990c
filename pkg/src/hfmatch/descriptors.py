"""Dense per-patch gradient descriptors.

Each patch is described from a context window twice the patch footprint,
centered on the patch (border pixels replicate). Gradients come from
central differences with clamp-to-edge handling. Two descriptor kinds are
provided, both 128-dimensional (4x4 spatial cells x 8 orientation bins):

- ``sift_like``: signed orientations over 360 degrees, Gaussian-weighted
  magnitudes, trilinear (spatial + orientation) soft binning, L2 norm with
  a 0.2 clip and renormalization. Upright and fixed-scale: no dominant
  orientation, no scale search.
- ``hog``: unsigned orientations over 180 degrees, hard binning into the
  cell grid, L2-hys normalization per 2x2-cell block.

Descriptor components always land in [0, 1]; a gradient-free window yields
the zero vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .imagegrid import FaceImage, PatchGrid

__all__ = [
    "CELLS",
    "BINS",
    "DIM",
    "KINDS",
    "DescriptorBank",
    "sift_like",
    "hog",
    "describe_image",
    "save_bank",
    "load_bank",
]

CELLS = 4
BINS = 8
DIM = CELLS * CELLS * BINS
CLIP = 0.2
KINDS = ("sift_like", "hog")


@dataclass(frozen=True)
class DescriptorBank:
    """Per-patch descriptors for one image, one column per grid patch."""

    vectors: np.ndarray  # (DIM, N)
    kind: str
    image_id: str
    modality: str = ""
    subject_id: str = ""

    def __post_init__(self) -> None:
        if self.vectors.ndim != 2 or self.vectors.shape[0] != DIM:
            raise ValueError(f"bank must be {DIM}xN, got {self.vectors.shape}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown descriptor kind {self.kind!r}")


def gradients(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients with clamp-to-edge borders."""
    padded = np.pad(pixels, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    return gx, gy


def _window_indices(grid: PatchGrid, height: int, width: int):
    pad = grid.patch_size // 2
    size = grid.patch_size + 2 * pad
    origins = grid.origins()
    span = np.arange(size)
    wy = np.clip(origins[:, 1, None] - pad + span, 0, height - 1)
    wx = np.clip(origins[:, 0, None] - pad + span, 0, width - 1)
    return wy, wx, size


def _cell_soft_weights(size: int) -> np.ndarray:
    """(CELLS, size) linear cell-assignment weights along one axis."""
    u = (np.arange(size) + 0.5) * CELLS / size - 0.5
    i0 = np.floor(u).astype(int)
    frac = u - i0
    weights = np.zeros((CELLS, size))
    for p in range(size):
        if 0 <= i0[p] < CELLS:
            weights[i0[p], p] += 1.0 - frac[p]
        if 0 <= i0[p] + 1 < CELLS:
            weights[i0[p] + 1, p] += frac[p]
    return weights


def _cell_hard_weights(size: int) -> np.ndarray:
    cells = np.minimum(np.arange(size) * CELLS // size, CELLS - 1)
    return (cells[None, :] == np.arange(CELLS)[:, None]).astype(float)


def _accumulate(row_w, col_w, mag, orient_w) -> np.ndarray:
    # descriptor[n, r, c, o] = sum_{y,x} row_w[r,y] col_w[c,x] mag[n,y,x] w_o[n,y,x,o]
    z = mag[..., None] * orient_w
    out = np.einsum("ry,nyxo->nrxo", row_w, z, optimize=True)
    return np.einsum("cx,nrxo->nrco", col_w, out, optimize=True)


def _sift_vectors(gxw, gyw, size) -> np.ndarray:
    mag = np.hypot(gxw, gyw)
    theta = np.mod(np.arctan2(gyw, gxw), 2.0 * np.pi)
    center = (size - 1) / 2.0
    sigma = size / 2.0
    g1 = np.exp(-((np.arange(size) - center) ** 2) / (2.0 * sigma**2))
    soft = _cell_soft_weights(size)
    row_w = soft * g1
    col_w = soft * g1
    # Circular triangle weights to the two nearest orientation bins.
    c = theta * BINS / (2.0 * np.pi)
    dist = np.abs((c[..., None] - np.arange(BINS) + BINS / 2) % BINS - BINS / 2)
    orient_w = np.clip(1.0 - dist, 0.0, None)
    desc = _accumulate(row_w, col_w, mag, orient_w).reshape(-1, DIM)
    desc = _l2_clip_renorm(desc)
    return desc


def _hog_vectors(gxw, gyw, size) -> np.ndarray:
    mag = np.hypot(gxw, gyw)
    theta = np.mod(np.arctan2(gyw, gxw), np.pi)
    hard = _cell_hard_weights(size)
    bins = np.minimum((theta * BINS / np.pi).astype(int), BINS - 1)
    orient_w = (bins[..., None] == np.arange(BINS)).astype(float)
    desc = _accumulate(hard, hard, mag, orient_w)
    n = desc.shape[0]
    # L2-hys per 2x2-cell block; the four blocks tile the cell grid.
    blocks = desc.reshape(n, 2, 2, 2, 2, BINS).transpose(0, 1, 3, 2, 4, 5)
    blocks = blocks.reshape(n * 4, 2 * 2 * BINS)
    blocks = _l2_clip_renorm(blocks)
    blocks = blocks.reshape(n, 2, 2, 2, 2, BINS).transpose(0, 1, 3, 2, 4, 5)
    return blocks.reshape(n, DIM)


def _l2_clip_renorm(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    out = np.minimum(vectors / safe, CLIP)
    norms2 = np.linalg.norm(out, axis=1, keepdims=True)
    safe2 = np.where(norms2 > 0, norms2, 1.0)
    return out / safe2


_VECTORIZERS = {"sift_like": _sift_vectors, "hog": _hog_vectors}


def describe_image(image: FaceImage, grid: PatchGrid, kind: str) -> DescriptorBank:
    """Descriptor bank for every grid patch of one image."""
    if kind not in _VECTORIZERS:
        raise ValueError(f"unknown descriptor kind {kind!r}")
    if image.width != grid.width or image.height != grid.height:
        raise ValueError(
            f"image is {image.width}x{image.height}, grid expects "
            f"{grid.width}x{grid.height}"
        )
    gx, gy = gradients(image.pixels)
    wy, wx, size = _window_indices(grid, image.height, image.width)
    gxw = gx[wy[:, :, None], wx[:, None, :]]
    gyw = gy[wy[:, :, None], wx[:, None, :]]
    vectors = _VECTORIZERS[kind](gxw, gyw, size)
    return DescriptorBank(
        vectors.T.copy(), kind, image.image_id, image.modality, image.subject_id
    )


def _single(image: FaceImage, grid: PatchGrid, index: int, kind: str) -> np.ndarray:
    if not 0 <= index < grid.n_patches:
        raise ValueError(f"patch index {index} out of range")
    gx, gy = gradients(image.pixels)
    wy, wx, size = _window_indices(grid, image.height, image.width)
    gxw = gx[wy[index][:, None], wx[index][None, :]][None]
    gyw = gy[wy[index][:, None], wx[index][None, :]][None]
    return _VECTORIZERS[kind](gxw, gyw, size)[0]


def sift_like(image: FaceImage, grid: PatchGrid, index: int) -> np.ndarray:
    """128-vector for one patch: Gaussian-weighted soft-binned orientations."""
    return _single(image, grid, index, "sift_like")


def hog(image: FaceImage, grid: PatchGrid, index: int) -> np.ndarray:
    """128-vector for one patch: unsigned hard-binned cell histograms."""
    return _single(image, grid, index, "hog")


def save_bank(path, bank: DescriptorBank) -> None:
    meta = {
        "format": "descriptor_bank",
        "kind": bank.kind,
        "image_id": bank.image_id,
        "modality": bank.modality,
        "subject_id": bank.subject_id,
        "dim": bank.vectors.shape[0],
        "n_patches": bank.vectors.shape[1],
    }
    write_container(path, meta, {"vectors": bank.vectors})


def load_bank(path) -> DescriptorBank:
    meta, arrays = read_container(path)
    if meta.get("format") != "descriptor_bank":
        raise ValueError(f"{path}: not a descriptor bank")
    return DescriptorBank(
        arrays["vectors"],
        meta["kind"],
        meta["image_id"],
        meta.get("modality", ""),
        meta.get("subject_id", ""),
    )
