"""Patch-grid geometry over fixed-size grayscale face crops.

Images are small grayscale crops with pixel values scaled to [0, 1].
A grid places square patches at a fixed stride, indexed row-major from
the top-left corner; patch origins are top-left pixel coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "FaceImage",
    "PatchGrid",
    "PatchAdjacency",
    "load_image",
    "write_pgm",
    "build_grid",
    "extract_patch",
    "overlap_region",
    "adjacency",
]

# ITU-R BT.601 luminance weights for color inputs.
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class FaceImage:
    """A grayscale crop plus the identifiers the pipeline carries around."""

    pixels: np.ndarray
    image_id: str
    modality: str
    subject_id: str = ""

    def __post_init__(self) -> None:
        px = self.pixels
        if not isinstance(px, np.ndarray) or px.ndim != 2:
            raise ValueError("pixels must be a 2-d array")
        if px.size and (float(px.min()) < 0.0 or float(px.max()) > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class PatchGrid:
    """Row-major lattice of square patches over a width x height crop."""

    width: int
    height: int
    patch_size: int
    step: int
    cols: int
    rows: int

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols

    def origin(self, index: int) -> tuple[int, int]:
        """Top-left (x, y) pixel coordinate of patch `index`."""
        if not 0 <= index < self.n_patches:
            raise ValueError(f"patch index {index} out of range [0, {self.n_patches})")
        row, col = divmod(index, self.cols)
        return col * self.step, row * self.step

    def origins(self) -> np.ndarray:
        """All patch origins as an (N, 2) int array of (x, y) rows."""
        cols = np.arange(self.n_patches) % self.cols
        rows = np.arange(self.n_patches) // self.cols
        return np.stack([cols * self.step, rows * self.step], axis=1)


@dataclass(frozen=True)
class PatchAdjacency:
    """4-neighborhood edges between grid patches, each row (i, j) with i < j."""

    edges: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.edges)


def build_grid(width: int, height: int, patch_size: int, overlap_ratio: float) -> PatchGrid:
    """Lay out the patch lattice for a crop.

    The stride is patch_size * (1 - overlap_ratio) and must come out to a
    positive whole number of pixels; fractional strides are rejected rather
    than silently rounded.
    """
    if patch_size < 1:
        raise ValueError(f"patch_size must be >= 1, got {patch_size}")
    if patch_size > width or patch_size > height:
        raise ValueError(
            f"patch_size {patch_size} exceeds crop dimensions {width}x{height}"
        )
    if not 0.0 <= overlap_ratio < 1.0:
        raise ValueError(f"overlap_ratio must lie in [0, 1), got {overlap_ratio}")
    step_f = patch_size * (1.0 - overlap_ratio)
    step = int(round(step_f))
    if step < 1 or abs(step - step_f) > 1e-9:
        raise ValueError(
            f"overlap_ratio {overlap_ratio} gives a non-integer stride {step_f}"
        )
    cols = (width - patch_size) // step + 1
    rows = (height - patch_size) // step + 1
    return PatchGrid(width, height, patch_size, step, cols, rows)


def extract_patch(image: FaceImage, grid: PatchGrid, index: int) -> np.ndarray:
    """Pixel block of one patch; a copy, so callers may write to it."""
    if image.width != grid.width or image.height != grid.height:
        raise ValueError(
            f"image is {image.width}x{image.height}, grid expects "
            f"{grid.width}x{grid.height}"
        )
    x, y = grid.origin(index)
    p = grid.patch_size
    return image.pixels[y : y + p, x : x + p].copy()


def overlap_region(grid: PatchGrid, i: int, j: int) -> np.ndarray:
    """Pixel coordinates shared by patches i and j.

    Returns an (K, 2) int array of (x, y) pairs covering the intersection
    rectangle in row-major pixel order (y outer, x inner). The order and
    content are symmetric in (i, j). Raises ValueError when the patches do
    not overlap.
    """
    xi, yi = grid.origin(i)
    xj, yj = grid.origin(j)
    p = grid.patch_size
    x0, x1 = max(xi, xj), min(xi, xj) + p
    y0, y1 = max(yi, yj), min(yi, yj) + p
    if x0 >= x1 or y0 >= y1:
        raise ValueError(f"patches {i} and {j} do not overlap")
    xs = np.arange(x0, x1)
    ys = np.arange(y0, y1)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def adjacency(grid: PatchGrid) -> PatchAdjacency:
    """4-neighborhood edge list: horizontal then vertical neighbors, i < j."""
    idx = np.arange(grid.n_patches).reshape(grid.rows, grid.cols)
    horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    edges = np.concatenate([horiz, vert], axis=0)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    return PatchAdjacency(edges)


def load_image(
    path: str | Path,
    image_id: str | None = None,
    modality: str = "",
    subject_id: str = "",
) -> FaceImage:
    """Read a PGM (P2 or P5) or PNG image into a normalized FaceImage.

    8-bit samples are scaled by 1/255, 16-bit by 1/65535. Color PNG input
    is reduced to luminance with BT.601 weights.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        pixels = _read_pgm(path.read_bytes(), str(path))
    elif suffix == ".png":
        pixels = _read_png(path)
    else:
        raise ValueError(f"unsupported image format {suffix!r} for {path}")
    return FaceImage(
        pixels=pixels,
        image_id=image_id if image_id is not None else path.stem,
        modality=modality,
        subject_id=subject_id,
    )


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    """Write [0, 1] floats as a binary 8-bit PGM (deterministic bytes)."""
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim != 2:
        raise ValueError("pixels must be a 2-d array")
    if px.size and (px.min() < 0.0 or px.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    raster = np.rint(px * 255.0).astype(np.uint8)
    header = f"P5\n{px.shape[1]} {px.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + raster.tobytes())


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as img:
            img.load()
            arr = np.asarray(img)
            mode = img.mode
    except Exception as exc:
        raise ValueError(f"cannot decode PNG {path}: {exc}") from exc
    if mode == "P":
        # Palette images: expand through Pillow, then fall through.
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"))
            mode = "RGB"
    if arr.ndim == 3:
        arr = arr[..., :3] @ _LUMA
        return arr / 255.0
    if arr.dtype == np.uint8:
        return arr / 255.0
    if arr.dtype in (np.uint16, np.int32):
        return arr / 65535.0
    raise ValueError(f"unsupported PNG sample type {arr.dtype} in {path}")


def _read_pgm(data: bytes, name: str) -> np.ndarray:
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data):
            c = data[pos : pos + 1]
            if c == b"#":
                while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"truncated PGM header in {name}")
        return data[start:pos]

    magic = token()
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"not a PGM file: {name} (magic {magic!r})")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise ValueError(f"malformed PGM header in {name}") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ValueError(f"malformed PGM header in {name}")
    if magic == b"P2":
        try:
            raster = np.array(data[pos:].split(), dtype=np.int64)
        except ValueError as exc:
            raise ValueError(f"malformed PGM raster in {name}") from exc
    else:
        pos += 1  # single whitespace byte separates header and raster
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        if len(data) - pos < width * height * dtype.itemsize:
            raise ValueError(f"truncated PGM raster in {name}")
        raster = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
        raster = raster.astype(np.int64)
    if raster.size != width * height:
        raise ValueError(
            f"PGM raster size {raster.size} does not match "
            f"{width}x{height} in {name}"
        )
    if raster.min() < 0 or raster.max() > maxval:
        raise ValueError(f"PGM sample out of range in {name}")
    return raster.reshape(height, width) / float(maxval)
