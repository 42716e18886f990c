"""Spatial partition schemes over the patch grid.

Three strategies assign every patch location to a region: grouping whole
grid columns, grouping whole grid rows, and clustering locations by the
descriptors observed there across coupled training pairs. A fixed
rectangular blocking is also provided as a comparison baseline. Regions
feed the per-region discriminant models; the only contract is that they
partition {0, ..., N-1}.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .container import atomic_write_text
from .imagegrid import PatchGrid

__all__ = [
    "PartitionScheme",
    "column_partition",
    "row_partition",
    "learned_partition",
    "rectangle_partition",
    "kmeans",
    "kmeans_pp_init",
    "scheme_labels",
    "save_scheme",
    "load_scheme",
    "save_scheme_image",
]

KMEANS_MAX_ITERS = 300
KMEANS_REL_TOL = 1e-6


@dataclass(frozen=True)
class PartitionScheme:
    """Disjoint regions of patch indices covering the whole grid."""

    kind: str
    regions: tuple
    params: tuple

    def __post_init__(self) -> None:
        if not self.regions:
            raise ValueError("a partition needs at least one region")
        all_idx = np.concatenate([np.asarray(r, dtype=np.int64) for r in self.regions])
        n = all_idx.size
        if n == 0 or not np.array_equal(np.sort(all_idx), np.arange(n)):
            raise ValueError("regions must disjointly cover 0..N-1")
        for r in self.regions:
            if len(r) == 0:
                raise ValueError("regions must be non-empty")

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def n_locations(self) -> int:
        return sum(len(r) for r in self.regions)


def scheme_labels(scheme: PartitionScheme) -> np.ndarray:
    """Region id per patch index, shape (N,)."""
    labels = np.empty(scheme.n_locations, dtype=np.int64)
    for rid, region in enumerate(scheme.regions):
        labels[np.asarray(region, dtype=np.int64)] = rid
    return labels


def _group_runs(count: int, per_region: int) -> list[np.ndarray]:
    """[0..per_region), [per_region..2*per_region), ...; remainder last."""
    return [
        np.arange(start, min(start + per_region, count), dtype=np.int64)
        for start in range(0, count, per_region)
    ]


def column_partition(grid: PatchGrid, k_c: int) -> PartitionScheme:
    """Group runs of k_c whole grid columns; the last region keeps the rest."""
    if not 1 <= k_c <= grid.cols:
        raise ValueError(f"K_c must be in 1..{grid.cols}, got {k_c}")
    col_of = np.arange(grid.n_patches, dtype=np.int64) % grid.cols
    regions = tuple(
        np.nonzero(np.isin(col_of, run))[0].astype(np.int64)
        for run in _group_runs(grid.cols, k_c)
    )
    return PartitionScheme(kind="column", regions=regions, params=(k_c,))


def row_partition(grid: PatchGrid, k_r: int) -> PartitionScheme:
    """Group runs of k_r whole grid rows; the last region keeps the rest."""
    if not 1 <= k_r <= grid.rows:
        raise ValueError(f"K_r must be in 1..{grid.rows}, got {k_r}")
    row_of = np.arange(grid.n_patches, dtype=np.int64) // grid.cols
    regions = tuple(
        np.nonzero(np.isin(row_of, run))[0].astype(np.int64)
        for run in _group_runs(grid.rows, k_r)
    )
    return PartitionScheme(kind="row", regions=regions, params=(k_r,))


def rectangle_partition(
    grid: PatchGrid, block_rows: int = 7, block_cols: int = 5
) -> PartitionScheme:
    """Fixed blocking baseline: block_rows x block_cols balanced rectangles."""
    if not 1 <= block_rows <= grid.rows or not 1 <= block_cols <= grid.cols:
        raise ValueError(
            f"blocking {block_rows}x{block_cols} does not fit a "
            f"{grid.rows}x{grid.cols} grid"
        )
    row_bands = np.array_split(np.arange(grid.rows), block_rows)
    col_bands = np.array_split(np.arange(grid.cols), block_cols)
    col_of = np.arange(grid.n_patches, dtype=np.int64) % grid.cols
    row_of = np.arange(grid.n_patches, dtype=np.int64) // grid.cols
    regions = []
    for rb in row_bands:
        for cb in col_bands:
            mask = np.isin(row_of, rb) & np.isin(col_of, cb)
            regions.append(np.nonzero(mask)[0].astype(np.int64))
    return PartitionScheme(
        kind="rectangle", regions=tuple(regions), params=(block_rows, block_cols)
    )


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: D^2-weighted draws from the data points."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[int(rng.integers(n))]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            draw = rng.random() * total
            idx = min(int(np.searchsorted(np.cumsum(d2), draw)), n - 1)
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def kmeans(
    x: np.ndarray,
    k: int,
    seed: int = 0,
    max_iters: int = KMEANS_MAX_ITERS,
    rel_tol: float = KMEANS_REL_TOL,
    init: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding.

    Returns (labels, centers, inertia_trace); the trace holds the inertia
    after every update step and is non-increasing. Clusters that empty out
    are repaired by moving the farthest point of the largest-inertia
    cluster into them, so exactly k non-empty clusters come back.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in 1..{n}, got {k}")
    if init is None:
        centers = kmeans_pp_init(x, k, np.random.default_rng(seed))
    else:
        if init.shape != (k, x.shape[1]):
            raise ValueError(f"init shape {init.shape}, expected {(k, x.shape[1])}")
        centers = init.astype(float).copy()
    prev = np.inf
    trace = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        for j in range(k):
            if np.any(labels == j):
                continue
            per_cluster = np.array(
                [
                    d2[labels == c, c].sum() if np.any(labels == c) else 0.0
                    for c in range(k)
                ]
            )
            donor = int(np.argmax(per_cluster))
            members = np.nonzero(labels == donor)[0]
            idx = members[int(np.argmax(d2[members, donor]))]
            labels[idx] = j
            centers[j] = x[idx]
            d2[:, j] = np.sum((x - centers[j]) ** 2, axis=1)
        for j in range(k):
            centers[j] = x[labels == j].mean(axis=0)
        inertia = float(
            np.sum((x - centers[labels]) ** 2)
        )
        trace.append(inertia)
        if prev - inertia <= rel_tol * max(prev, 1e-300):
            break
        prev = inertia
    return labels, centers, np.array(trace)


def learned_partition(banks, k_l: int, seed: int = 0) -> PartitionScheme:
    """Cluster patch locations by their stacked per-location descriptors.

    banks is the sequence of descriptor banks of the coupled training
    pairs, both modalities included; location i is represented by the
    concatenation of every bank's column i. Identical vectors everywhere
    degenerate to a single region (with a warning) instead of k_l.
    """
    mats = [bank.vectors for bank in banks]
    if not mats:
        raise ValueError("learned partition needs at least one descriptor bank")
    n = mats[0].shape[1]
    if any(m.shape[1] != n for m in mats):
        raise ValueError("descriptor banks disagree on patch count")
    if not 1 <= k_l <= n:
        raise ValueError(f"K_l must be in 1..{n}, got {k_l}")
    x = np.concatenate(mats, axis=0).T
    if np.all(x == x[0]):
        warnings.warn(
            "all per-location vectors are identical; returning a single region",
            stacklevel=2,
        )
        return PartitionScheme(
            kind="learned",
            regions=(np.arange(n, dtype=np.int64),),
            params=(k_l,),
        )
    labels, _, _ = kmeans(x, k_l, seed=seed)
    regions = tuple(
        np.nonzero(labels == j)[0].astype(np.int64) for j in range(k_l)
    )
    return PartitionScheme(kind="learned", regions=regions, params=(k_l,))


def save_scheme(path, scheme: PartitionScheme) -> None:
    """Three-line text format: kind, params, region id per patch index."""
    labels = scheme_labels(scheme)
    text = (
        f"kind={scheme.kind}\n"
        f"params={' '.join(str(p) for p in scheme.params)}\n"
        f"assign={' '.join(str(v) for v in labels)}\n"
    )
    atomic_write_text(path, text)


def load_scheme(path) -> PartitionScheme:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    pairs = [line.split("=", 1) for line in lines if line]
    if any(len(p) != 2 for p in pairs) or {p[0] for p in pairs} != {
        "kind",
        "params",
        "assign",
    }:
        raise ValueError(f"{path}: not a partition scheme file")
    fields = dict(pairs)
    labels = np.array([int(v) for v in fields["assign"].split()], dtype=np.int64)
    n_regions = int(labels.max()) + 1
    regions = tuple(
        np.nonzero(labels == j)[0].astype(np.int64) for j in range(n_regions)
    )
    params = tuple(int(v) for v in fields["params"].split())
    return PartitionScheme(kind=fields["kind"], regions=regions, params=params)


_PALETTE = np.array(
    [
        (31, 119, 180),
        (255, 127, 14),
        (44, 160, 44),
        (214, 39, 40),
        (148, 103, 189),
        (140, 86, 75),
        (227, 119, 194),
        (127, 127, 127),
        (188, 189, 34),
        (23, 190, 207),
        (174, 199, 232),
        (255, 187, 120),
    ],
    dtype=np.uint8,
)


def save_scheme_image(path, scheme: PartitionScheme, grid: PatchGrid, scale: int = 8):
    """Color-grid PNG of the region layout, one cell per patch location."""
    from PIL import Image

    labels = scheme_labels(scheme).reshape(grid.rows, grid.cols)
    rgb = _PALETTE[labels % len(_PALETTE)]
    big = np.kron(rgb, np.ones((scale, scale, 1), dtype=np.uint8))
    Image.fromarray(big, mode="RGB").save(path, format="PNG")
