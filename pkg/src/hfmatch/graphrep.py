"""Adaptive sparse patch codes against a coupled representation set.

Every probe patch is expressed as a convex combination of "related"
patches: for each representation image, the grid patch nearest in
descriptor space among those whose origins fall inside a search window
around the probe patch origin. The combination weights minimize a
reconstruction energy with a smoothness term that asks neighboring
patches to agree on their overlap pixels; the weights are the sparse
code used for matching.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .container import read_container, write_container
from .descriptors import DIM, KINDS, DescriptorBank, describe_image
from .imagegrid import FaceImage, PatchGrid, adjacency, overlap_region
from .qpsolver import EnergyProblem, SolverConfig, SolverResult, solve_block_coordinate

__all__ = [
    "RepresentationDataset",
    "RelatedPatchSet",
    "SparseFaceCode",
    "EncodeConfig",
    "EncodingError",
    "EnergyProblem",
    "candidate_indices",
    "find_related",
    "extract_overlaps",
    "assemble_energy",
    "encode",
    "save_code",
    "load_code",
]


class EncodingError(RuntimeError):
    """Raised when the weight solve does not converge for an image."""

    def __init__(self, image_id: str, result: SolverResult):
        super().__init__(
            f"solver did not converge for {image_id!r}: "
            f"kkt_residual={result.kkt_residual:.3e} after {result.sweeps} sweeps"
        )
        self.image_id = image_id
        self.result = result


class RepresentationDataset:
    """Coupled representation pairs: one image per modality per pair.

    The m-th image of every modality belongs to the same pair, so a weight
    on column m means "pair m" regardless of which modality was encoded.
    Descriptor banks are computed on demand and cached per (modality, kind).
    """

    def __init__(self, images: dict[str, list[FaceImage]], grid: PatchGrid):
        if not images:
            raise ValueError("representation dataset needs at least one modality")
        sizes = {mod: len(imgs) for mod, imgs in images.items()}
        if len(set(sizes.values())) != 1 or next(iter(sizes.values())) < 1:
            raise ValueError(f"modalities must hold equally many images, got {sizes}")
        for mod, imgs in images.items():
            for img in imgs:
                if img.width != grid.width or img.height != grid.height:
                    raise ValueError(
                        f"representation image {img.image_id!r} is "
                        f"{img.width}x{img.height}, grid expects "
                        f"{grid.width}x{grid.height}"
                    )
        mods = list(images)
        first = images[mods[0]]
        for mod in mods[1:]:
            for a, b in zip(first, images[mod]):
                if a.subject_id and b.subject_id and a.subject_id != b.subject_id:
                    raise ValueError(
                        f"pair misalignment: {a.image_id!r} is subject "
                        f"{a.subject_id!r} but {b.image_id!r} is {b.subject_id!r}"
                    )
        self.images = {mod: list(imgs) for mod, imgs in images.items()}
        self.grid = grid
        self._pixels: dict[str, np.ndarray] = {}
        self._banks: dict[tuple[str, str], np.ndarray] = {}

    @property
    def size(self) -> int:
        return len(next(iter(self.images.values())))

    @property
    def modalities(self) -> list[str]:
        return list(self.images)

    def pixels(self, modality: str) -> np.ndarray:
        """(M, H, W) stacked pixel array for one modality."""
        if modality not in self.images:
            raise ValueError(f"unknown modality {modality!r}")
        if modality not in self._pixels:
            self._pixels[modality] = np.stack(
                [img.pixels for img in self.images[modality]]
            )
        return self._pixels[modality]

    def bank_matrix(self, modality: str, kind: str) -> np.ndarray:
        """(M, DIM, N) stacked descriptor banks for one modality."""
        key = (modality, kind)
        if key not in self._banks:
            banks = [
                describe_image(img, self.grid, kind).vectors
                for img in self.images[modality]
            ]
            self._banks[key] = np.stack(banks)
        return self._banks[key]

    def set_bank_matrix(self, modality: str, kind: str, banks: np.ndarray) -> None:
        """Install precomputed banks (e.g. from a cache)."""
        expect = (self.size, DIM, self.grid.n_patches)
        if banks.shape != expect:
            raise ValueError(f"bank matrix shape {banks.shape}, expected {expect}")
        self._banks[(modality, kind)] = banks


@dataclass(frozen=True)
class RelatedPatchSet:
    """Per (patch location, representation pair): the chosen related patch.

    descriptors[i] is the DIM x M matrix whose columns describe the related
    patches of location i; overlaps[(i, j)] holds, for each pair m, the
    intensity values of location i's m-th related patch restricted to the
    overlap region between grid locations i and j, in the region's
    row-major pixel order.
    """

    indices: np.ndarray  # (N, M) grid index of the related patch
    distances: np.ndarray  # (N, M) descriptor distance to the probe patch
    descriptors: np.ndarray  # (N, DIM, M)
    origins: np.ndarray  # (N, M, 2) related patch origins (x, y)
    overlaps: dict[tuple[int, int], np.ndarray]  # ordered (i, j) -> (|overlap|, M)
    kind: str
    modality: str

    @property
    def n_locations(self) -> int:
        return self.indices.shape[0]

    @property
    def size(self) -> int:
        return self.indices.shape[1]

    def restrict(self, selected: np.ndarray) -> "RelatedPatchSet":
        """Keep only the columns in selected[i] (sorted) for every location i."""
        rows = np.arange(self.indices.shape[0])[:, None]
        overlaps = {
            key: val[:, selected[key[0]]] for key, val in self.overlaps.items()
        }
        return replace(
            self,
            indices=self.indices[rows, selected],
            distances=self.distances[rows, selected],
            descriptors=np.take_along_axis(
                self.descriptors, selected[:, None, :], axis=2
            ),
            origins=self.origins[rows, selected],
            overlaps=overlaps,
        )


@dataclass(frozen=True)
class SparseFaceCode:
    """Weight matrix over representation pairs, one row per patch location."""

    weights: np.ndarray  # (N, M)
    image_id: str
    subject_id: str
    modality: str
    kind: str
    mode: str

    def __post_init__(self) -> None:
        w = self.weights
        if w.ndim != 2:
            raise ValueError("weights must be 2-d")
        if w.size:
            sums = w.sum(axis=1)
            if np.abs(sums - 1.0).max() > 1e-9:
                raise ValueError("every weight row must sum to 1")
            if w.min() < -1e-12 or w.max() > 1.0 + 1e-12:
                raise ValueError("weights must lie in [0, 1]")


@dataclass(frozen=True)
class EncodeConfig:
    """Knobs for one encode: descriptor kind, neighbor mode, energy weights."""

    kind: str = "sift_like"
    mode: str = "all_M"
    k: int = 5
    search_region: int = 16
    alpha: float = 0.25
    solver: SolverConfig = SolverConfig()

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown descriptor kind {self.kind!r}")
        if self.mode not in ("all_M", "top_K"):
            raise ValueError(f"unknown neighbor mode {self.mode!r}")
        if self.mode == "top_K" and self.k < 1:
            raise ValueError("top_K mode needs k >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


def candidate_indices(grid: PatchGrid, index: int, search_region: int) -> np.ndarray:
    """Grid patches whose origins fall in the search window around a patch.

    The window is axis-aligned with full width `search_region` pixels about
    the probe patch origin (offsets up to search_region // 2 per axis),
    clipped at the borders. The result is sorted ascending and always
    contains the patch itself.
    """
    if search_region < grid.step:
        raise ValueError(
            f"search_region {search_region} is below the grid step {grid.step}"
        )
    half = search_region // 2
    reach = half // grid.step
    row, col = divmod(index, grid.cols)
    cols = np.arange(max(0, col - reach), min(grid.cols, col + reach + 1))
    rows = np.arange(max(0, row - reach), min(grid.rows, row + reach + 1))
    return (rows[:, None] * grid.cols + cols[None, :]).ravel()


def extract_overlaps(
    rep_pixels: np.ndarray,
    grid: PatchGrid,
    edges: np.ndarray,
    origins: np.ndarray,
) -> dict[tuple[int, int], np.ndarray]:
    """Overlap intensity vectors for every ordered adjacent pair.

    rep_pixels is the (M, H, W) stack for the encoded modality; origins is
    the (N, M, 2) array of related-patch origins. For ordered pair (i, j),
    the values are read from each related patch of i at the offsets the
    (i, j) overlap region occupies inside patch i.
    """
    m = rep_pixels.shape[0]
    midx = np.arange(m)[:, None]
    offset_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    overlaps: dict[tuple[int, int], np.ndarray] = {}
    grid_origins = grid.origins()
    for a, b in edges:
        for i, j in ((int(a), int(b)), (int(b), int(a))):
            delta = (
                grid_origins[j, 0] - grid_origins[i, 0],
                grid_origins[j, 1] - grid_origins[i, 1],
            )
            if delta not in offset_cache:
                region = overlap_region(grid, i, j)
                offset_cache[delta] = (
                    region[:, 0] - grid_origins[i, 0],
                    region[:, 1] - grid_origins[i, 1],
                )
            dx, dy = offset_cache[delta]
            ox = origins[i, :, 0][:, None] + dx[None, :]
            oy = origins[i, :, 1][:, None] + dy[None, :]
            overlaps[(i, j)] = rep_pixels[midx, oy, ox].T.copy()
    return overlaps


def find_related(
    probe_bank: DescriptorBank,
    rep: RepresentationDataset,
    modality: str,
    search_region: int,
) -> RelatedPatchSet:
    """Pick, per patch location and representation pair, the window patch
    with the smallest Euclidean descriptor distance (ties to the lowest
    patch index), and extract its descriptors and overlap vectors."""
    grid = rep.grid
    n = grid.n_patches
    if probe_bank.vectors.shape[1] != n:
        raise ValueError(
            f"probe bank has {probe_bank.vectors.shape[1]} patches, grid has {n}"
        )
    banks = rep.bank_matrix(modality, probe_bank.kind)
    m = rep.size
    probe = probe_bank.vectors.T  # (N, DIM)
    indices = np.empty((n, m), dtype=np.int64)
    distances = np.empty((n, m))
    for i in range(n):
        cand = candidate_indices(grid, i, search_region)
        sub = banks[:, :, cand]
        d2 = np.sum((sub - probe[i][None, :, None]) ** 2, axis=1)
        best = np.argmin(d2, axis=1)
        indices[i] = cand[best]
        distances[i] = np.sqrt(d2[np.arange(m), best])
    descriptors = np.take_along_axis(
        banks.transpose(1, 2, 0),  # (DIM, Ngrid, M)
        indices[None, :, :],  # broadcast over DIM
        axis=1,
    ).transpose(1, 0, 2)
    grid_origins = grid.origins()
    origins = grid_origins[indices]
    edges = adjacency(grid).edges
    overlaps = extract_overlaps(rep.pixels(modality), grid, edges, origins)
    return RelatedPatchSet(
        indices=indices,
        distances=distances,
        descriptors=descriptors,
        origins=origins,
        overlaps=overlaps,
        kind=probe_bank.kind,
        modality=modality,
    )


def assemble_energy(
    probe_descs: np.ndarray,
    related: RelatedPatchSet,
    edges: np.ndarray,
    alpha: float,
) -> EnergyProblem:
    """Quadratic-form coefficients of the reconstruction + smoothness energy.

    probe_descs holds one descriptor row per patch location (N, dim).
    Diagonal block i: F_i'F_i plus alpha * sum over adjacent j of O_ij'O_ij;
    off-diagonal block for edge (a, b): -alpha * O_ab'O_ba; linear term
    block i: -2 F_i' f_i. The dropped constant sum |f_i|^2 is kept on the
    problem so oracles can reconstruct the physical energy.
    """
    f = np.asarray(probe_descs, dtype=float)
    F = related.descriptors
    if f.shape != F.shape[:2]:
        raise ValueError(
            f"probe descriptors {f.shape} do not match related set {F.shape[:2]}"
        )
    n, _, m = F.shape
    qdiag = np.einsum("ndi,ndj->nij", F, F, optimize=True)
    for (i, j), o_ij in related.overlaps.items():
        qdiag[i] += alpha * (o_ij.T @ o_ij)
    qdiag = (qdiag + qdiag.transpose(0, 2, 1)) / 2.0
    edges = np.ascontiguousarray(edges, dtype=np.int64).reshape(-1, 2)
    qoff = np.empty((len(edges), m, m))
    for e, (a, b) in enumerate(edges):
        o_ab = related.overlaps[(int(a), int(b))]
        o_ba = related.overlaps[(int(b), int(a))]
        qoff[e] = -alpha * (o_ab.T @ o_ba)
    c = -2.0 * np.einsum("ndi,nd->ni", F, f, optimize=True)
    constant = float(np.sum(f * f))
    return EnergyProblem(qdiag=qdiag, qoff=qoff, edges=edges, c=c, constant=constant)


def encode(
    image: FaceImage,
    rep: RepresentationDataset,
    config: EncodeConfig = EncodeConfig(),
    *,
    probe_bank: DescriptorBank | None = None,
    related: RelatedPatchSet | None = None,
) -> SparseFaceCode:
    """Sparse code for one image against the representation set.

    In all_M mode every representation pair gets a weight; in top_K mode
    only the k nearest related patches per location are allowed and the
    remaining weights are exactly zero. probe_bank/related can be passed
    in when already computed (cache hits, shared across modes).
    """
    grid = rep.grid
    if probe_bank is None:
        probe_bank = describe_image(image, grid, config.kind)
    elif probe_bank.kind != config.kind:
        raise ValueError(
            f"probe bank kind {probe_bank.kind!r} does not match {config.kind!r}"
        )
    if related is None:
        related = find_related(probe_bank, rep, image.modality, config.search_region)
    edges = adjacency(grid).edges
    m = rep.size
    if config.mode == "top_K" and config.k < m:
        order = np.argsort(related.distances, axis=1, kind="stable")[:, : config.k]
        selected = np.sort(order, axis=1)
        problem = assemble_energy(
            probe_bank.vectors.T, related.restrict(selected), edges, config.alpha
        )
        result = solve_block_coordinate(problem, config.solver)
        weights = np.zeros((grid.n_patches, m))
        np.put_along_axis(weights, selected, result.w, axis=1)
    else:
        if config.mode == "top_K" and config.k > m:
            raise ValueError(f"top_K k={config.k} exceeds representation size {m}")
        problem = assemble_energy(probe_bank.vectors.T, related, edges, config.alpha)
        result = solve_block_coordinate(problem, config.solver)
        weights = result.w
    if not result.converged:
        raise EncodingError(image.image_id, result)
    return SparseFaceCode(
        weights=weights,
        image_id=image.image_id,
        subject_id=image.subject_id,
        modality=image.modality,
        kind=config.kind,
        mode=config.mode,
    )


def save_code(path, code: SparseFaceCode) -> None:
    meta = {
        "format": "sparse_code",
        "image_id": code.image_id,
        "subject_id": code.subject_id,
        "modality": code.modality,
        "kind": code.kind,
        "mode": code.mode,
        "n_locations": code.weights.shape[0],
        "size": code.weights.shape[1],
    }
    write_container(path, meta, {"weights": code.weights})


def load_code(path) -> SparseFaceCode:
    meta, arrays = read_container(path)
    if meta.get("format") != "sparse_code":
        raise ValueError(f"{path}: not a sparse code")
    return SparseFaceCode(
        weights=arrays["weights"],
        image_id=meta["image_id"],
        subject_id=meta.get("subject_id", ""),
        modality=meta["modality"],
        kind=meta["kind"],
        mode=meta.get("mode", "all_M"),
    )
