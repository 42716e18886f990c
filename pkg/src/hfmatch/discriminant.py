"""Per-region PCA+LDA models over partitioned sparse codes.

For every region of a partition scheme, the patch rows falling in that
region are concatenated into one long vector per image. PCA (keeping a
variance fraction, 0.99 by default) compresses those vectors, then a
regularized LDA with subjects as classes sharpens them; projected region
vectors are concatenated back into a single discriminant feature.

Both modalities of a training pair share one PCA by default. The
per-modality variant (separate PCA per modality, truncated to the common
dimension so LDA sees a single space) is available via per_modality=True.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .container import read_container, write_container
from .partition import PartitionScheme, scheme_labels

__all__ = [
    "RegionVector",
    "RegionModel",
    "ProjectionModel",
    "DiscriminantFeature",
    "split_by_region",
    "fit_pca",
    "fit_lda",
    "scatter_matrices",
    "train_models",
    "project",
    "save_model",
    "load_model",
]

VARIANCE_KEEP = 0.99
LDA_EPS_SCALE = 1e-4
POOLED = ""


@dataclass(frozen=True)
class RegionVector:
    """Concatenated patch rows of one region, ascending patch index."""

    values: np.ndarray
    region_id: int


@dataclass(frozen=True)
class RegionModel:
    """Trained projection for one region: center, PCA basis, LDA basis.

    means/bases/variance_ratios are keyed by modality; the pooled default
    stores a single entry under the key "".
    """

    means: dict
    bases: dict
    variance_ratios: dict
    lda_basis: np.ndarray
    epsilon: float

    def pca_key(self, modality: str) -> str:
        if POOLED in self.bases:
            return POOLED
        if modality not in self.bases:
            raise ValueError(f"model has no PCA for modality {modality!r}")
        return modality


@dataclass(frozen=True)
class ProjectionModel:
    """One RegionModel per scheme region, plus what it was trained on."""

    scheme: PartitionScheme
    kind: str
    per_modality: bool
    regions: tuple

    @property
    def feature_length(self) -> int:
        return sum(r.lda_basis.shape[1] for r in self.regions)


@dataclass(frozen=True)
class DiscriminantFeature:
    values: np.ndarray
    subject_id: str
    modality: str


def _patch_rows(code) -> np.ndarray:
    """(N, width) matrix of per-patch rows from a code or descriptor bank."""
    if hasattr(code, "weights"):
        return code.weights
    if hasattr(code, "vectors"):
        return code.vectors.T
    return np.asarray(code)


def split_by_region(code, scheme: PartitionScheme) -> list:
    """One RegionVector per region; rows concatenated in ascending index."""
    rows = _patch_rows(code)
    if rows.ndim != 2 or rows.shape[0] != scheme.n_locations:
        raise ValueError(
            f"code covers {rows.shape[0] if rows.ndim == 2 else '?'} patches, "
            f"scheme expects {scheme.n_locations}"
        )
    return [
        RegionVector(values=rows[np.sort(np.asarray(region))].ravel(), region_id=rid)
        for rid, region in enumerate(scheme.regions)
    ]


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of every column positive."""
    if basis.size == 0:
        return basis
    lead = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[lead, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def fit_pca(samples: np.ndarray, variance_keep: float = VARIANCE_KEEP):
    """Principal axes keeping the smallest count reaching variance_keep.

    Returns (mean, basis, ratio) where basis columns are orthonormal and
    ratio is the variance fraction actually retained. The decomposition
    runs on the centered data matrix (economy SVD, which is the Gram-route
    eigendecomposition when there are fewer samples than dimensions).
    Zero-variance data yields an empty basis and a warning.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("PCA needs at least 2 samples")
    if not 0.0 < variance_keep <= 1.0:
        raise ValueError(f"variance_keep must be in (0, 1], got {variance_keep}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    eigvals = svals**2 / (x.shape[0] - 1)
    total = float(eigvals.sum())
    if total <= 0.0:
        warnings.warn("zero total variance; returning an empty basis", stacklevel=2)
        return mean, np.zeros((x.shape[1], 0)), 0.0
    fractions = np.cumsum(eigvals) / total
    rank = int(np.sum(eigvals > total * 1e-12))
    keep = int(np.searchsorted(fractions, variance_keep - 1e-12) + 1)
    keep = min(keep, rank)
    basis = _fix_signs(vt[:keep].T.copy())
    return mean, basis, float(fractions[keep - 1])


def scatter_matrices(x: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    """Within-class and between-class scatter (S_w, S_b)."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    mean = x.mean(axis=0)
    p = x.shape[1]
    s_w = np.zeros((p, p))
    s_b = np.zeros((p, p))
    for cls in np.unique(labels):
        members = x[labels == cls]
        mu = members.mean(axis=0)
        centered = members - mu
        s_w += centered.T @ centered
        dm = (mu - mean)[:, None]
        s_b += len(members) * (dm @ dm.T)
    return s_w, s_b


def fit_lda(x: np.ndarray, labels, eps_scale: float = LDA_EPS_SCALE):
    """Regularized Fisher directions: top eigenvectors of (S_w+eps I)^-1 S_b.

    eps = eps_scale * trace(S_w)/dim; when the within-class scatter is
    exactly zero (degenerate identical pairs) the scale falls back to the
    between-class trace so the solve stays finite. Returns (basis, eps)
    with at most (classes - 1) unit columns.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("LDA needs at least 2 classes")
    p = x.shape[1]
    if p == 0:
        return np.zeros((0, 0)), 0.0
    s_w, s_b = scatter_matrices(x, labels)
    base = float(np.trace(s_w))
    if base <= 0.0:
        base = max(float(np.trace(s_b)), 1.0)
    eps = eps_scale * base / p
    eigvals, eigvecs = scipy.linalg.eigh(s_b, s_w + eps * np.eye(p))
    order = np.argsort(eigvals)[::-1]
    q = min(len(classes) - 1, p)
    basis = eigvecs[:, order[:q]]
    basis = basis / np.linalg.norm(basis, axis=0, keepdims=True)
    # C-contiguous so in-memory projections match a save/load roundtrip bitwise.
    return np.ascontiguousarray(_fix_signs(basis)), float(eps)


def _canonical_order(codes) -> list:
    keyed = [((c.subject_id, c.modality, c.image_id), c) for c in codes]
    keyed.sort(key=lambda kv: kv[0])
    return [c for _, c in keyed]


def train_models(
    codes,
    scheme: PartitionScheme,
    variance_keep: float = VARIANCE_KEEP,
    per_modality: bool = False,
) -> ProjectionModel:
    """Fit one PCA+LDA per region on coupled training codes.

    codes hold one entry per (subject, modality); subjects define the LDA
    classes. Samples are canonically re-ordered internally so the result
    does not depend on input order.
    """
    codes = _canonical_order(codes)
    subjects = sorted({c.subject_id for c in codes})
    if len(subjects) < 2:
        raise ValueError("training needs at least 2 subjects")
    kinds = {c.kind for c in codes}
    if len(kinds) != 1:
        raise ValueError(f"mixed descriptor kinds in training codes: {sorted(kinds)}")
    modalities = sorted({c.modality for c in codes})
    per_subject = {s: [c for c in codes if c.subject_id == s] for s in subjects}
    for s, group in per_subject.items():
        if sorted(c.modality for c in group) != modalities:
            raise ValueError(
                f"subject {s!r} does not contribute one code per modality"
            )
    labels = np.array([subjects.index(c.subject_id) for c in codes])
    split = [split_by_region(c, scheme) for c in codes]
    region_models = []
    for rid in range(scheme.n_regions):
        samples = np.stack([vectors[rid].values for vectors in split])
        means, bases, ratios = {}, {}, {}
        if per_modality:
            fitted = {}
            for mod in modalities:
                mask = np.array([c.modality == mod for c in codes])
                fitted[mod] = fit_pca(samples[mask], variance_keep)
            common = min(f[1].shape[1] for f in fitted.values())
            for mod, (mean, basis, ratio) in fitted.items():
                means[mod] = mean
                bases[mod] = basis[:, :common]
                ratios[mod] = ratio
            projected = np.stack(
                [
                    bases[c.modality].T @ (samples[i] - means[c.modality])
                    for i, c in enumerate(codes)
                ]
            )
        else:
            mean, basis, ratio = fit_pca(samples, variance_keep)
            means[POOLED] = mean
            bases[POOLED] = basis
            ratios[POOLED] = ratio
            projected = (samples - mean) @ basis
        lda_basis, eps = fit_lda(projected, labels)
        region_models.append(
            RegionModel(
                means=means,
                bases=bases,
                variance_ratios=ratios,
                lda_basis=lda_basis,
                epsilon=eps,
            )
        )
    return ProjectionModel(
        scheme=scheme,
        kind=kinds.pop(),
        per_modality=per_modality,
        regions=tuple(region_models),
    )


def project(code, model: ProjectionModel) -> DiscriminantFeature:
    """Center, PCA-project and LDA-project region-wise, then concatenate."""
    vectors = split_by_region(code, model.scheme)
    modality = getattr(code, "modality", "")
    parts = []
    for region_model, rv in zip(model.regions, vectors):
        key = region_model.pca_key(modality)
        compressed = region_model.bases[key].T @ (rv.values - region_model.means[key])
        parts.append(region_model.lda_basis.T @ compressed)
    return DiscriminantFeature(
        values=np.concatenate(parts) if parts else np.zeros(0),
        subject_id=getattr(code, "subject_id", ""),
        modality=modality,
    )


def save_model(path, model: ProjectionModel) -> None:
    labels = scheme_labels(model.scheme)
    meta = {
        "format": "projection_model",
        "kind": model.kind,
        "per_modality": model.per_modality,
        "scheme_kind": model.scheme.kind,
        "scheme_params": list(model.scheme.params),
        "n_regions": model.scheme.n_regions,
        "pca_keys": sorted(model.regions[0].bases),
        "variance_ratios": [
            {k: r.variance_ratios[k] for k in sorted(r.variance_ratios)}
            for r in model.regions
        ],
        "epsilons": [r.epsilon for r in model.regions],
    }
    arrays = {"scheme_assign": labels}
    for rid, region in enumerate(model.regions):
        for key in sorted(region.bases):
            tag = key if key else "pooled"
            arrays[f"mean_{rid}_{tag}"] = region.means[key]
            arrays[f"basis_{rid}_{tag}"] = region.bases[key]
        arrays[f"lda_{rid}"] = region.lda_basis
    write_container(path, meta, arrays)


def load_model(path) -> ProjectionModel:
    meta, arrays = read_container(path)
    if meta.get("format") != "projection_model":
        raise ValueError(f"{path}: not a projection model")
    labels = arrays["scheme_assign"].astype(np.int64)
    regions = tuple(
        np.nonzero(labels == j)[0].astype(np.int64)
        for j in range(int(meta["n_regions"]))
    )
    scheme = PartitionScheme(
        kind=meta["scheme_kind"],
        regions=regions,
        params=tuple(meta["scheme_params"]),
    )
    region_models = []
    for rid in range(scheme.n_regions):
        means, bases = {}, {}
        for key in meta["pca_keys"]:
            tag = key if key else "pooled"
            means[key] = arrays[f"mean_{rid}_{tag}"]
            bases[key] = arrays[f"basis_{rid}_{tag}"]
        region_models.append(
            RegionModel(
                means=means,
                bases=bases,
                variance_ratios=meta["variance_ratios"][rid],
                lda_basis=arrays[f"lda_{rid}"],
                epsilon=float(meta["epsilons"][rid]),
            )
        )
    return ProjectionModel(
        scheme=scheme,
        kind=meta["kind"],
        per_modality=bool(meta["per_modality"]),
        regions=tuple(region_models),
    )
