"""Scoring, normalization, fusion and CMC evaluation.

Probe features are compared to gallery features with cosine similarity.
Each raw matrix is min-max normalized over all its entries, matrices
from different partition schemes (and then descriptor kinds) are summed,
and the fused matrix drives a nearest-neighbor ranking. Tie handling is
pessimistic: a gallery entry tied with the true mate counts as ranked
above it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .container import atomic_write_text

__all__ = [
    "ScoreMatrix",
    "CmcCurve",
    "cosine_similarity",
    "score_matrix",
    "min_max_normalize",
    "fuse",
    "rank_and_cmc",
    "make_folds",
    "aggregate_cmc",
    "save_scores_csv",
    "save_cmc_csv",
    "save_cmc_svg",
]


@dataclass(frozen=True)
class ScoreMatrix:
    """Probes x gallery similarity scores with their id orderings."""

    scores: np.ndarray
    probe_ids: tuple
    gallery_ids: tuple
    provenance: str = "raw"

    def __post_init__(self) -> None:
        s = self.scores
        if s.ndim != 2:
            raise ValueError("scores must be 2-d")
        if s.shape != (len(self.probe_ids), len(self.gallery_ids)):
            raise ValueError(
                f"scores {s.shape} do not match "
                f"{len(self.probe_ids)} probes x {len(self.gallery_ids)} gallery"
            )
        if len(set(self.probe_ids)) != len(self.probe_ids):
            raise ValueError("probe ids must be unique")
        if len(set(self.gallery_ids)) != len(self.gallery_ids):
            raise ValueError("gallery ids must be unique")
        if s.size and not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")


@dataclass(frozen=True)
class CmcCurve:
    """accuracy_at_rank[k-1] = fraction of probes whose mate ranks <= k."""

    accuracy_at_rank: np.ndarray
    probe_count: int

    def __post_init__(self) -> None:
        acc = self.accuracy_at_rank
        if np.any(np.diff(acc) < -1e-12):
            raise ValueError("CMC curve must be non-decreasing")
        if acc.size and (acc.min() < -1e-12 or acc.max() > 1.0 + 1e-12):
            raise ValueError("CMC accuracies must lie in [0, 1]")

    def at(self, rank: int) -> float:
        return float(self.accuracy_at_rank[rank - 1])


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """a.b / (|a||b|); zero if either vector has zero norm."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _features_and_ids(entries, ids):
    if ids is None:
        vectors = np.stack([e.values for e in entries])
        ids = tuple(e.subject_id for e in entries)
    else:
        vectors = np.asarray(entries, dtype=float)
        ids = tuple(ids)
    return vectors, ids


def score_matrix(
    probes,
    gallery,
    probe_ids=None,
    gallery_ids=None,
    provenance: str = "raw",
) -> ScoreMatrix:
    """All-pairs cosine scores. Inputs are either DiscriminantFeature
    sequences (ids taken from their subject ids) or plain 2-d arrays with
    explicit id tuples."""
    p, pids = _features_and_ids(probes, probe_ids)
    g, gids = _features_and_ids(gallery, gallery_ids)
    if p.shape[1] != g.shape[1]:
        raise ValueError(
            f"feature length mismatch: probes {p.shape[1]}, gallery {g.shape[1]}"
        )
    pn = np.linalg.norm(p, axis=1, keepdims=True)
    gn = np.linalg.norm(g, axis=1, keepdims=True)
    safe_p = np.where(pn == 0.0, 1.0, pn)
    safe_g = np.where(gn == 0.0, 1.0, gn)
    scores = (p / safe_p) @ (g / safe_g).T
    scores[(pn == 0.0).ravel(), :] = 0.0
    scores[:, (gn == 0.0).ravel()] = 0.0
    return ScoreMatrix(
        scores=scores, probe_ids=pids, gallery_ids=gids, provenance=provenance
    )


def min_max_normalize(matrix: ScoreMatrix) -> ScoreMatrix:
    """(s - min)/(max - min) over the whole matrix; a constant matrix maps
    to all 0.5 (fusion-neutral) with a warning."""
    s = matrix.scores
    lo = float(s.min())
    hi = float(s.max())
    if hi == lo:
        warnings.warn(
            f"constant score matrix ({matrix.provenance}); normalizing to 0.5",
            stacklevel=2,
        )
        normalized = np.full_like(s, 0.5)
    else:
        normalized = (s - lo) / (hi - lo)
    return ScoreMatrix(
        scores=normalized,
        probe_ids=matrix.probe_ids,
        gallery_ids=matrix.gallery_ids,
        provenance=matrix.provenance,
    )


def fuse(matrices) -> ScoreMatrix:
    """Element-wise sum of already-normalized matrices."""
    matrices = list(matrices)
    if not matrices:
        raise ValueError("nothing to fuse")
    first = matrices[0]
    total = first.scores.copy()
    for other in matrices[1:]:
        if (
            other.probe_ids != first.probe_ids
            or other.gallery_ids != first.gallery_ids
        ):
            raise ValueError("fused matrices must share probe/gallery orderings")
        total += other.scores
    return ScoreMatrix(
        scores=total,
        probe_ids=first.probe_ids,
        gallery_ids=first.gallery_ids,
        provenance="fused",
    )


def rank_and_cmc(matrix: ScoreMatrix, mate_map: dict) -> tuple:
    """Pessimistic nearest-neighbor ranks and the CMC curve.

    mate_map sends a probe id to its gallery id. Probes absent from the
    map are excluded (their count goes to a warning); a mapped mate that
    is not in the gallery is an error. Returns (curve, ranks) with ranks
    keyed by probe id.
    """
    gallery_pos = {gid: j for j, gid in enumerate(matrix.gallery_ids)}
    ranks = {}
    skipped = 0
    for i, pid in enumerate(matrix.probe_ids):
        if pid not in mate_map:
            skipped += 1
            continue
        mate = mate_map[pid]
        if mate not in gallery_pos:
            raise ValueError(f"mate {mate!r} of probe {pid!r} is not in the gallery")
        row = matrix.scores[i]
        ranks[pid] = int(np.sum(row >= row[gallery_pos[mate]]))
    if skipped:
        warnings.warn(f"{skipped} probes had no mate and were excluded", stacklevel=2)
    if not ranks:
        raise ValueError("no probe has a gallery mate")
    g = len(matrix.gallery_ids)
    counts = np.bincount(list(ranks.values()), minlength=g + 1)[1:]
    curve = CmcCurve(
        accuracy_at_rank=np.cumsum(counts) / len(ranks),
        probe_count=len(ranks),
    )
    return curve, ranks


def make_folds(subject_ids, folds: int, seed: int = 0) -> list:
    """Deterministic disjoint test folds: list of (train_ids, test_ids)."""
    ids = sorted(subject_ids)
    if folds < 2 or folds > len(ids):
        raise ValueError(
            f"need 2..{len(ids)} folds for {len(ids)} subjects, got {folds}"
        )
    order = np.random.default_rng(seed).permutation(len(ids))
    chunks = np.array_split(order, folds)
    result = []
    for chunk in chunks:
        test = sorted(ids[i] for i in chunk)
        train = sorted(set(ids) - set(test))
        result.append((train, test))
    return result


def aggregate_cmc(curves) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard deviation of accuracy_at_rank across curves."""
    stacked = np.stack([c.accuracy_at_rank for c in curves])
    return stacked.mean(axis=0), stacked.std(axis=0)


def _fmt(value: float) -> str:
    return repr(float(value))


def save_scores_csv(path, matrix: ScoreMatrix) -> None:
    """Header row of gallery ids, then one probe per row."""
    lines = ["probe_id," + ",".join(str(g) for g in matrix.gallery_ids)]
    for pid, row in zip(matrix.probe_ids, matrix.scores):
        lines.append(str(pid) + "," + ",".join(_fmt(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def save_cmc_csv(path, curve: CmcCurve) -> None:
    lines = ["rank,accuracy"]
    for k, acc in enumerate(curve.accuracy_at_rank, start=1):
        lines.append(f"{k},{_fmt(acc)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def save_cmc_svg(path, curve: CmcCurve, title: str = "CMC") -> None:
    """Small self-contained SVG line plot of the curve."""
    width, height, margin = 480, 320, 40
    acc = curve.accuracy_at_rank
    n = len(acc)
    xs = margin + (width - 2 * margin) * np.arange(1, n + 1) / max(n, 1)
    ys = height - margin - (height - 2 * margin) * acc
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<text x="{width // 2}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>\n'
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>\n'
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>\n'
        f'<text x="{margin}" y="{height - margin + 16}" font-family="sans-serif" '
        f'font-size="10">1</text>\n'
        f'<text x="{width - margin}" y="{height - margin + 16}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">{n}</text>\n'
        f'<text x="{margin - 6}" y="{height - margin}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">0</text>\n'
        f'<text x="{margin - 6}" y="{margin + 4}" text-anchor="end" '
        f'font-family="sans-serif" font-size="10">1</text>\n'
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" '
        f'points="{points}"/>\n'
        f"</svg>\n"
    )
    atomic_write_text(path, svg)
