"""Shared oracles for the energy/solver tests.

Everything here is written as literal formula evaluation (loops, explicit
norms) so it stays independent of the vectorized implementation paths it
checks.
"""

import numpy as np

from hfmatch.graphrep import RelatedPatchSet, assemble_energy


def chain_edges(n):
    return np.array([(i, i + 1) for i in range(n - 1)], dtype=np.int64).reshape(-1, 2)


def make_random_parts(rng, n, m, edges, dim=6, ov=4):
    """Random descriptor/overlap data with the energy's shapes."""
    probe = rng.normal(size=(n, dim))
    related = rng.normal(size=(n, dim, m))
    overlaps = {}
    for a, b in edges:
        overlaps[(int(a), int(b))] = rng.normal(size=(ov, m))
        overlaps[(int(b), int(a))] = rng.normal(size=(ov, m))
    return probe, related, overlaps


def direct_energy(probe, related, overlaps, edges, alpha, w):
    """The physical energy, written exactly as its definition reads."""
    total = 0.0
    for i in range(len(probe)):
        recon = probe[i] - related[i] @ w[i]
        total += float(recon @ recon)
    for a, b in edges:
        a, b = int(a), int(b)
        mismatch = overlaps[(a, b)] @ w[a] - overlaps[(b, a)] @ w[b]
        total += alpha * float(mismatch @ mismatch)
    return total


def build_related_set(related, overlaps, kind="sift_like", modality="photo"):
    n, _, m = related.shape
    return RelatedPatchSet(
        indices=np.zeros((n, m), dtype=np.int64),
        distances=np.zeros((n, m)),
        descriptors=np.asarray(related, dtype=float),
        origins=np.zeros((n, m, 2), dtype=np.int64),
        overlaps={k: np.asarray(v, dtype=float) for k, v in overlaps.items()},
        kind=kind,
        modality=modality,
    )


def random_problem(rng, n, m, dim=6, ov=4, alpha=0.25):
    """Random chain-coupled energy, assembled through the public builder."""
    edges = chain_edges(n)
    probe, related, overlaps = make_random_parts(rng, n, m, edges, dim=dim, ov=ov)
    problem = assemble_energy(probe, build_related_set(related, overlaps), edges, alpha)
    return problem, (probe, related, overlaps, edges, alpha)


def random_feasible(rng, n, m):
    """A random point on the product of simplices."""
    w = rng.random((n, m)) + 1e-12
    return w / w.sum(axis=1, keepdims=True)
