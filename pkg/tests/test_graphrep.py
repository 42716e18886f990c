"""Tests for the related-patch search and energy assembly.

Every numeric check is against a literal re-computation: candidate
windows by scanning all origins, related patches by exhaustive distance
loops, overlap vectors pixel by pixel, and the assembled quadratic form
against the written-out reconstruction + smoothness energy.
"""

import numpy as np
import pytest

from hfmatch.graphrep import (
    EncodeConfig,
    EncodingError,
    RepresentationDataset,
    assemble_energy,
    candidate_indices,
    encode,
    extract_overlaps,
    find_related,
    load_code,
    save_code,
)
from hfmatch.imagegrid import FaceImage, adjacency, build_grid, overlap_region
from hfmatch.descriptors import describe_image
from hfmatch.qpsolver import SolverConfig, brute_force_oracle, solve_block_coordinate

from helpers import direct_energy, random_feasible, random_problem


def rand_image(rng, width, height, image_id, modality="photo", subject="s0"):
    return FaceImage(
        pixels=rng.random((height, width)),
        image_id=image_id,
        modality=modality,
        subject_id=subject,
    )


def tiny_rep(rng, width=20, height=15, m=3, modality="photo"):
    grid = build_grid(width, height, patch_size=10, overlap_ratio=0.5)
    imgs = [
        rand_image(rng, width, height, f"rep{k}", modality, subject=f"p{k}")
        for k in range(m)
    ]
    return grid, RepresentationDataset({modality: imgs}, grid)


def oracle_candidates(grid, index, search_region):
    half = search_region // 2
    go = grid.origins()
    keep = [
        j
        for j in range(grid.n_patches)
        if abs(int(go[j, 0]) - int(go[index, 0])) <= half
        and abs(int(go[j, 1]) - int(go[index, 1])) <= half
    ]
    return np.array(keep, dtype=np.int64)


class TestCandidateWindow:
    def test_counts_on_default_geometry(self):
        grid = build_grid(100, 125, patch_size=10, overlap_ratio=0.5)
        interior = 5 * grid.cols + 7
        assert len(candidate_indices(grid, interior, 16)) == 9
        assert len(candidate_indices(grid, 0, 16)) == 4
        assert len(candidate_indices(grid, 7, 16)) == 6  # top edge
        corner = grid.n_patches - 1
        assert len(candidate_indices(grid, corner, 16)) == 4

    def test_matches_origin_scan(self):
        grid = build_grid(60, 45, patch_size=10, overlap_ratio=0.5)
        for region in (16, 10, 25, 40):
            for i in range(grid.n_patches):
                got = candidate_indices(grid, i, region)
                np.testing.assert_array_equal(got, oracle_candidates(grid, i, region))

    def test_sorted_and_contains_self(self):
        grid = build_grid(100, 125, patch_size=10, overlap_ratio=0.5)
        for i in (0, 57, 455):
            cand = candidate_indices(grid, i, 16)
            assert i in cand
            assert np.all(np.diff(cand) > 0)

    def test_region_below_step_rejected(self):
        grid = build_grid(100, 125, patch_size=10, overlap_ratio=0.5)
        with pytest.raises(ValueError, match="step"):
            candidate_indices(grid, 0, 4)


class TestFindRelated:
    def test_self_match_has_zero_distance(self):
        rng = np.random.default_rng(11)
        grid, rep = tiny_rep(rng, m=3)
        probe_bank = describe_image(rep.images["photo"][0], grid, "sift_like")
        related = find_related(probe_bank, rep, "photo", 16)
        np.testing.assert_array_equal(
            related.indices[:, 0], np.arange(grid.n_patches)
        )
        np.testing.assert_allclose(related.distances[:, 0], 0.0, atol=1e-12)

    def test_matches_exhaustive_search(self):
        rng = np.random.default_rng(12)
        grid, rep = tiny_rep(rng, width=30, height=25, m=4)
        probe = rand_image(rng, 30, 25, "probe")
        probe_bank = describe_image(probe, grid, "hog")
        related = find_related(probe_bank, rep, "photo", 16)
        banks = rep.bank_matrix("photo", "hog")
        for i in range(grid.n_patches):
            cand = oracle_candidates(grid, i, 16)
            for k in range(rep.size):
                d = np.array(
                    [
                        np.linalg.norm(probe_bank.vectors[:, i] - banks[k][:, c])
                        for c in cand
                    ]
                )
                best = int(np.argmin(d))
                assert related.indices[i, k] == cand[best]
                assert related.distances[i, k] == pytest.approx(d[best], abs=1e-12)

    def test_descriptors_and_origins_follow_indices(self):
        rng = np.random.default_rng(13)
        grid, rep = tiny_rep(rng, m=3)
        probe_bank = describe_image(rand_image(rng, 20, 15, "probe"), grid, "sift_like")
        related = find_related(probe_bank, rep, "photo", 16)
        banks = rep.bank_matrix("photo", "sift_like")
        go = grid.origins()
        for i in range(grid.n_patches):
            for k in range(rep.size):
                j = related.indices[i, k]
                np.testing.assert_array_equal(
                    related.descriptors[i, :, k], banks[k][:, j]
                )
                np.testing.assert_array_equal(related.origins[i, k], go[j])

    def test_probe_grid_mismatch_rejected(self):
        rng = np.random.default_rng(14)
        grid, rep = tiny_rep(rng)
        other = build_grid(30, 25, patch_size=10, overlap_ratio=0.5)
        bank = describe_image(rand_image(rng, 30, 25, "probe"), other, "sift_like")
        with pytest.raises(ValueError, match="patches"):
            find_related(bank, rep, "photo", 16)


class TestExtractOverlaps:
    def test_pixelwise_against_loop(self):
        rng = np.random.default_rng(21)
        grid = build_grid(20, 15, patch_size=10, overlap_ratio=0.5)
        edges = adjacency(grid).edges
        m = 3
        rep_pixels = rng.random((m, 15, 20))
        go = grid.origins()
        origins = go[rng.integers(0, grid.n_patches, size=(grid.n_patches, m))]
        got = extract_overlaps(rep_pixels, grid, edges, origins)
        expected_keys = set()
        for a, b in edges:
            for i, j in ((int(a), int(b)), (int(b), int(a))):
                expected_keys.add((i, j))
                region = overlap_region(grid, i, j)
                vals = np.empty((len(region), m))
                for r, (x, y) in enumerate(region):
                    for k in range(m):
                        ox = origins[i, k, 0] + (x - go[i, 0])
                        oy = origins[i, k, 1] + (y - go[i, 1])
                        vals[r, k] = rep_pixels[k, oy, ox]
                np.testing.assert_array_equal(got[(i, j)], vals)
        assert set(got) == expected_keys


class TestEnergyAssembly:
    def test_identity_on_synthetic_parts(self):
        rng = np.random.default_rng(31)
        for _ in range(12):
            n = int(rng.integers(2, 5))
            m = int(rng.integers(2, 5))
            problem, (probe, related, overlaps, edges, alpha) = random_problem(
                rng, n, m
            )
            for _ in range(8):
                w = random_feasible(rng, n, m)
                direct = direct_energy(probe, related, overlaps, edges, alpha, w)
                assert abs(problem.objective(w) + problem.constant - direct) < 1e-10

    def test_identity_on_real_pipeline(self):
        rng = np.random.default_rng(32)
        grid, rep = tiny_rep(rng, m=3)
        probe = rand_image(rng, 20, 15, "probe")
        probe_bank = describe_image(probe, grid, "sift_like")
        related = find_related(probe_bank, rep, "photo", 16)
        edges = adjacency(grid).edges
        alpha = 0.25
        problem = assemble_energy(probe_bank.vectors.T, related, edges, alpha)
        ordered_edges = [(int(a), int(b)) for a, b in edges]
        for _ in range(10):
            w = random_feasible(rng, grid.n_patches, rep.size)
            direct = direct_energy(
                probe_bank.vectors.T,
                related.descriptors,
                related.overlaps,
                ordered_edges,
                alpha,
                w,
            )
            assert abs(problem.objective(w) + problem.constant - direct) < 1e-9

    def test_probe_shape_mismatch_rejected(self):
        rng = np.random.default_rng(33)
        grid, rep = tiny_rep(rng, m=3)
        bank = describe_image(rand_image(rng, 20, 15, "probe"), grid, "sift_like")
        related = find_related(bank, rep, "photo", 16)
        edges = adjacency(grid).edges
        with pytest.raises(ValueError, match="match"):
            assemble_energy(bank.vectors.T[:-1], related, edges, 0.25)


class TestEncode:
    def test_self_probe_recovers_one_hot(self):
        rng = np.random.default_rng(41)
        grid = build_grid(15, 10, patch_size=10, overlap_ratio=0.5)
        imgs = [
            rand_image(rng, 15, 10, f"rep{k}", subject=f"p{k}") for k in range(3)
        ]
        rep = RepresentationDataset({"photo": imgs}, grid)
        config = EncodeConfig(
            solver=SolverConfig(max_sweeps=500, rel_tol=1e-12, kkt_tol=1e-6)
        )
        code = encode(imgs[0], rep, config)
        assert code.weights.shape == (grid.n_patches, 3)
        assert code.weights[:, 0].min() > 0.999
        probe_bank = describe_image(imgs[0], grid, config.kind)
        related = find_related(probe_bank, rep, "photo", config.search_region)
        problem = assemble_energy(
            probe_bank.vectors.T, related, adjacency(grid).edges, config.alpha
        )
        assert problem.objective(code.weights) + problem.constant < 1e-8

    def test_solution_beats_coarse_grid(self):
        rng = np.random.default_rng(42)
        grid = build_grid(15, 10, patch_size=10, overlap_ratio=0.5)
        imgs = [rand_image(rng, 15, 10, f"rep{k}") for k in range(3)]
        rep = RepresentationDataset({"photo": imgs}, grid)
        probe = rand_image(rng, 15, 10, "probe")
        probe_bank = describe_image(probe, grid, "sift_like")
        related = find_related(probe_bank, rep, "photo", 16)
        problem = assemble_energy(
            probe_bank.vectors.T, related, adjacency(grid).edges, 0.25
        )
        result = solve_block_coordinate(
            problem, SolverConfig(max_sweeps=1000, rel_tol=1e-12, kkt_tol=1e-6)
        )
        _, grid_energy = brute_force_oracle(problem, step=0.05)
        assert result.objective + problem.constant <= grid_energy + 1e-9

    def test_top_k_zeroes_the_rest(self):
        rng = np.random.default_rng(43)
        grid, rep = tiny_rep(rng, m=5)
        probe = rand_image(rng, 20, 15, "probe")
        config = EncodeConfig(mode="top_K", k=2)
        code = encode(probe, rep, config)
        assert code.mode == "top_K"
        probe_bank = describe_image(probe, grid, config.kind)
        related = find_related(probe_bank, rep, "photo", config.search_region)
        nearest = np.sort(np.argsort(related.distances, axis=1, kind="stable")[:, :2])
        for i in range(grid.n_patches):
            outside = np.setdiff1d(np.arange(5), nearest[i])
            assert np.all(code.weights[i, outside] == 0.0)
            assert code.weights[i].sum() == pytest.approx(1.0, abs=1e-9)

    def test_top_k_equal_m_matches_all_m(self):
        rng = np.random.default_rng(44)
        grid, rep = tiny_rep(rng, m=3)
        probe = rand_image(rng, 20, 15, "probe")
        full = encode(probe, rep, EncodeConfig(mode="all_M"))
        topped = encode(probe, rep, EncodeConfig(mode="top_K", k=3))
        np.testing.assert_array_equal(full.weights, topped.weights)

    def test_top_k_exceeding_m_rejected(self):
        rng = np.random.default_rng(45)
        grid, rep = tiny_rep(rng, m=3)
        probe = rand_image(rng, 20, 15, "probe")
        with pytest.raises(ValueError, match="exceeds"):
            encode(probe, rep, EncodeConfig(mode="top_K", k=4))

    def test_no_weight_dust(self):
        rng = np.random.default_rng(46)
        grid, rep = tiny_rep(rng, width=30, height=25, m=8)
        probe = rand_image(rng, 30, 25, "probe")
        code = encode(probe, rep, EncodeConfig())
        w = code.weights
        assert np.all((w == 0.0) | (w >= 1e-12))

    def test_nonconvergence_raises(self):
        rng = np.random.default_rng(47)
        grid, rep = tiny_rep(rng, m=3)
        probe = rand_image(rng, 20, 15, "probe")
        config = EncodeConfig(solver=SolverConfig(max_sweeps=1, rel_tol=1e-30))
        with pytest.raises(EncodingError, match="probe"):
            encode(probe, rep, config)

    def test_precomputed_bank_kind_checked(self):
        rng = np.random.default_rng(48)
        grid, rep = tiny_rep(rng, m=3)
        probe = rand_image(rng, 20, 15, "probe")
        bank = describe_image(probe, grid, "hog")
        with pytest.raises(ValueError, match="kind"):
            encode(probe, rep, EncodeConfig(kind="sift_like"), probe_bank=bank)

    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(49)
        grid, rep = tiny_rep(rng, m=3)
        probe = rand_image(rng, 20, 15, "probe", subject="s7")
        code = encode(probe, rep, EncodeConfig())
        path = tmp_path / "code.hfm"
        save_code(path, code)
        back = load_code(path)
        np.testing.assert_array_equal(back.weights, code.weights)
        assert back.image_id == "probe"
        assert back.subject_id == "s7"
        assert back.modality == "photo"
        assert back.kind == "sift_like"
        assert back.mode == "all_M"

    def test_roundtrip_rejects_other_formats(self, tmp_path):
        from hfmatch.container import write_container

        path = tmp_path / "other.hfm"
        write_container(path, {"format": "something_else"}, {"x": np.zeros(3)})
        with pytest.raises(ValueError, match="sparse code"):
            load_code(path)


class TestRepresentationDataset:
    def test_unequal_modalities_rejected(self):
        rng = np.random.default_rng(51)
        grid = build_grid(20, 15, patch_size=10, overlap_ratio=0.5)
        photos = [rand_image(rng, 20, 15, f"p{k}", "photo") for k in range(3)]
        sketches = [rand_image(rng, 20, 15, f"s{k}", "sketch") for k in range(2)]
        with pytest.raises(ValueError, match="equally many"):
            RepresentationDataset({"photo": photos, "sketch": sketches}, grid)

    def test_wrong_image_size_rejected(self):
        rng = np.random.default_rng(52)
        grid = build_grid(20, 15, patch_size=10, overlap_ratio=0.5)
        bad = rand_image(rng, 25, 15, "bad")
        with pytest.raises(ValueError, match="grid expects"):
            RepresentationDataset({"photo": [bad]}, grid)

    def test_subject_misalignment_rejected(self):
        rng = np.random.default_rng(53)
        grid = build_grid(20, 15, patch_size=10, overlap_ratio=0.5)
        photo = rand_image(rng, 20, 15, "p0", "photo", subject="a")
        sketch = rand_image(rng, 20, 15, "s0", "sketch", subject="b")
        with pytest.raises(ValueError, match="misalignment"):
            RepresentationDataset({"photo": [photo], "sketch": [sketch]}, grid)

    def test_empty_rejected(self):
        grid = build_grid(20, 15, patch_size=10, overlap_ratio=0.5)
        with pytest.raises(ValueError, match="at least one"):
            RepresentationDataset({}, grid)

    def test_unknown_modality_rejected(self):
        rng = np.random.default_rng(54)
        _, rep = tiny_rep(rng)
        with pytest.raises(ValueError, match="unknown modality"):
            rep.pixels("thermal")

    def test_bank_cache_and_override(self):
        rng = np.random.default_rng(55)
        grid, rep = tiny_rep(rng, m=2)
        first = rep.bank_matrix("photo", "hog")
        assert rep.bank_matrix("photo", "hog") is first
        fake = np.zeros_like(first)
        rep.set_bank_matrix("photo", "hog", fake)
        assert rep.bank_matrix("photo", "hog") is fake
        with pytest.raises(ValueError, match="shape"):
            rep.set_bank_matrix("photo", "hog", np.zeros((2, 3)))


class TestEncodeConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="kind"):
            EncodeConfig(kind="surf")
        with pytest.raises(ValueError, match="mode"):
            EncodeConfig(mode="some_of_M")
        with pytest.raises(ValueError, match="k >= 1"):
            EncodeConfig(mode="top_K", k=0)
        with pytest.raises(ValueError, match="alpha"):
            EncodeConfig(alpha=-0.1)
