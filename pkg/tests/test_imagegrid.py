import numpy as np
import pytest

from hfmatch.imagegrid import (
    FaceImage,
    adjacency,
    build_grid,
    extract_patch,
    load_image,
    overlap_region,
    write_pgm,
)


def patch_pixel_set(grid, index):
    # Oracle: enumerate every pixel covered by a patch.
    x, y = grid.origin(index)
    p = grid.patch_size
    return {(xx, yy) for xx in range(x, x + p) for yy in range(y, y + p)}


def brute_force_edges(grid):
    # Oracle: 4-neighborhood means row/col index distance exactly 1 on one axis.
    n = grid.n_patches
    edges = set()
    for i in range(n):
        ri, ci = divmod(i, grid.cols)
        for j in range(i + 1, n):
            rj, cj = divmod(j, grid.cols)
            if abs(ri - rj) + abs(ci - cj) == 1:
                edges.add((i, j))
    return edges


class TestBuildGrid:
    def test_default_geometry(self):
        grid = build_grid(100, 125, 10, 0.5)
        assert grid.step == 5
        assert grid.cols == 19
        assert grid.rows == 24
        assert grid.n_patches == 456

    def test_origins_row_major(self):
        grid = build_grid(100, 125, 10, 0.5)
        assert grid.origin(0) == (0, 0)
        assert grid.origin(1) == (5, 0)
        assert grid.origin(19) == (0, 5)
        assert grid.origin(455) == (90, 115)
        origins = grid.origins()
        assert origins.shape == (456, 2)
        assert tuple(origins[455]) == (90, 115)

    def test_integer_stride_accepted(self):
        grid = build_grid(100, 125, 10, 0.3)
        assert grid.step == 7
        assert grid.cols == (100 - 10) // 7 + 1

    def test_fractional_stride_rejected(self):
        with pytest.raises(ValueError, match="non-integer stride"):
            build_grid(100, 125, 10, 0.45)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            build_grid(100, 125, 0, 0.5)
        with pytest.raises(ValueError):
            build_grid(8, 125, 10, 0.5)
        with pytest.raises(ValueError):
            build_grid(100, 125, 10, 1.0)
        with pytest.raises(ValueError):
            # stride rounds to zero
            build_grid(100, 125, 10, 0.99)

    def test_index_out_of_range(self):
        grid = build_grid(100, 125, 10, 0.5)
        with pytest.raises(ValueError):
            grid.origin(456)
        with pytest.raises(ValueError):
            grid.origin(-1)


class TestPatchesAndOverlap:
    def test_extract_matches_manual_slice(self):
        rng = np.random.default_rng(0)
        px = rng.random((125, 100))
        img = FaceImage(px, "a", "photo")
        grid = build_grid(100, 125, 10, 0.5)
        patch = extract_patch(img, grid, 21)
        x, y = grid.origin(21)
        np.testing.assert_array_equal(patch, px[y : y + 10, x : x + 10])
        assert patch.shape == (10, 10)

    def test_extract_checks_dimensions(self):
        img = FaceImage(np.zeros((50, 50)), "a", "photo")
        grid = build_grid(100, 125, 10, 0.5)
        with pytest.raises(ValueError, match="grid expects"):
            extract_patch(img, grid, 0)

    def test_horizontal_overlap_is_50_pixels(self):
        grid = build_grid(100, 125, 10, 0.5)
        region = overlap_region(grid, 0, 1)
        assert region.shape == (50, 2)
        expected = patch_pixel_set(grid, 0) & patch_pixel_set(grid, 1)
        assert {tuple(r) for r in region} == expected

    def test_vertical_overlap_is_50_pixels(self):
        grid = build_grid(100, 125, 10, 0.5)
        region = overlap_region(grid, 0, 19)
        assert region.shape == (50, 2)
        expected = patch_pixel_set(grid, 0) & patch_pixel_set(grid, 19)
        assert {tuple(r) for r in region} == expected

    def test_overlap_row_major_and_symmetric(self):
        grid = build_grid(100, 125, 10, 0.5)
        for i, j in [(0, 1), (0, 19), (20, 21), (20, 39)]:
            region = overlap_region(grid, i, j)
            keys = [(y, x) for x, y in region]
            assert keys == sorted(keys)
            np.testing.assert_array_equal(region, overlap_region(grid, j, i))

    def test_disjoint_patches_raise(self):
        grid = build_grid(100, 125, 10, 0.5)
        with pytest.raises(ValueError, match="do not overlap"):
            overlap_region(grid, 0, 2)


class TestAdjacency:
    def test_default_edge_count(self):
        grid = build_grid(100, 125, 10, 0.5)
        adj = adjacency(grid)
        assert adj.n_edges == 24 * 18 + 19 * 23 == 869

    def test_matches_brute_force_on_small_grid(self):
        grid = build_grid(30, 25, 10, 0.5)
        adj = adjacency(grid)
        assert {tuple(e) for e in adj.edges} == brute_force_edges(grid)
        assert all(i < j for i, j in adj.edges)

    def test_single_patch_has_no_edges(self):
        grid = build_grid(10, 10, 10, 0.5)
        assert adjacency(grid).n_edges == 0


class TestImageIO:
    def test_pgm_p5_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        px = np.rint(rng.random((12, 9)) * 255) / 255.0
        path = tmp_path / "img.pgm"
        write_pgm(path, px)
        img = load_image(path, modality="photo", subject_id="s1")
        np.testing.assert_allclose(img.pixels, px, atol=1e-12)
        assert img.image_id == "img"
        assert img.modality == "photo"
        assert img.subject_id == "s1"

    def test_pgm_write_is_deterministic(self, tmp_path):
        px = np.linspace(0, 1, 20).reshape(4, 5)
        write_pgm(tmp_path / "a.pgm", px)
        write_pgm(tmp_path / "b.pgm", px)
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()

    def test_pgm_p2_with_comments(self, tmp_path):
        text = "P2\n# a comment\n3 2\n255\n0 128 255\n64 32 16\n"
        path = tmp_path / "ascii.pgm"
        path.write_text(text)
        img = load_image(path)
        assert img.pixels.shape == (2, 3)
        # 8-bit normalization is value / 255
        assert img.pixels[0, 1] == 128 / 255
        assert img.pixels[0, 2] == 1.0

    def test_pgm_16bit_scaling(self, tmp_path):
        header = b"P5\n2 1\n65535\n"
        raster = np.array([0, 65535], dtype=">u2").tobytes()
        path = tmp_path / "deep.pgm"
        path.write_bytes(header + raster)
        img = load_image(path)
        np.testing.assert_allclose(img.pixels, [[0.0, 1.0]])

    def test_png_gray_and_color(self, tmp_path):
        from PIL import Image

        gray = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
        Image.fromarray(gray, mode="L").save(tmp_path / "g.png")
        img = load_image(tmp_path / "g.png")
        np.testing.assert_allclose(img.pixels, gray / 255.0)

        rgb = np.zeros((2, 2, 3), dtype=np.uint8)
        rgb[..., 0] = 255
        Image.fromarray(rgb, mode="RGB").save(tmp_path / "c.png")
        img = load_image(tmp_path / "c.png")
        np.testing.assert_allclose(img.pixels, np.full((2, 2), 0.299))

    def test_decode_failures(self, tmp_path):
        bad = tmp_path / "bad.pgm"
        bad.write_bytes(b"P5\n3 2\n255\n\x00\x01")
        with pytest.raises(ValueError, match="truncated"):
            load_image(bad)
        nonsense = tmp_path / "x.pgm"
        nonsense.write_bytes(b"hello world")
        with pytest.raises(ValueError, match="not a PGM"):
            load_image(nonsense)
        with pytest.raises(ValueError, match="unsupported image format"):
            load_image(tmp_path / "y.tiff")

    def test_pixel_range_enforced(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            FaceImage(np.full((2, 2), 1.5), "a", "photo")
