"""Deterministic synthetic photo/sketch benchmark generator.

Each subject is a latent appearance vector. A photo is composed from a
seeded smooth background field, an elliptical head whose eyes, brows,
nose and mouth are elliptical/rectangular structures with
latent-controlled geometry, and a textured overlay mixed from a small
bank of smooth fields shared across subjects. The sketch is a
deterministic style transform of the photo plus Gaussian pixel noise.

The shared texture bank is deliberate: a new face's local appearance
closely resembles the dictionary subjects that share its dominant
texture component, which keeps patch encodings sparse and the benchmark
informative. Generation asserts cross-modal mate consistency (computed
on the pre-noise sketch, so the guarantee is about the style transform
itself) and fails loudly when a style/noise combination would make the
benchmark meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .descriptors import describe_image
from .imagegrid import FaceImage, build_grid, write_pgm
from .manifest import Manifest, ManifestEntry, read_manifest, write_manifest

STYLES = ("identity", "edge_emphasis", "tone_inversion", "blur_contrast")

N_GEOMETRY_PARAMS = 18
N_TEXTURE_PROTOTYPES = 6
CONSISTENCY_SAMPLE = 12
CONSISTENCY_FLOOR = 0.9

__all__ = [
    "STYLES",
    "SynthSpec",
    "apply_style",
    "subject_photo",
    "modal_consistency",
    "generate",
    "generate_distractors",
]


@dataclass(frozen=True)
class SynthSpec:
    """Everything that determines a dataset, bit for bit."""

    subjects: int = 60
    width: int = 100
    height: int = 125
    seed: int = 0
    style: str = "edge_emphasis"
    noise_sigma: float = 0.025
    identity_components: int = 8

    def __post_init__(self) -> None:
        if self.subjects < 4:
            raise ValueError(f"need at least 4 subjects, got {self.subjects}")
        if self.width < 20 or self.height < 20:
            raise ValueError("images must be at least 20x20")
        if self.style not in STYLES:
            raise ValueError(f"unknown style {self.style!r}; pick one of {STYLES}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.identity_components < 1:
            raise ValueError("identity_components must be positive")


def _smooth_field(rng, height: int, width: int, cells: int) -> np.ndarray:
    """Unit-variance smooth random field from a coarse Gaussian grid."""
    coarse = rng.standard_normal((height // cells + 2, width // cells + 2))
    field = ndimage.zoom(coarse, cells, order=3)[:height, :width]
    field -= field.mean()
    std = field.std()
    return field / (std if std > 0 else 1.0)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(np.clip(-x, -60.0, 60.0)))


def _soft_ellipse(h, w, cy, cx, ry, rx, softness=1.2) -> np.ndarray:
    y = np.arange(h, dtype=float)[:, None]
    x = np.arange(w, dtype=float)[None, :]
    q = np.sqrt(((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2)
    return _sigmoid((1.0 - q) * min(ry, rx) * 4.0 / softness)


def _soft_rect(h, w, y0, y1, x0, x1, softness=1.0) -> np.ndarray:
    y = np.arange(h, dtype=float)[:, None]
    x = np.arange(w, dtype=float)[None, :]
    k = 4.0 / softness
    wy = _sigmoid((y - y0) * k) * _sigmoid((y1 - y) * k)
    wx = _sigmoid((x - x0) * k) * _sigmoid((x1 - x) * k)
    return wy * wx


def _shared_parameters(spec: SynthSpec):
    """Mixing matrices and texture bank common to every subject."""
    master = np.random.default_rng([spec.seed, 5])
    mix_geo = master.standard_normal((N_GEOMETRY_PARAMS, spec.identity_components))
    mix_geo /= np.linalg.norm(mix_geo, axis=1, keepdims=True)
    mix_tex = master.standard_normal((N_TEXTURE_PROTOTYPES, spec.identity_components))
    mix_tex /= np.linalg.norm(mix_tex, axis=1, keepdims=True)
    bank = np.stack(
        [
            _smooth_field(
                np.random.default_rng([spec.seed, 29, c]), spec.height, spec.width, 5
            )
            for c in range(N_TEXTURE_PROTOTYPES)
        ]
    )
    return mix_geo, mix_tex, bank


def subject_photo(spec: SynthSpec, stream, shared=None) -> np.ndarray:
    """Photo pixels for one latent draw; stream seeds the subject rng."""
    if shared is None:
        shared = _shared_parameters(spec)
    mix_geo, mix_tex, bank = shared
    h, w = spec.height, spec.width
    rng = np.random.default_rng(stream)
    z = rng.standard_normal(spec.identity_components)
    t = np.tanh(mix_geo @ z)
    background = _smooth_field(rng, h, w, 16)

    # Nearly-hard texture assignment: one bank field dominates, so local
    # appearance falls into a handful of shared looks and dictionary
    # encodings of unseen subjects stay sparse.
    scores = mix_tex @ z
    tex_w = np.exp(8.0 * (scores - scores.max()))
    tex_w /= tex_w.sum()
    texture = np.tensordot(tex_w, bank, axes=1)

    canvas = 0.46 + 0.025 * background
    cx = w * (0.50 + 0.020 * t[0])
    cy = h * (0.54 + 0.015 * t[1])
    face_rx = w * (0.385 + 0.030 * t[2])
    face_ry = h * (0.430 + 0.030 * t[3])
    canvas += 0.20 * (1 + 0.2 * t[15]) * _soft_ellipse(h, w, cy, cx, face_ry, face_rx)

    dark = 1 + 0.15 * t[16]
    eye_dx = w * (0.165 + 0.015 * t[4])
    eye_y = h * (0.420 + 0.012 * t[5])
    eye_rx = w * (0.052 + 0.009 * t[6])
    eye_ry = 0.62 * eye_rx
    brow_y = eye_y - h * (0.055 + 0.008 * t[7])
    brow_h = h * (0.016 + 0.005 * t[8])
    brow_w = w * (0.130 + 0.020 * t[9])
    for side in (-1.0, 1.0):
        ex = cx + side * eye_dx
        canvas -= 0.36 * dark * _soft_ellipse(h, w, eye_y, ex, eye_ry, eye_rx)
        canvas -= 0.26 * dark * _soft_rect(
            h, w, brow_y - brow_h, brow_y + brow_h, ex - brow_w / 2, ex + brow_w / 2
        )

    nose_top = eye_y + 0.03 * h
    nose_len = h * (0.155 + 0.020 * t[10])
    nose_w = w * (0.032 + 0.007 * t[11])
    canvas -= 0.12 * dark * _soft_rect(
        h, w, nose_top, nose_top + nose_len, cx - nose_w, cx + nose_w
    )
    canvas -= 0.22 * dark * _soft_rect(
        h,
        w,
        nose_top + nose_len,
        nose_top + nose_len + 0.012 * h,
        cx - 2.2 * nose_w,
        cx + 2.2 * nose_w,
    )

    mouth_y = h * (0.740 + 0.015 * t[12])
    mouth_w = w * (0.115 + 0.015 * t[13])
    mouth_h = h * (0.014 + 0.004 * t[14])
    canvas -= 0.32 * dark * _soft_rect(
        h, w, mouth_y - mouth_h, mouth_y + mouth_h, cx - mouth_w, cx + mouth_w
    )

    canvas += 0.08 * (1 + 0.3 * t[17]) * texture
    return np.clip(canvas, 0.0, 1.0)


def _style_edge_emphasis(pixels: np.ndarray) -> np.ndarray:
    return np.clip(pixels + 1.5 * (pixels - ndimage.gaussian_filter(pixels, 2.0)), 0.0, 1.0)


def _style_blur_contrast(pixels: np.ndarray) -> np.ndarray:
    blurred = ndimage.gaussian_filter(pixels, 1.2)
    return np.clip(0.5 + 1.6 * (blurred - 0.5), 0.0, 1.0)


_STYLE_FUNCS = {
    "identity": lambda p: p,
    "edge_emphasis": _style_edge_emphasis,
    "tone_inversion": lambda p: 1.0 - p,
    "blur_contrast": _style_blur_contrast,
}


def apply_style(pixels: np.ndarray, style: str) -> np.ndarray:
    if style not in _STYLE_FUNCS:
        raise ValueError(f"unknown style {style!r}; pick one of {STYLES}")
    return _STYLE_FUNCS[style](np.asarray(pixels, dtype=float))


def modal_consistency(photos, sketches, width: int, height: int) -> float:
    """Fraction of patch locations where the median same-subject
    photo/sketch descriptor distance beats the median across-subject
    distance. The benchmark is only meaningful when this is high."""
    count = min(CONSISTENCY_SAMPLE, len(photos))
    picks = sorted(set(np.linspace(0, len(photos) - 1, count).astype(int)))
    grid = build_grid(width, height, 10, 0.5)
    p_banks = np.stack(
        [
            describe_image(FaceImage(photos[i], f"p{i}", "photo"), grid, "hog").vectors
            for i in picks
        ]
    )
    s_banks = np.stack(
        [
            describe_image(FaceImage(sketches[i], f"s{i}", "sketch"), grid, "hog").vectors
            for i in picks
        ]
    )
    same = np.linalg.norm(p_banks - s_banks, axis=1)
    cross = []
    for a in range(len(picks)):
        dist = np.linalg.norm(p_banks[a][None, :, :] - s_banks, axis=1)
        cross.append(np.delete(dist, a, axis=0))
    cross = np.concatenate(cross, axis=0)
    ok = np.median(same, axis=0) < np.median(cross, axis=0)
    return float(ok.mean())


def _role_split(n: int):
    chunks = np.array_split(np.arange(n), 3)
    return [list(map(int, c)) for c in chunks]


def generate(spec: SynthSpec, out_dir) -> Manifest:
    """Write the coupled photo/sketch dataset plus its manifest.

    Subjects are split into near-equal thirds: dictionary, training and
    test. Test sketches become probes and test photos the gallery.
    Returns the manifest (also written to ``out_dir/manifest.csv``).
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    shared = _shared_parameters(spec)

    photos = []
    cleans = []
    sketches = []
    for idx in range(spec.subjects):
        photo = subject_photo(spec, [spec.seed, 11, idx], shared)
        clean = apply_style(photo, spec.style)
        noise = np.random.default_rng([spec.seed, 463, idx]).standard_normal(
            photo.shape
        )
        sketches.append(np.clip(clean + spec.noise_sigma * noise, 0.0, 1.0))
        photos.append(photo)
        cleans.append(clean)

    fraction = modal_consistency(photos, cleans, spec.width, spec.height)
    if fraction < CONSISTENCY_FLOOR:
        raise RuntimeError(
            f"cross-modal consistency holds at only {fraction:.1%} of patch "
            f"locations (needs {CONSISTENCY_FLOOR:.0%}); the style makes "
            f"mates unrecognizable"
        )

    rep_ids, train_ids, test_ids = _role_split(spec.subjects)
    entries = []
    for idx in range(spec.subjects):
        sid = f"s{idx:03d}"
        photo_rel = f"images/{sid}_photo.pgm"
        sketch_rel = f"images/{sid}_sketch.pgm"
        write_pgm(out / photo_rel, photos[idx])
        write_pgm(out / sketch_rel, sketches[idx])
        if idx in rep_ids:
            photo_role = sketch_role = "representation"
        elif idx in train_ids:
            photo_role = sketch_role = "train"
        else:
            photo_role, sketch_role = "test-gallery", "test-probe"
        entries.append(ManifestEntry(sid, "photo", photo_rel, photo_role))
        entries.append(ManifestEntry(sid, "sketch", sketch_rel, sketch_role))

    write_manifest(out / "manifest.csv", Manifest(entries=tuple(entries)))
    # Re-read so the returned entries carry resolvable paths while the
    # file on disk keeps relative ones (byte-identical across runs).
    return read_manifest(out / "manifest.csv")


def generate_distractors(spec: SynthSpec, count: int, out_dir) -> Manifest:
    """Write `count` extra gallery-only photos of fresh subjects and
    return their manifest (also written to ``out_dir/distractors.csv``)."""
    if count < 1:
        raise ValueError("need at least one distractor")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    shared = _shared_parameters(spec)
    entries = []
    for idx in range(count):
        sid = f"x{idx:04d}"
        rel = f"images/{sid}_photo.pgm"
        photo = subject_photo(spec, [spec.seed, 7103, idx], shared)
        write_pgm(out / rel, photo)
        entries.append(ManifestEntry(sid, "photo", rel, "gallery-distractor"))
    write_manifest(out / "distractors.csv", Manifest(entries=tuple(entries)))
    return read_manifest(out / "distractors.csv")
