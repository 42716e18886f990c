"""End-to-end orchestration: config, caching and the encode/train/eval
stages that the command line exposes.

All stages are deterministic functions of (manifest bytes, config,
seeds). Encodings are cached under a content-addressed key so parameter
sweeps that only change the training or evaluation side reuse them.
"""

from __future__ import annotations

import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

from . import discriminant, matcher, partition
from .container import atomic_write_text
from .descriptors import KINDS, describe_image
from .graphrep import (
    EncodeConfig,
    EncodingError,
    RepresentationDataset,
    encode,
    find_related,
    load_code,
    save_code,
)
from .imagegrid import build_grid, load_image
from .manifest import Manifest
from .qpsolver import SolverConfig

MODES = ("all_M", "top_K")
FUSED_SCHEMES = ("column", "row", "learned")
BASELINE_SCHEME = "rectangle"
RANK_TABLE = (1, 5, 10, 20, 50)

__all__ = [
    "PipelineConfig",
    "EvalResult",
    "config_to_text",
    "config_from_text",
    "load_images",
    "build_representation",
    "encode_images",
    "fit_models",
    "evaluate",
    "direct_feature_evaluate",
    "cross_validate",
    "write_run_record",
]


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the pipeline, with the documented defaults."""

    width: int = 100
    height: int = 125
    patch_size: int = 10
    overlap_ratio: float = 0.5
    search_region: int = 16
    alpha: float = 0.25
    kinds: tuple = ("sift_like", "hog")
    mode: str = "all_M"
    k: int = 5
    k_c: int = 4
    k_r: int = 5
    k_l: int = 9
    variance_keep: float = 0.99
    per_modality: bool = False
    max_sweeps: int = 200
    rel_tol: float = 1e-7
    block_inner_iters: int = 12
    kkt_tol: float = 0.0
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.kinds:
            raise ValueError("need at least one descriptor kind")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise ValueError(f"unknown descriptor kinds {bad}; valid: {KINDS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")

    def grid(self):
        return build_grid(self.width, self.height, self.patch_size, self.overlap_ratio)

    def solver(self) -> SolverConfig:
        return SolverConfig(
            max_sweeps=self.max_sweeps,
            rel_tol=self.rel_tol,
            block_inner_iters=self.block_inner_iters,
            kkt_tol=self.kkt_tol if self.kkt_tol > 0 else None,
            seed=self.seed,
        )

    def encoder(self, kind: str, mode: str | None = None) -> EncodeConfig:
        return EncodeConfig(
            kind=kind,
            mode=mode or self.mode,
            k=self.k,
            search_region=self.search_region,
            alpha=self.alpha,
            solver=self.solver(),
        )


_CONFIG_DOC = """# pipeline configuration: key=value per line, '#' starts a comment
# kinds is comma-separated; mode is all_M or top_K; kkt_tol<=0 disables
# the stationarity check
"""


def config_to_text(config: PipelineConfig) -> str:
    lines = [_CONFIG_DOC.rstrip()]
    for f in fields(PipelineConfig):
        value = getattr(config, f.name)
        if f.name == "kinds":
            value = ",".join(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> PipelineConfig:
    known = {f.name: f for f in fields(PipelineConfig)}
    overrides = {}
    for number, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {number}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"config line {number}: unknown key {key!r}")
        overrides[key] = _parse_config_value(key, value)
    return PipelineConfig(**overrides)


def _parse_config_value(key: str, value: str):
    if key == "kinds":
        return tuple(part.strip() for part in value.split(",") if part.strip())
    if key == "mode":
        return value
    if key == "per_modality":
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"per_modality must be true/false, got {value!r}")
    if key in ("overlap_ratio", "alpha", "variance_keep", "rel_tol", "kkt_tol"):
        return float(value)
    return int(value)


def _sorted_entries(entries):
    return sorted(entries, key=lambda e: (e.subject_id, e.modality, e.path))


def load_images(manifest: Manifest, *roles: str) -> list:
    """FaceImages for the given roles (all roles when none given), in a
    deterministic (subject, modality) order. Image ids are path stems."""
    entries = manifest.select(*roles) if roles else manifest.entries
    images = []
    for e in _sorted_entries(entries):
        images.append(
            load_image(
                e.path,
                image_id=Path(e.path).stem,
                modality=e.modality,
                subject_id=e.subject_id,
            )
        )
    return images


def build_representation(manifest: Manifest, config: PipelineConfig) -> RepresentationDataset:
    entries = manifest.select("representation")
    if not entries:
        raise ValueError("manifest has no representation entries")
    by_modality: dict[str, list] = {}
    for e in _sorted_entries(entries):
        by_modality.setdefault(e.modality, []).append(
            load_image(
                e.path,
                image_id=Path(e.path).stem,
                modality=e.modality,
                subject_id=e.subject_id,
            )
        )
    return RepresentationDataset(by_modality, config.grid())


def _file_digest(path, _cache={}) -> str:
    path = str(path)
    if path not in _cache:
        _cache[path] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return _cache[path]


def _encode_context_digest(manifest: Manifest, config: PipelineConfig) -> str:
    """Hash of everything that changes what an encoding means: the
    representation image bytes plus the geometry/energy/solver knobs."""
    h = hashlib.sha256()
    for e in _sorted_entries(manifest.select("representation")):
        h.update(e.subject_id.encode())
        h.update(e.modality.encode())
        h.update(_file_digest(e.path).encode())
    for name in (
        "width",
        "height",
        "patch_size",
        "overlap_ratio",
        "search_region",
        "alpha",
        "max_sweeps",
        "rel_tol",
        "block_inner_iters",
        "kkt_tol",
        "seed",
    ):
        h.update(f"{name}={getattr(config, name)};".encode())
    return h.hexdigest()


def _code_cache_path(cache_dir, context: str, image_path, kind: str, mode: str, k: int):
    tail = f"{mode}" if mode == "all_M" else f"{mode}{k}"
    key = hashlib.sha256(
        f"{context}:{_file_digest(image_path)}:{kind}:{tail}".encode()
    ).hexdigest()
    return Path(cache_dir) / f"{key}.code"


def encode_images(
    manifest: Manifest,
    config: PipelineConfig,
    cache_dir=None,
    roles=("train", "test-probe", "test-gallery", "gallery-distractor"),
    modes=None,
):
    """Sparse codes for every (selected image, kind, mode).

    Returns (codes, failures): codes maps (image_id, kind, mode) to a
    SparseFaceCode; failures lists (image_id, kind, mode, message) for
    images whose solve did not converge. The descriptor bank and related
    sets are shared across modes of one image, which is what makes
    top_K sweeps cheap next to the all_M baseline.
    """
    modes = tuple(modes) if modes else (config.mode,)
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
    rep = build_representation(manifest, config)
    entries = [e for e in _sorted_entries(manifest.select(*roles))]
    context = _encode_context_digest(manifest, config)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)

    codes: dict = {}
    failures: list = []

    def work(entry):
        out = {}
        errors = []
        image = None
        for kind in config.kinds:
            bank = None
            related = None
            for mode in modes:
                cache_path = None
                if cache_dir is not None:
                    cache_path = _code_cache_path(
                        cache_dir, context, entry.path, kind, mode, config.k
                    )
                    if cache_path.exists():
                        out[(Path(entry.path).stem, kind, mode)] = load_code(cache_path)
                        continue
                if image is None:
                    image = load_image(
                        entry.path,
                        image_id=Path(entry.path).stem,
                        modality=entry.modality,
                        subject_id=entry.subject_id,
                    )
                if bank is None:
                    bank = describe_image(image, rep.grid, kind)
                    related = find_related(bank, rep, image.modality, config.search_region)
                try:
                    code = encode(
                        image,
                        rep,
                        config.encoder(kind, mode),
                        probe_bank=bank,
                        related=related,
                    )
                except EncodingError as exc:
                    errors.append((image.image_id, kind, mode, str(exc)))
                    continue
                out[(image.image_id, kind, mode)] = code
                if cache_path is not None:
                    save_code(cache_path, code)
        return out, errors

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, entries))
    else:
        results = [work(e) for e in entries]
    for out, errors in results:
        codes.update(out)
        failures.extend(errors)
    return codes, failures


def _codes_for(manifest, codes, config, roles, kind, mode):
    picked = []
    for e in _sorted_entries(manifest.select(*roles)):
        key = (Path(e.path).stem, kind, mode)
        if key not in codes:
            raise ValueError(f"missing encoding for {key}; run the encode stage first")
        picked.append(codes[key])
    return picked


def fit_models(
    manifest: Manifest,
    codes: dict,
    config: PipelineConfig,
    schemes=FUSED_SCHEMES + (BASELINE_SCHEME,),
    mode: str | None = None,
):
    """Train one projection model per (scheme, kind) on the train-role
    codes. The learned scheme clusters the train descriptor banks of its
    kind; the others are fixed by the grid."""
    mode = mode or config.mode
    grid = config.grid()
    models = {}
    bank_cache: dict[str, list] = {}
    for kind in config.kinds:
        train_codes = _codes_for(manifest, codes, config, ("train",), kind, mode)
        for scheme_name in schemes:
            if scheme_name == "column":
                scheme = partition.column_partition(grid, config.k_c)
            elif scheme_name == "row":
                scheme = partition.row_partition(grid, config.k_r)
            elif scheme_name == "rectangle":
                scheme = partition.rectangle_partition(grid)
            elif scheme_name == "learned":
                if kind not in bank_cache:
                    bank_cache[kind] = [
                        describe_image(img, grid, kind)
                        for img in load_images(manifest, "train")
                    ]
                scheme = partition.learned_partition(
                    bank_cache[kind], config.k_l, seed=config.seed
                )
            else:
                raise ValueError(f"unknown scheme {scheme_name!r}")
            models[(scheme_name, kind)] = discriminant.train_models(
                train_codes,
                scheme,
                variance_keep=config.variance_keep,
                per_modality=config.per_modality,
            )
    return models


@dataclass(frozen=True)
class EvalResult:
    """Normalized per-(scheme, kind) matrices plus the fused rankings."""

    matrices: dict
    kind_fused: dict
    final: matcher.ScoreMatrix
    curve: matcher.CmcCurve
    ranks: dict
    mate_map: dict

    def rank_table(self) -> dict:
        table = {}
        for r in RANK_TABLE:
            if r <= len(self.final.gallery_ids):
                table[r] = self.curve.at(r)
        return table

    def scheme_curve(self, scheme: str) -> matcher.CmcCurve:
        """Single-partition system: that scheme's matrices fused over kinds."""
        mats = [m for (s, _), m in sorted(self.matrices.items()) if s == scheme]
        if not mats:
            raise ValueError(f"no matrices for scheme {scheme!r}")
        fused = matcher.min_max_normalize(matcher.fuse(mats))
        curve, _ = matcher.rank_and_cmc(fused, self.mate_map)
        return curve


def _project_features(codes, model):
    return [discriminant.project(code, model) for code in codes]


def _evaluate_matrices(matrices: dict, config: PipelineConfig, mate_map: dict) -> EvalResult:
    kind_fused = {}
    for kind in config.kinds:
        per_kind = [m for (_, k), m in sorted(matrices.items()) if k == kind]
        kind_fused[kind] = matcher.min_max_normalize(matcher.fuse(per_kind))
    final = matcher.fuse([kind_fused[k] for k in config.kinds])
    curve, ranks = matcher.rank_and_cmc(final, mate_map)
    return EvalResult(
        matrices=matrices,
        kind_fused=kind_fused,
        final=final,
        curve=curve,
        ranks=ranks,
        mate_map=mate_map,
    )


def evaluate(
    manifest: Manifest,
    codes: dict,
    models: dict,
    config: PipelineConfig,
    schemes=FUSED_SCHEMES,
    mode: str | None = None,
) -> EvalResult:
    """Score test probes against the (possibly distractor-extended)
    gallery: normalize each (scheme, kind) cosine matrix, sum over
    schemes, renormalize, sum over kinds, then rank."""
    mode = mode or config.mode
    gallery_roles = ("test-gallery",)
    if manifest.select("gallery-distractor"):
        gallery_roles = ("test-gallery", "gallery-distractor")
    matrices = {}
    for kind in config.kinds:
        probe_codes = _codes_for(manifest, codes, config, ("test-probe",), kind, mode)
        gallery_codes = _codes_for(manifest, codes, config, gallery_roles, kind, mode)
        for scheme_name in schemes:
            model = models[(scheme_name, kind)]
            probe_feats = _project_features(probe_codes, model)
            gallery_feats = _project_features(gallery_codes, model)
            raw = matcher.score_matrix(
                probe_feats, gallery_feats, provenance=f"{scheme_name}/{kind}"
            )
            matrices[(scheme_name, kind)] = matcher.min_max_normalize(raw)
    mate_map = {sid: sid for sid in manifest.subjects("test-probe")}
    return _evaluate_matrices(matrices, config, mate_map)


def direct_feature_evaluate(
    manifest: Manifest, config: PipelineConfig, schemes=FUSED_SCHEMES
) -> EvalResult:
    """Baseline that matches raw descriptor banks instead of codes,
    through the same partition/projection/fusion machinery."""
    grid = config.grid()
    gallery_roles = ("test-gallery",)
    if manifest.select("gallery-distractor"):
        gallery_roles = ("test-gallery", "gallery-distractor")
    train_images = load_images(manifest, "train")
    probe_images = load_images(manifest, "test-probe")
    gallery_images = load_images(manifest, *gallery_roles)
    matrices = {}
    for kind in config.kinds:
        train_banks = [describe_image(img, grid, kind) for img in train_images]
        probe_banks = [describe_image(img, grid, kind) for img in probe_images]
        gallery_banks = [describe_image(img, grid, kind) for img in gallery_images]
        for scheme_name in schemes:
            if scheme_name == "column":
                scheme = partition.column_partition(grid, config.k_c)
            elif scheme_name == "row":
                scheme = partition.row_partition(grid, config.k_r)
            elif scheme_name == "rectangle":
                scheme = partition.rectangle_partition(grid)
            else:
                scheme = partition.learned_partition(
                    train_banks, config.k_l, seed=config.seed
                )
            model = discriminant.train_models(
                train_banks,
                scheme,
                variance_keep=config.variance_keep,
                per_modality=config.per_modality,
            )
            probe_feats = _project_features(probe_banks, model)
            gallery_feats = _project_features(gallery_banks, model)
            raw = matcher.score_matrix(
                probe_feats, gallery_feats, provenance=f"direct/{scheme_name}/{kind}"
            )
            matrices[(scheme_name, kind)] = matcher.min_max_normalize(raw)
    mate_map = {sid: sid for sid in manifest.subjects("test-probe")}
    return _evaluate_matrices(matrices, config, mate_map)


def cross_validate(
    manifest: Manifest,
    codes: dict,
    config: PipelineConfig,
    folds: int,
    seed: int | None = None,
    schemes=FUSED_SCHEMES,
    mode: str | None = None,
):
    """Re-split the non-dictionary subjects into train/test folds and
    evaluate each: returns the list of per-fold EvalResults. Every
    subject has one image per modality among the train/test roles, so
    folds can cut across the manifest's own split."""
    mode = mode or config.mode
    seed = config.seed if seed is None else seed
    pool_roles = ("train", "test-probe", "test-gallery")
    by_subject: dict[str, dict] = {}
    for e in _sorted_entries(manifest.select(*pool_roles)):
        by_subject.setdefault(e.subject_id, {})[e.modality] = Path(e.path).stem
    for sid, mods in sorted(by_subject.items()):
        if set(mods) != {"photo", "sketch"}:
            raise ValueError(
                f"cross-validation needs one photo and one sketch per "
                f"subject; {sid!r} has {sorted(mods)}"
            )
    fold_list = matcher.make_folds(sorted(by_subject), folds, seed=seed)
    grid = config.grid()
    results = []
    for train_ids, test_ids in fold_list:

        def code_list(sids, modality, kind):
            picked = []
            for sid in sids:
                key = (by_subject[sid][modality], kind, mode)
                if key not in codes:
                    raise ValueError(f"missing encoding for {key}")
                picked.append(codes[key])
            return picked

        matrices = {}
        for kind in config.kinds:
            train_codes = [
                code
                for sid in train_ids
                for code in (
                    code_list([sid], "photo", kind)[0],
                    code_list([sid], "sketch", kind)[0],
                )
            ]
            for scheme_name in schemes:
                if scheme_name == "column":
                    scheme = partition.column_partition(grid, config.k_c)
                elif scheme_name == "row":
                    scheme = partition.row_partition(grid, config.k_r)
                elif scheme_name == "rectangle":
                    scheme = partition.rectangle_partition(grid)
                else:
                    banks = [
                        describe_image(img, grid, kind)
                        for img in load_images(manifest, *pool_roles)
                        if img.subject_id in set(train_ids)
                    ]
                    scheme = partition.learned_partition(banks, config.k_l, seed=seed)
                model = discriminant.train_models(
                    train_codes,
                    scheme,
                    variance_keep=config.variance_keep,
                    per_modality=config.per_modality,
                )
                probe_feats = _project_features(
                    code_list(test_ids, "sketch", kind), model
                )
                gallery_feats = _project_features(
                    code_list(test_ids, "photo", kind), model
                )
                raw = matcher.score_matrix(
                    probe_feats, gallery_feats, provenance=f"{scheme_name}/{kind}"
                )
                matrices[(scheme_name, kind)] = matcher.min_max_normalize(raw)
        mate_map = {sid: sid for sid in test_ids}
        results.append(_evaluate_matrices(matrices, config, mate_map))
    return results


def write_run_record(path, config: PipelineConfig, manifest_path, extra=None) -> None:
    """Reproducibility record written next to every output."""
    import numpy
    import scipy

    from . import __version__

    record = {
        "config_sha256": hashlib.sha256(config_to_text(config).encode()).hexdigest(),
        "manifest_sha256": _file_digest(manifest_path),
        "seed": config.seed,
        "versions": {
            "python": sys.version.split()[0],
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "hfmatch": __version__,
        },
    }
    if extra:
        record.update(extra)
    atomic_write_text(path, json.dumps(record, indent=2, sort_keys=True) + "\n")
