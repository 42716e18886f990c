"""Command-line front end: synth, encode, train, eval, sweep.

Exit codes: 0 success, 1 usage error, 2 data error (missing or invalid
inputs), 3 numeric failure (non-converged solves, degenerate data).
The cache directory comes from --cache, the HFMATCH_CACHE environment
variable, or a `cache/` directory next to the manifest, in that order.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import discriminant, matcher, pipeline
from .container import atomic_write_text
from .graphrep import EncodingError, load_code
from .manifest import read_manifest
from .pipeline import (
    BASELINE_SCHEME,
    FUSED_SCHEMES,
    PipelineConfig,
    config_from_text,
)
from .synthdata import STYLES, SynthSpec, generate, generate_distractors

__all__ = ["main"]

SWEEP_PARAMETERS = {"K_c": "k_c", "K_r": "k_r", "K_l": "k_l", "K": "k"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="hfmatch", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--subjects", type=int, default=60)
    p.add_argument("--width", type=int, default=100)
    p.add_argument("--height", type=int, default=125)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--style", choices=STYLES, default="edge_emphasis")
    p.add_argument("--noise-sigma", type=float, default=0.025)
    p.add_argument("--identity-components", type=int, default=8)
    p.add_argument("--distractors", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="compute and cache sparse codes")
    _common_flags(p)
    p.add_argument("--roles", default="train,test-probe,test-gallery,gallery-distractor")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="fit projection models from cached codes")
    _common_flags(p)
    p.add_argument("--out", required=True, help="model output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank probes against the gallery")
    _common_flags(p)
    p.add_argument("--models", help="directory written by `hfmatch train`")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--direct-feature", action="store_true",
                   help="match raw descriptor banks instead of sparse codes")
    p.add_argument("--folds", type=int, default=0,
                   help="cross-validate over this many folds instead of the fixed split")
    p.add_argument("--svg", action="store_true", help="also write a CMC plot")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="rank-1 accuracy versus one parameter")
    _common_flags(p)
    p.add_argument("--parameter", required=True, choices=sorted(SWEEP_PARAMETERS))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--folds", type=int, default=0)
    p.set_defaults(func=cmd_sweep)
    return parser


def _common_flags(p) -> None:
    p.add_argument("--manifest", required=True, help="manifest CSV path")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--cache", help="encoding cache directory")
    p.add_argument("--mode", choices=pipeline.MODES)
    p.add_argument("--K", type=int, dest="top_k", help="neighbors kept in top_K mode")
    p.add_argument("--extend-gallery", help="manifest of gallery-distractor images")


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        config = config_from_text(Path(args.config).read_text())
    else:
        config = PipelineConfig()
    if getattr(args, "mode", None):
        config = replace(config, mode=args.mode)
    if getattr(args, "top_k", None) is not None:
        config = replace(config, k=args.top_k)
    return config


def _cache_dir(args, manifest_path) -> Path:
    if getattr(args, "cache", None):
        return Path(args.cache)
    env = os.environ.get("HFMATCH_CACHE")
    if env:
        return Path(env)
    return Path(manifest_path).parent / "cache"


def _load_manifest(args):
    manifest = read_manifest(args.manifest)
    if getattr(args, "extend_gallery", None):
        manifest = manifest.merged_with(read_manifest(args.extend_gallery))
    return manifest


def _load_cached_codes(manifest, config, cache_dir, roles, modes):
    """Load every needed code from the cache; any miss is a data error."""
    context = pipeline._encode_context_digest(manifest, config)
    codes = {}
    missing = []
    for e in pipeline._sorted_entries(manifest.select(*roles)):
        for kind in config.kinds:
            for mode in modes:
                path = pipeline._code_cache_path(
                    cache_dir, context, e.path, kind, mode, config.k
                )
                key = (Path(e.path).stem, kind, mode)
                if path.exists():
                    codes[key] = load_code(path)
                else:
                    missing.append(key)
    if missing:
        raise ValueError(
            f"{len(missing)} encodings missing from cache {cache_dir} "
            f"(first: {missing[0]}); run `hfmatch encode` first"
        )
    return codes


def cmd_synth(args) -> int:
    spec = SynthSpec(
        subjects=args.subjects,
        width=args.width,
        height=args.height,
        seed=args.seed,
        style=args.style,
        noise_sigma=args.noise_sigma,
        identity_components=args.identity_components,
    )
    out = Path(args.out)
    manifest = generate(spec, out)
    print(f"wrote {len(manifest.entries)} images under {out} and {out / 'manifest.csv'}")
    if args.distractors:
        extra = generate_distractors(spec, args.distractors, out)
        print(f"wrote {len(extra.entries)} distractors and {out / 'distractors.csv'}")
    record = {f: getattr(spec, f) for f in spec.__dataclass_fields__}
    record["manifest_sha256"] = pipeline._file_digest(out / "manifest.csv")
    atomic_write_text(out / "run.json", json.dumps(record, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_encode(args) -> int:
    manifest = _load_manifest(args)
    config = _load_config(args)
    cache = _cache_dir(args, args.manifest)
    roles = tuple(r.strip() for r in args.roles.split(",") if r.strip())
    present = tuple(r for r in roles if manifest.select(r))
    codes, failures = pipeline.encode_images(
        manifest, config, cache_dir=cache, roles=present, modes=(config.mode,)
    )
    for image_id, kind, mode, message in failures:
        print(f"FAILED {image_id} [{kind}/{mode}]: {message}", file=sys.stderr)
    print(f"encoded {len(codes)} codes into {cache} ({len(failures)} failures)")
    pipeline.write_run_record(
        cache / "run.json", config, args.manifest, extra={"stage": "encode"}
    )
    return 3 if failures else 0


def cmd_train(args) -> int:
    manifest = _load_manifest(args)
    config = _load_config(args)
    cache = _cache_dir(args, args.manifest)
    codes = _load_cached_codes(manifest, config, cache, ("train",), (config.mode,))
    models = pipeline.fit_models(manifest, codes, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for (scheme, kind), model in sorted(models.items()):
        discriminant.save_model(out / f"model_{scheme}_{kind}.hfm", model)
    print(f"wrote {len(models)} models into {out}")
    pipeline.write_run_record(
        out / "run.json", config, args.manifest, extra={"stage": "train"}
    )
    return 0


def _load_models(models_dir, config):
    models = {}
    for scheme in FUSED_SCHEMES + (BASELINE_SCHEME,):
        for kind in config.kinds:
            path = Path(models_dir) / f"model_{scheme}_{kind}.hfm"
            if path.exists():
                models[(scheme, kind)] = discriminant.load_model(path)
    if not models:
        raise ValueError(f"no model files found in {models_dir}")
    for scheme in FUSED_SCHEMES:
        for kind in config.kinds:
            if (scheme, kind) not in models:
                raise ValueError(f"missing model for scheme {scheme!r} kind {kind!r}")
    return models


def _write_eval_outputs(out, result, svg, label="") -> None:
    tag = f"_{label}" if label else ""
    matcher.save_scores_csv(out / f"scores{tag}.csv", result.final)
    matcher.save_cmc_csv(out / f"cmc{tag}.csv", result.curve)
    lines = ["rank,accuracy"]
    for rank, accuracy in sorted(result.rank_table().items()):
        lines.append(f"{rank},{accuracy!r}")
    atomic_write_text(out / f"rank_table{tag}.csv", "\n".join(lines) + "\n")
    if svg:
        matcher.save_cmc_svg(out / f"cmc{tag}.svg", result.curve, title="CMC")


def cmd_eval(args) -> int:
    manifest = _load_manifest(args)
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.direct_feature:
        result = pipeline.direct_feature_evaluate(manifest, config)
        _write_eval_outputs(out, result, args.svg, label="direct")
        print(f"direct-feature rank table: {result.rank_table()}")
        pipeline.write_run_record(
            out / "run.json", config, args.manifest, extra={"stage": "eval-direct"}
        )
        return 0

    cache = _cache_dir(args, args.manifest)
    eval_roles = ["test-probe", "test-gallery"]
    if manifest.select("gallery-distractor"):
        eval_roles.append("gallery-distractor")

    if args.folds:
        codes = _load_cached_codes(
            manifest, config, cache, ("train", "test-probe", "test-gallery"),
            (config.mode,),
        )
        results = pipeline.cross_validate(manifest, codes, config, folds=args.folds)
        rank1 = [r.curve.at(1) for r in results]
        for i, r in enumerate(results):
            matcher.save_cmc_csv(out / f"cmc_fold{i}.csv", r.curve)
        lines = ["fold,rank1"] + [f"{i},{v!r}" for i, v in enumerate(rank1)]
        lines.append(f"mean,{float(np.mean(rank1))!r}")
        lines.append(f"std,{float(np.std(rank1))!r}")
        atomic_write_text(out / "folds.csv", "\n".join(lines) + "\n")
        print(f"rank-1 per fold: {[round(v, 4) for v in rank1]}")
        pipeline.write_run_record(
            out / "run.json", config, args.manifest,
            extra={"stage": "eval-folds", "folds": args.folds},
        )
        return 0

    if not args.models:
        raise ValueError("eval needs --models (or --direct-feature / --folds)")
    models = _load_models(args.models, config)
    codes = _load_cached_codes(manifest, config, cache, tuple(eval_roles), (config.mode,))
    result = pipeline.evaluate(manifest, codes, models, config)
    _write_eval_outputs(out, result, args.svg)
    print(f"rank table: {result.rank_table()}")
    pipeline.write_run_record(
        out / "run.json", config, args.manifest, extra={"stage": "eval"}
    )
    return 0


def cmd_sweep(args) -> int:
    manifest = _load_manifest(args)
    config = _load_config(args)
    cache = _cache_dir(args, args.manifest)
    field = SWEEP_PARAMETERS[args.parameter]
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise _UsageError(f"--values must be comma-separated integers: {exc}") from None
    if not values:
        raise _UsageError("--values is empty")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        variant = replace(config, **{field: value})
        if field == "k":
            variant = replace(variant, mode="top_K")
        codes, failures = pipeline.encode_images(
            manifest, variant, cache_dir=cache,
            roles=("train", "test-probe", "test-gallery"), modes=(variant.mode,),
        )
        if failures:
            raise RuntimeError(
                f"{len(failures)} encodings failed during sweep at {args.parameter}={value}"
            )
        if args.folds:
            results = pipeline.cross_validate(manifest, codes, variant, folds=args.folds)
            rank1 = [r.curve.at(1) for r in results]
            mean, std = float(np.mean(rank1)), float(np.std(rank1))
        else:
            models = pipeline.fit_models(
                manifest, codes, variant, schemes=FUSED_SCHEMES
            )
            result = pipeline.evaluate(manifest, codes, models, variant)
            mean, std = result.curve.at(1), 0.0
        rows.append((value, mean, std))
        print(f"{args.parameter}={value}: rank-1 {mean:.4f} (std {std:.4f})")

    lines = [f"{args.parameter},rank1_mean,rank1_std"]
    for value, mean, std in rows:
        lines.append(f"{value},{mean!r},{std!r}")
    atomic_write_text(out / "sweep.csv", "\n".join(lines) + "\n")
    pipeline.write_run_record(
        out / "run.json", config, args.manifest,
        extra={"stage": "sweep", "parameter": args.parameter},
    )
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    if not getattr(args, "func", None):
        parser.print_help()
        return 1
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (EncodingError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
