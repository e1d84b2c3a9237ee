"""Batch CLI over the retrieval pipeline.

Exit codes: 0 on success, 1 when some shapes failed (partial results were
still written), 2 for invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .pipeline import (
    ConfigError,
    compute_distances,
    encode_views,
    evaluate_model,
    extract_features,
    fit_codebooks,
    load_config,
    load_manifest,
    render_pr_curve,
    save_distances,
    train_model,
    write_report,
)
from .synth import DEFAULT_SCALE, make_synthetic_dataset

logger = logging.getLogger("shapemetric")


def _common_args(parser):
    parser.add_argument("--manifest", required=True, help="dataset manifest CSV")
    parser.add_argument("--cache", required=True, help="cache directory")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="split seed (eval.seed)")
    parser.add_argument("--split", type=float, help="train fraction (eval.split)")
    parser.add_argument("--protocol", choices=("heldout", "full"),
                        help="evaluation protocol (eval.protocol)")
    parser.add_argument("--eig-k", type=int, dest="eig_k",
                        help="number of eigenpairs (spectral.k)")
    parser.add_argument("--codebook-size", type=int, help="words per codebook")
    parser.add_argument("--codebook-seed", type=int)
    parser.add_argument("--lambda", type=float, dest="lam",
                        help="HSIC coupling weight (train.lambda)")
    parser.add_argument("--d", type=int, help="projected dimension (train.d)")
    parser.add_argument("--k1", type=int, help="intrinsic graph neighbors")
    parser.add_argument("--k2", type=int, help="penalty graph pairs per class")
    parser.add_argument("--workers", type=int, help="feature-extraction workers")


def _overrides(args) -> dict:
    return {
        "eval.seed": args.seed,
        "eval.split": args.split,
        "eval.protocol": args.protocol,
        "spectral.k": args.eig_k,
        "codebook.size": args.codebook_size,
        "codebook.seed": args.codebook_seed,
        "train.lambda": args.lam,
        "train.d": args.d,
        "train.k1": args.k1,
        "train.k2": args.k2,
        "workers": args.workers,
    }


def _load(args):
    config = load_config(args.config, overrides=_overrides(args))
    manifest = load_manifest(args.manifest)
    return manifest, config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapemetric",
        description="Spectral descriptors, multi-view metric learning, and "
                    "retrieval evaluation for triangle meshes.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=DEFAULT_SCALE)

    for name, descr in [
        ("features", "extract and cache spectra and descriptors"),
        ("codebook", "fit codebooks on the training split"),
        ("encode", "build standardized feature views"),
        ("train", "train the multi-view metric model"),
        ("retrieve", "write the fused distance matrix"),
        ("eval", "evaluate retrieval and write report artifacts"),
    ]:
        p = sub.add_parser(name, help=descr)
        _common_args(p)
        if name == "train":
            p.add_argument("--model", required=True, help="output model directory")
        if name == "retrieve":
            p.add_argument("--model", required=True)
            p.add_argument("--out", required=True, help="distances CSV path")
        if name == "eval":
            p.add_argument("--model", action="append", required=True,
                           help="model directory (repeat to compare)")
            p.add_argument("--out", required=True, help="report output directory")

    p = sub.add_parser("pr-curve", help="render a PR-curve CSV to SVG")
    p.add_argument("--curve", required=True, help="pr_curve.csv path")
    p.add_argument("--out", required=True, help="output SVG path")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except ConfigError as exc:
        logger.error("invalid configuration: %s", exc)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        logger.error("%s", exc)
        return 1


def _dispatch(args) -> int:
    if args.command == "synth":
        manifest_path = make_synthetic_dataset(
            args.out, per_class=args.per_class, seed=args.seed, scale=args.scale
        )
        print(manifest_path)
        return 0

    if args.command == "pr-curve":
        render_pr_curve(args.curve, args.out)
        print(args.out)
        return 0

    manifest, config = _load(args)

    if args.command == "features":
        summary = extract_features(manifest, config, args.cache)
        print(
            f"features: {len(summary.computed)} computed, "
            f"{len(summary.cached)} cached, {len(summary.failures)} failed"
        )
        for shape_id, message in summary.failures:
            print(f"  FAILED {shape_id}: {message}")
        return 0 if summary.ok else 1

    if args.command == "codebook":
        books = fit_codebooks(manifest, config, args.cache)
        for kind, book in books.items():
            print(f"codebook {kind}: {book.size} words of dim {book.dim}")
        return 0

    if args.command == "encode":
        views = encode_views(manifest, config, args.cache)
        for name, view in views.items():
            print(f"view {name}: {view.n_dims} dims x {view.n_samples} shapes")
        return 0

    if args.command == "train":
        model = train_model(manifest, config, args.cache, args.model)
        print(
            f"model: {model.n_views} views, {len(model.history)} sweeps, "
            f"converged={model.converged}"
        )
        for sweep, value in enumerate(model.history):
            logger.info("sweep %d objective %.6g", sweep, value)
        return 0

    if args.command == "retrieve":
        dist = compute_distances(manifest, config, args.cache, args.model)
        save_distances(dist, args.out)
        print(f"distances: {dist.values.shape[0]} x {dist.values.shape[1]} -> {args.out}")
        return 0

    if args.command == "eval":
        rows = []
        for model_dir in args.model:
            report = evaluate_model(manifest, config, args.cache, model_dir)
            name = "report" if len(args.model) == 1 else f"report_{_slug(model_dir)}"
            write_report(report, config, args.out, name=name)
            rows.append((model_dir, report.scaled()))
        header = f"{'model':<32} {'NN':>6} {'FT':>6} {'ST':>6} {'E':>6} {'DCG':>6}"
        print(header)
        for model_dir, scores in rows:
            print(
                f"{model_dir:<32} {scores['NN']:>6.1f} {scores['FT']:>6.1f} "
                f"{scores['ST']:>6.1f} {scores['E']:>6.1f} {scores['DCG']:>6.1f}"
            )
        return 0

    raise AssertionError(f"unhandled command {args.command}")


def _slug(path: str) -> str:
    import os

    return os.path.basename(os.path.normpath(path)) or "model"


if __name__ == "__main__":
    sys.exit(main())
