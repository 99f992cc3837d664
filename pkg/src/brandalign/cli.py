"""Command-line interface: gen / train / align / eval / repro.

Exit codes: 0 success, 1 runtime failure, 2 usage error,
3 ordering-assertion failure in repro.
"""

import argparse
import json
import os
import sys

from . import align as align_mod
from . import model, repro, synth
from .evaluate import (cross_brand_evaluate, evaluate as evaluate_sessions,
                       make_events, write_metrics)
from .data import (DataError, load_catalog, load_mapping, load_sessions,
                   split_sessions)
from .rng import substream


class UsageError(ValueError):
    pass


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"ratios must be train:val:test, got {text!r}")
    return tuple(float(p) for p in parts)


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--dim", type=int, default=32, help="final embedding dim")
    p.add_argument("--sub-dim", type=int, default=16,
                   help="dim of each feature sub-embedding")
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--n-neg", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--l2", type=float, default=1e-6)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0,
                   help="cross-brand regularizer strength")
    p.add_argument("--reg-variant", choices=("norm", "squared_norm"),
                   default="norm")
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--eval-every", type=int, default=10_000)


def _train_config(args) -> model.TrainConfig:
    cfg = model.TrainConfig(
        d_c=args.sub_dim, d_a=args.sub_dim, d_g=args.sub_dim, d=args.dim,
        window=args.window, n_neg=args.n_neg, learning_rate=args.lr,
        epochs=args.epochs, l2_weight=args.l2, lam=args.lam,
        reg_variant=args.reg_variant, optimizer=args.optimizer,
        seed=args.seed, eval_every=args.eval_every)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg


def cmd_gen(args) -> int:
    try:
        cfg = synth.WorldConfig(
            n_markets=args.markets, hotels_per_market=args.hotels_per_market,
            latent_dim=args.latent_dim, d_a_in=args.amenity_dim,
            d_g_in=args.geo_dim, n_sessions_per_brand=args.sessions,
            session_length=(args.min_len, args.max_len),
            brand_bias_strength=args.bias, overlap_fraction=args.overlap,
            seed=args.seed, brands=tuple(args.brands))
        cfg.validate()
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc

    os.makedirs(args.out_dir, exist_ok=True)
    world = synth.generate_world(cfg)
    synth.write_catalog(world.catalog, os.path.join(args.out_dir, "catalog.jsonl"))
    synth.write_mapping(world.mapping, os.path.join(args.out_dir, "mapping.tsv"))
    synth.write_world_meta(cfg, os.path.join(args.out_dir, "world-meta.json"))
    for brand in cfg.brands:
        sset = synth.generate_sessions(world, brand, cfg)
        synth.write_sessions(sset, os.path.join(args.out_dir,
                                                f"sessions_{brand}.jsonl"))
    print(f"wrote world ({len(world.catalog)} hotels, "
          f"{cfg.n_sessions_per_brand} sessions/brand) to {args.out_dir}")
    return 0


def _load_split(args, catalog):
    sessions = load_sessions(args.sessions, catalog, args.brand)
    if args.split == "none":
        return sessions, None
    ratios = _parse_ratios(args.ratios)
    train_s, val_s, test_s = split_sessions(sessions, ratios, args.seed)
    return {"train": train_s, "val": val_s, "test": test_s}[args.split], \
        {"train": train_s, "val": val_s, "test": test_s}


def cmd_train(args) -> int:
    cfg = _train_config(args)
    if cfg.lam > 0 and (args.source_embeddings is None or args.mapping is None):
        raise UsageError("--lambda > 0 requires --source-embeddings and --mapping")

    catalog = load_catalog(args.catalog)
    sessions = load_sessions(args.sessions, catalog, args.brand)
    train_s, val_s, test_s = split_sessions(sessions,
                                            _parse_ratios(args.ratios), args.seed)
    source_space = mapping = None
    if cfg.lam > 0:
        source_space = model.read_embeddings(args.source_embeddings)
        mapping = load_mapping(args.mapping)

    curve_rows = []
    curve_sink = None
    if args.curve_file:
        events = make_events(test_s, catalog)
        events = repro._subsample_events(events, args.seed)
        curve_sink = repro._curve_sink(events, catalog, curve_rows)

    epoch_losses = []
    params = model.train(train_s, catalog, cfg, source_space=source_space,
                         mapping=mapping, curve_sink=curve_sink,
                         epoch_loss_sink=lambda e, l: epoch_losses.append(l))
    space = model.export_embeddings(params, catalog, brand=args.brand)
    model.write_embeddings(space, args.out)
    if args.curve_file:
        with open(args.curve_file, "w", encoding="utf-8") as fh:
            for row in curve_rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    if epoch_losses:
        print(f"final train loss (mean per pair, last epoch): {epoch_losses[-1]:.6f}")
    print(f"wrote {len(space.vectors)} embeddings (dim {space.dim}) to {args.out}")
    return 0


def cmd_align(args) -> int:
    source = model.read_embeddings(args.source_emb)
    target = model.read_embeddings(args.target_emb)
    mapping = load_mapping(args.mapping)
    s_mat, t_mat, ids, excluded = align_mod.common_rows(source, target, mapping)
    if args.method == "lp":
        proj = align_mod.fit_linear_projection(s_mat, t_mat)
    else:
        proj = align_mod.fit_procrustes(s_mat, t_mat)
        import numpy as np
        ortho_err = float(np.max(np.abs(proj.w.T @ proj.w - np.eye(proj.w.shape[1]))))
        print(f"orthogonality check: max |W^T W - I| = {ortho_err:.3e}")
    align_mod.write_projection(proj, args.out)
    print(f"fit {proj.kind} projection on {len(ids)} common rows "
          f"({excluded} excluded); residual {proj.fit_residual:.6g}")
    return 0


def cmd_eval(args) -> int:
    catalog = load_catalog(args.catalog)
    sessions, _ = _load_split(args, catalog)
    space = model.read_embeddings(args.embeddings)
    if args.apply_projection:
        proj = align_mod.read_projection(args.apply_projection)
        space = align_mod.apply_projection(space, proj)
    ks = tuple(args.k) if args.k else (10, 100)
    metadata = {"embeddings": args.embeddings, "mode": args.mode,
                "pool": args.pool, "seed": args.seed, "split": args.split}
    if args.cross_brand:
        if not args.mapping:
            raise UsageError("--cross-brand requires --mapping")
        mapping = load_mapping(args.mapping)
        report = cross_brand_evaluate(
            sessions, space, mapping, catalog, mode=args.mode, ks=ks,
            metadata=metadata, pool=args.pool)
        key = next(iter(report.rows))
        n_events = report.rows[key]["n_events"]
        skipped = report.metadata["skipped_events"]
        if skipped > args.missing_threshold * (skipped + n_events):
            print(f"error: {skipped} of {skipped + n_events} queries lack "
                  f"embeddings (threshold {args.missing_threshold})",
                  file=sys.stderr)
            return 1
    else:
        report = evaluate_sessions(sessions, space, catalog, mode=args.mode,
                                   ks=ks, metadata=metadata, pool=args.pool)
    write_metrics(report, args.out)
    setting = "cross_brand" if args.cross_brand else "in_brand"
    for k in ks:
        cell = report.rows[(k, args.mode, setting)]
        print(f"{setting} {args.mode} k={k}: hits={cell['hits']:.4f} "
              f"mrr={cell['mrr']:.4f} (n={cell['n_events']})")
    return 0


def cmd_repro(args) -> int:
    result = repro.run_repro(args.out_dir, seed=args.seed, quick=args.quick)
    for row in result.report_rows:
        print(json.dumps(row, sort_keys=True))
    if result.violations:
        for v in result.violations:
            print(f"ORDERING VIOLATION: {v}", file=sys.stderr)
        return 3
    print("all ordering assertions passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="brandalign",
        description="Train, align, and evaluate cross-brand session embeddings.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic two-brand world")
    p.add_argument("--out-dir", default="world")
    p.add_argument("--markets", type=int, default=5)
    p.add_argument("--hotels-per-market", type=int, default=200)
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--amenity-dim", type=int, default=8)
    p.add_argument("--geo-dim", type=int, default=2)
    p.add_argument("--sessions", type=int, default=50_000)
    p.add_argument("--min-len", type=int, default=2)
    p.add_argument("--max-len", type=int, default=5)
    p.add_argument("--bias", type=float, default=1.0)
    p.add_argument("--overlap", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--brands", nargs=2, default=["A", "B"])
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one brand's embedding model")
    p.add_argument("--catalog", required=True)
    p.add_argument("--sessions", required=True)
    p.add_argument("--brand", required=True)
    p.add_argument("--out", required=True, help="embedding file to write")
    p.add_argument("--ratios", default="8:1:1")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--source-embeddings", help="frozen source space (regularized run)")
    p.add_argument("--mapping", help="source->target hotel mapping (tsv)")
    p.add_argument("--curve-file", help="write learning-curve checkpoints here")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("align", help="fit a projection between two spaces")
    p.add_argument("--source-emb", required=True)
    p.add_argument("--target-emb", required=True)
    p.add_argument("--mapping", required=True)
    p.add_argument("--method", choices=("lp", "procrustes"), default="lp")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("eval", help="hits@k / MRR@k evaluation")
    p.add_argument("--catalog", required=True)
    p.add_argument("--sessions", required=True)
    p.add_argument("--brand", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", default="metrics.jsonl")
    p.add_argument("--mode", choices=("cosine", "model"), default="cosine")
    p.add_argument("--k", type=int, action="append")
    p.add_argument("--pool", choices=("market", "global"), default="market")
    p.add_argument("--cross-brand", action="store_true")
    p.add_argument("--mapping")
    p.add_argument("--apply-projection")
    p.add_argument("--split", choices=("none", "train", "val", "test"),
                   default="none")
    p.add_argument("--ratios", default="8:1:1")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--missing-threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("repro", help="run the full reference experiment")
    p.add_argument("--out-dir", default="repro-out")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--quick", action="store_true",
                   help="small world, finishes in under a minute")
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ValueError, OSError, model.TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
