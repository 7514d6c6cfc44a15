"""Command-line entry point.

One verb per capability: validate, gmad, rank, train-failnet, select, loop,
eval, top-difficult, dropout-ensemble, serve. Every command takes --seed
(WORTHINESS_SEED as fallback) and --jobs; outputs land under --out, never
beside inputs. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

from .errors import WorthinessError
from .failnet import (
    FailureNetConfig,
    dump_checkpoint,
    dump_loss_history,
    init_network,
    load_checkpoint,
    train,
)
from .gmad import GmadConfig, dump_pairs, load_pairs, run_round_robin
from .ingest import (
    dump_ensemble,
    load_ensemble,
    load_features,
    load_manifest,
    load_mos,
    load_scores,
    validate_corpus,
)
from .loop import LOOP_SELECTORS, LoopConfig, run_loop
from .ranking import dump_ranking, load_matrix, rank_comparisons
from .selection import (
    SelectionConfig,
    coreset_select,
    dump_selection,
    ensemble_from_dropout,
    evaluate_selection,
    greedy_worthiness_select,
    load_selection,
    random_select,
    rd_select,
    top_difficult,
    uncertainty_select,
    variance_select,
)
from .study import PairSet, StudyService, make_server

DEFAULT_FAILNET = FailureNetConfig()
DEFAULT_SELECTION_LAMBDA = 1e-6


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("WORTHINESS_SEED")
    return int(env) if env else 0


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pool_from_manifest(manifest, partition: str) -> list[str]:
    return manifest.ids() if partition == "all" else manifest.partition_ids(partition)


# ---------------------------------------------------------------------------
# command implementations


def cmd_validate(args) -> int:
    manifest = load_manifest(args.manifest)
    scores = load_scores(args.scores) if args.scores else None
    mos = load_mos(args.mos) if args.mos else None
    features = load_features(args.features, manifest) if args.features else None
    ensemble = load_ensemble(args.ensemble) if args.ensemble else None
    report = validate_corpus(manifest, scores, mos, features, ensemble)
    print(report.summary())
    if args.out:
        _write(_out_dir(args) / "validation.json",
               json.dumps(report.to_dict(), indent=2) + "\n")
    if report:
        print(f"ValidationIssues: {len(report.to_dict())} finding group(s)", file=sys.stderr)
        return 1
    return 0


def cmd_gmad(args) -> int:
    scores = load_scores(args.scores)
    pairs = run_round_robin(scores, GmadConfig(args.quality_levels, args.pairs_per_level))
    _write(_out_dir(args) / "pairs.csv", dump_pairs(pairs))
    print(f"{len(pairs)} pairs over {2 * len(pairs)} images -> {Path(args.out) / 'pairs.csv'}")
    return 0


def cmd_rank(args) -> int:
    matrix = load_matrix(args.matrix)
    result = rank_comparisons(matrix, epsilon=args.epsilon, tol=args.tol,
                              max_iter=args.max_iter)
    text = dump_ranking(result)
    if args.out:
        _write(_out_dir(args) / "ranking.csv", text)
    print(text, end="")
    return 0


def _restrict_pool(manifest, partition, *tables) -> list[str]:
    pool = _pool_from_manifest(manifest, partition)
    for table in tables:
        pool = [i for i in pool if i in table]
    return pool


def cmd_train_failnet(args) -> int:
    manifest = load_manifest(args.manifest)
    features = load_features(args.features, manifest)
    scores = load_scores(args.scores)
    mos = load_mos(args.mos)
    f_scores = scores.model_scores(args.model)
    config = FailureNetConfig(
        stage_widths=tuple(manifest.stage_widths),
        projection_width=args.projection_width,
        seed=_resolve_seed(args),
        learning_rate=args.learning_rate,
        decay_factor=args.decay_factor,
        decay_every_epochs=args.decay_every_epochs,
        epochs=args.epochs,
        batch_size=args.batch_size,
        pairs_per_epoch=args.pairs_per_epoch,
        holdout_pairs=args.holdout_pairs,
    )
    pool = _restrict_pool(manifest, args.partition, f_scores, mos.entries, features)
    net, report = train(init_network(config), features, f_scores, mos, config, pool=pool)
    out = _out_dir(args)
    _write(out / "checkpoint.json", dump_checkpoint(net, config, config.epochs))
    _write(out / "loss_history.csv", dump_loss_history(report))
    print(f"trained on {len(pool)} images; final loss {report.epoch_losses[-1]:.6f}; "
          f"holdout pair accuracy {report.holdout_accuracy:.4f}")
    print(f"wall seconds: {report.wall_seconds:.2f}", file=sys.stderr)
    return 0


_SELECTOR_NEEDS = {
    "worthiness": ("checkpoint", "features", "manifest"),
    "random": ("manifest",),
    "variance": ("ensemble",),
    "uncertainty": ("scores", "model"),
    "coreset": ("features", "manifest"),
    "rd": ("features", "manifest"),
}


def cmd_select(args) -> int:
    missing = [f"--{n}" for n in _SELECTOR_NEEDS[args.selector] if not getattr(args, n)]
    if missing:
        print(f"usage error: selector {args.selector!r} requires {' '.join(missing)}",
              file=sys.stderr)
        return 2
    seed = _resolve_seed(args)
    if args.diversity_weight is None:
        # module default for the worthiness objective; baselines need it explicit
        args.diversity_weight = (
            DEFAULT_SELECTION_LAMBDA if args.selector == "worthiness" else 0.0
        )
    config = SelectionConfig(budget=args.budget, diversity_weight=args.diversity_weight,
                             seed=seed)
    features = None
    manifest = None
    if args.manifest:
        manifest = load_manifest(args.manifest)
    if args.features:
        if manifest is None:
            raise WorthinessError("--features needs --manifest for width checks")
        features = load_features(args.features, manifest)

    if args.selector == "worthiness":
        net, _, _ = load_checkpoint(args.checkpoint)
        pool = _restrict_pool(manifest, args.partition, features)
        result = greedy_worthiness_select(pool, net, features, config)
    elif args.selector == "random":
        pool = _pool_from_manifest(manifest, args.partition)
        result = random_select(pool, config)
    elif args.selector == "variance":
        ensemble = load_ensemble(args.ensemble)
        result = variance_select(ensemble, config, features, args.diversity_weight)
    elif args.selector == "uncertainty":
        scores = load_scores(args.scores)
        result = uncertainty_select(scores, args.model, config, features,
                                    args.diversity_weight)
    elif args.selector == "coreset":
        pool = _restrict_pool(manifest, args.partition, features)
        result = coreset_select(pool, features, config, args.representation)
    else:  # rd
        pool = _restrict_pool(manifest, args.partition, features)
        result = rd_select(pool, features, config, args.representation)
    _write(_out_dir(args) / "selection.csv", dump_selection(result))
    print(f"{args.selector}: selected {len(result.steps)} images -> "
          f"{Path(args.out) / 'selection.csv'}")
    return 0


def cmd_loop(args) -> int:
    seed = _resolve_seed(args)
    manifest = load_manifest(args.manifest)
    features = load_features(args.features, manifest)
    mos = load_mos(args.mos)
    failnet_config = FailureNetConfig(
        stage_widths=tuple(manifest.stage_widths),
        projection_width=args.projection_width,
        epochs=args.failnet_epochs,
        pairs_per_epoch=args.failnet_pairs_per_epoch,
        learning_rate=args.failnet_learning_rate,
        holdout_pairs=args.failnet_holdout_pairs,
    )
    config = LoopConfig(
        iterations=args.iterations,
        budget=args.budget,
        selector=args.selector,
        diversity_weight=args.diversity_weight,
        ridge=args.ridge,
        seed=seed,
        failnet=failnet_config,
    )
    report = run_loop(manifest, features, mos, config)
    stamp = args.stamp or time.strftime("%Y%m%dT%H%M%S")
    run_dir = _out_dir(args) / f"run-s{seed}-{stamp}"
    run_dir.mkdir(parents=True, exist_ok=True)
    _write(run_dir / "report.json", report.to_json())
    for iteration in report.iterations:
        _write(run_dir / f"selection_{iteration.index:03d}.csv",
               dump_selection(iteration.selection))
    final = report.iterations[-1]
    print(f"{config.selector}: T={config.iterations} budget={config.budget} "
          f"final holdout SRCC {final.holdout_srcc:.4f} -> {run_dir}")
    return 0


def cmd_eval(args) -> int:
    selection = load_selection(args.selection)
    scores = load_scores(args.scores)
    mos = load_mos(args.mos)
    report = evaluate_selection(selection, scores.model_scores(args.model), mos)
    payload = {
        "srcc_selected": report.srcc_selected,
        "srcc_rest": report.srcc_rest,
        "selected_size": report.selected_size,
        "pool_size": report.pool_size,
    }
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        _write(_out_dir(args) / "evaluation.json", text)
    print(text, end="")
    return 0


def cmd_top_difficult(args) -> int:
    scores = load_scores(args.scores)
    mos = load_mos(args.mos)
    f_scores = scores.model_scores(args.model)
    ids = top_difficult(f_scores, mos, args.n)
    from .metrics import squared_error_table

    errors = squared_error_table(f_scores, mos)
    lines = ["rank,image_id,squared_error"]
    for rank, image_id in enumerate(ids, start=1):
        lines.append(f"{rank},{image_id},{repr(errors[image_id])}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(_out_dir(args) / "top_difficult.csv", text)
    print(text, end="")
    return 0


def cmd_dropout_ensemble(args) -> int:
    manifest = load_manifest(args.manifest)
    features = load_features(args.features, manifest)
    with open(args.head, encoding="utf-8") as fh:
        head = json.load(fh)
    table = ensemble_from_dropout(
        features, head["weights"], members=args.members,
        dropout_rate=args.dropout_rate, seed=_resolve_seed(args),
        intercept=float(head.get("intercept", 0.0)),
        pool=_pool_from_manifest(manifest, args.partition),
    )
    _write(_out_dir(args) / "ensemble.csv", dump_ensemble(table))
    print(f"{args.members} members x {len(table.images())} images -> "
          f"{Path(args.out) / 'ensemble.csv'}")
    return 0


def cmd_serve(args) -> int:
    manifest = load_manifest(args.manifest) if args.manifest else None
    pairs = load_pairs(args.pairs)
    service = StudyService(
        log_path=args.log, seed=_resolve_seed(args),
        snapshot_path=args.snapshot, snapshot_every=args.snapshot_every,
    )
    service.add_pair_set(PairSet(args.pair_set_id, pairs, manifest))
    server = make_server(service, host=args.host, port=args.port)
    host, port = server.server_address[:2]
    print(f"study service on http://{host}:{port} "
          f"(pair set {args.pair_set_id!r}, {len(pairs)} pairs)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        print("shutting down", file=sys.stderr)
    finally:
        server.server_close()
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(sub, out_required=True):
    sub.add_argument("--seed", type=int, default=None,
                     help="RNG seed (fallback: WORTHINESS_SEED env, then 0)")
    sub.add_argument("--jobs", type=int, default=1,
                     help="max module-internal parallelism; 1 is the deterministic reference")
    sub.add_argument("--out", required=out_required, default=None,
                     help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="worthiness",
        description="Falsification-driven dataset construction toolkit",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    def sub(name, func, help_text, out_required=True):
        p = subs.add_parser(name, help=help_text,
                            formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.set_defaults(func=func)
        _add_common(p, out_required)
        return p

    p = sub("validate", cmd_validate, "cross-check corpus tables against the manifest",
            out_required=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scores")
    p.add_argument("--mos")
    p.add_argument("--features")
    p.add_argument("--ensemble")

    p = sub("gmad", cmd_gmad, "run the gMAD round robin over a score table")
    p.add_argument("--scores", required=True)
    p.add_argument("--Q", dest="quality_levels", type=int, default=5,
                   help="quality levels per defender")
    p.add_argument("--K", dest="pairs_per_level", type=int, default=2,
                   help="pairs per (attacker, defender, level)")

    p = sub("rank", cmd_rank, "aggregate a comparison matrix into Perron weights",
            out_required=False)
    p.add_argument("--matrix", required=True)
    p.add_argument("--epsilon", type=float, default=1.0, help="Laplace smoothing")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=10000)

    p = sub("train-failnet", cmd_train_failnet, "train the failure predictor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--model", required=True, help="model id whose errors are ranked")
    p.add_argument("--mos", required=True)
    p.add_argument("--partition", default="labeled",
                   choices=["labeled", "unlabeled", "holdout", "all"])
    p.add_argument("--projection-width", type=int, default=DEFAULT_FAILNET.projection_width)
    p.add_argument("--learning-rate", type=float, default=DEFAULT_FAILNET.learning_rate)
    p.add_argument("--decay-factor", type=float, default=DEFAULT_FAILNET.decay_factor)
    p.add_argument("--decay-every-epochs", type=int, default=DEFAULT_FAILNET.decay_every_epochs)
    p.add_argument("--epochs", type=int, default=DEFAULT_FAILNET.epochs)
    p.add_argument("--batch-size", type=int, default=DEFAULT_FAILNET.batch_size)
    p.add_argument("--pairs-per-epoch", type=int, default=DEFAULT_FAILNET.pairs_per_epoch)
    p.add_argument("--holdout-pairs", type=int, default=DEFAULT_FAILNET.holdout_pairs)

    p = sub("select", cmd_select, "select a budgeted subset with one of the selectors")
    p.add_argument("--selector", required=True,
                   choices=["worthiness", "random", "variance", "uncertainty",
                            "coreset", "rd"])
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--lambda", dest="diversity_weight", type=float, default=None,
                   help="diversity weight (default: 1e-6 for worthiness, 0 otherwise)")
    p.add_argument("--manifest")
    p.add_argument("--features")
    p.add_argument("--partition", default="unlabeled",
                   choices=["labeled", "unlabeled", "holdout", "all"])
    p.add_argument("--checkpoint", help="failure-net checkpoint (worthiness)")
    p.add_argument("--ensemble", help="ensemble CSV (variance)")
    p.add_argument("--scores", help="score CSV with uncertainty (uncertainty)")
    p.add_argument("--model", help="model id (uncertainty)")
    p.add_argument("--representation", default="logit", choices=["logit", "stages"],
                   help="feature space for coreset/rd")

    p = sub("loop", cmd_loop, "run the closed select/label/refit loop")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--mos", required=True, help="oracle MOS table")
    p.add_argument("--selector", default="worthiness", choices=list(LOOP_SELECTORS))
    p.add_argument("--iterations", "-T", type=int, required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--lambda", dest="diversity_weight", type=float, default=0.0)
    p.add_argument("--ridge", type=float, default=1e-2)
    p.add_argument("--projection-width", type=int, default=DEFAULT_FAILNET.projection_width)
    p.add_argument("--failnet-epochs", type=int, default=DEFAULT_FAILNET.epochs)
    p.add_argument("--failnet-pairs-per-epoch", type=int,
                   default=DEFAULT_FAILNET.pairs_per_epoch)
    p.add_argument("--failnet-learning-rate", type=float,
                   default=DEFAULT_FAILNET.learning_rate)
    p.add_argument("--failnet-holdout-pairs", type=int, default=DEFAULT_FAILNET.holdout_pairs)
    p.add_argument("--stamp", default=None,
                   help="run directory stamp (default: current time)")

    p = sub("eval", cmd_eval, "SRCC inside/outside a selection", out_required=False)
    p.add_argument("--selection", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mos", required=True)

    p = sub("top-difficult", cmd_top_difficult, "rank images by squared prediction error",
            out_required=False)
    p.add_argument("--scores", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--mos", required=True)
    p.add_argument("--n", type=int, required=True)

    p = sub("dropout-ensemble", cmd_dropout_ensemble,
            "stochastic committee from feature dropout")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--head", required=True, help="JSON {weights, intercept} over logits")
    p.add_argument("--members", type=int, default=15)
    p.add_argument("--dropout-rate", type=float, default=0.5)
    p.add_argument("--partition", default="all",
                   choices=["labeled", "unlabeled", "holdout", "all"])

    p = sub("serve", cmd_serve, "run the 2AFC study service", out_required=False)
    p.add_argument("--pairs", required=True, help="gMAD pairs CSV")
    p.add_argument("--manifest", help="manifest with image paths for display")
    p.add_argument("--pair-set-id", default="default")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--log", help="append-only response log (JSONL)")
    p.add_argument("--snapshot", help="periodic state snapshot path")
    p.add_argument("--snapshot-every", type=int, default=100)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except WorthinessError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
