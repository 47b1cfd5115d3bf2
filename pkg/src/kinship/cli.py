"""Command line entry point: ``kinship <subcommand> [options]``.

Every subcommand is a thin binding of library calls. Failures exit with
status 1 and a single ``ERROR <kind>: <detail>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import io
from .errors import EmptyInput, GradientCheckFailed, IoFailure, KinshipError, MissingLabel
from .fusion import DESCRIPTORS, train_pair_classifier
from .gradcheck import run_gradcheck
from .losses import DEFAULT_MARGIN, DEFAULT_SCALE, TripletConfig
from .metric_head import LOSS_KINDS, MINING_STRATEGIES, TrainConfig, project, train_projection
from .retrieval import (
    AGGREGATIONS,
    Gallery,
    ProbeSubject,
    build_rank_matrix,
    mean_average_precision,
    per_probe_average_precision,
)
from .scoring import SCORER_KINDS, ScorerConfig
from .verification import build_calibration, evaluate_verification, pair_features, verify_pairs

DEFAULT_SEED = 42
GRADCHECK_TOLERANCE = 1e-4


def _idw_k(text):
    if text.upper() == "ALL":
        return None
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer or ALL")
    return value


def _load_store(args, path=None):
    store = io.load_embeddings(path or args.embeddings)
    if getattr(args, "head", None):
        head = io.load_head(args.head)
        store = store.map_values(lambda v: project(head, v))
    return store


def _load_store_b(args):
    return io.load_embeddings(args.embeddings_b) if getattr(args, "embeddings_b", None) else None


def _require_labels(pairs, path):
    missing = [p.pair_id for p in pairs if p.label is None]
    if missing:
        raise MissingLabel(f"{path} has no label column (pair {missing[0]!r})")


def _write_json(path, payload):
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path:
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from exc
    return text


def _train_config(args, **overrides) -> TrainConfig:
    margin = args.margin
    if args.loss == "triplet":
        triplet = TripletConfig(0.2 if margin is None else margin)
        arc_margin = DEFAULT_MARGIN
    else:
        triplet = TripletConfig()
        arc_margin = DEFAULT_MARGIN if margin is None else margin
    return TrainConfig(
        loss_kind=args.loss,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        mining=args.mining,
        use_momentum=args.momentum,
        triplet=triplet,
        arcface_scale=args.scale,
        arcface_margin=arc_margin,
        **overrides,
    )


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_calibrate(args):
    store = _load_store(args)
    pairs = io.load_pairs(args.pairs)
    _require_labels(pairs, args.pairs)
    cal = build_calibration(store, pairs)
    io.write_calibration(args.output, cal)
    print(f"calibration: {len(cal)} observations ({int(cal.labels.sum())} kin) -> {args.output}")


def cmd_verify(args):
    store = _load_store(args)
    pairs = io.load_pairs(args.pairs)
    scorer = ScorerConfig(
        kind=args.scorer,
        idw_power=args.idw_power,
        idw_k=args.idw_k,
        threshold=args.threshold,
        descriptor=args.descriptor,
        symmetrize=args.symmetrize,
        cd_kin_only=args.cd_kin_only,
    )
    cal = io.load_calibration(args.calibration) if args.calibration else None
    clf = io.load_classifier(args.classifier) if args.classifier else None
    predictions = verify_pairs(store, pairs, scorer, cal, clf, _load_store_b(args))
    io.write_predictions(args.output, predictions)
    kin = sum(p.label for p in predictions)
    print(f"verify: {len(predictions)} pairs, {kin} kin at threshold {scorer.effective_threshold!r} -> {args.output}")


def cmd_eval_verification(args):
    predictions = io.load_predictions(args.predictions)
    pairs = io.load_pairs(args.pairs)
    _require_labels(pairs, args.pairs)
    report = evaluate_verification(predictions, pairs)
    _write_json(args.output, report.as_dict())
    print(f"overall accuracy: {report.overall_accuracy!r}")
    print(f"macro average:    {report.macro_average!r}")
    for category, acc in report.per_category_accuracy.items():
        print(f"  {category or '<none>'}: {acc!r} ({report.counts[category]} pairs)")


def cmd_retrieve(args):
    store = _load_store(args)
    probes, gallery = io.load_probes_gallery(args.probes, args.gallery, store)
    matrix = build_rank_matrix(probes, gallery, args.aggregate)
    io.write_rank_matrix(args.output, matrix)
    print(f"retrieve: {len(probes)} probes x {len(gallery)} gallery -> {args.output}")


def cmd_eval_retrieval(args):
    matrix = io.load_rank_matrix(args.rank_matrix)
    groups = io.load_probe_groups(args.probes)
    gallery_ids = io.load_gallery_ids(args.gallery)
    labels = io.load_family_labels(args.families)
    # ranking is already done; only ids matter here
    probes = [ProbeSubject(pid, np.ones((len(ids), 1)), ids) for pid, ids in groups.items()]
    gallery = Gallery(gallery_ids, np.ones((len(gallery_ids), 1)))
    aps = per_probe_average_precision(matrix, probes, gallery, labels, args.map_cutoff, args.skip_no_relevant)
    value = mean_average_precision(matrix, probes, gallery, labels, args.map_cutoff, args.skip_no_relevant)
    _write_json(args.output, {"map": value, "cutoff": args.map_cutoff, "average_precision": aps})
    print(f"MAP: {value!r} over {len(aps)} probes")


def cmd_train_head(args):
    print(f"seed: {args.seed}")
    store = io.load_embeddings(args.embeddings)
    labels = io.load_family_labels(args.families)
    ids = [i for i in store if i in labels]
    if not ids:
        raise EmptyInput("no embedding has a family label")
    # small datasets train on a single full batch
    args.batch_size = min(args.batch_size, len(ids))
    cfg = _train_config(args, dim_out=args.dim_out)
    head, history = train_projection(store.matrix(ids), [labels[i] for i in ids], cfg)
    io.write_head(args.output, head)
    for epoch, loss in enumerate(history):
        print(f"epoch {epoch}: {loss!r}")
    print(f"head {head.d_out}x{head.d_in} -> {args.output}")


def cmd_train_pair_classifier(args):
    print(f"seed: {args.seed}")
    store = _load_store(args)
    store_b = _load_store_b(args)
    pairs = io.load_pairs(args.pairs)
    _require_labels(pairs, args.pairs)
    if not pairs:
        raise EmptyInput(f"{args.pairs} has no pairs")
    features = np.stack([pair_features(args.descriptor, store, q, store_b) for q in pairs])
    cfg = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=min(args.batch_size, len(pairs)),
        seed=args.seed,
        use_momentum=args.momentum,
    )
    clf = train_pair_classifier(features, [q.label for q in pairs], cfg)
    io.write_classifier(args.output, clf)
    print(f"classifier over {features.shape[1]} features -> {args.output}")


def cmd_fuse(args):
    store = _load_store(args)
    store_b = _load_store_b(args)
    pairs = io.load_pairs(args.pairs)
    if not pairs:
        raise EmptyInput(f"{args.pairs} has no pairs")
    features = np.stack([pair_features(args.descriptor, store, q, store_b) for q in pairs])
    io.write_features(args.output, [q.pair_id for q in pairs], features)
    print(f"fuse: {len(pairs)} pairs x {features.shape[1]} features -> {args.output}")


def cmd_gradcheck(args):
    print(f"seed: {args.seed}")
    start = time.perf_counter()
    results = run_gradcheck(args.configs, args.seed)
    elapsed = time.perf_counter() - start
    failed = 0
    lines = ["suite,index,max_relative_error"]
    for suite in ("triplet", "arcface"):
        errs = [r.error for r in results if r.suite == suite]
        bad = sum(e > GRADCHECK_TOLERANCE for e in errs)
        failed += bad
        print(f"{suite}: {len(errs)} configs, worst relative error {max(errs):.3e}, {bad} above {GRADCHECK_TOLERANCE}")
    lines += [f"{r.suite},{r.index},{r.error!r}" for r in results]
    if args.output:
        io.write_rows(args.output, [line.split(",") for line in lines])
    print(f"elapsed: {elapsed:.2f} s")
    if failed:
        raise GradientCheckFailed(f"{failed} gradient checks exceeded {GRADCHECK_TOLERANCE}")


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--embeddings", help="embedding CSV (image_id,v0,...)")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--output", help="output path")
    common.add_argument("--head", help="projection head CSV applied to embeddings before use")

    optim = argparse.ArgumentParser(add_help=False)
    optim.add_argument("--epochs", type=int, default=50)
    optim.add_argument("--lr", type=float, default=0.05)
    optim.add_argument("--batch-size", type=int, default=40)
    optim.add_argument("--momentum", action="store_true", help="use momentum 0.9")

    parser = argparse.ArgumentParser(prog="kinship", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, parents=(), help=None):
        p = sub.add_parser(name, parents=[common, *parents], help=help)
        p.set_defaults(func=func)
        return p

    p = add("calibrate", cmd_calibrate, help="build a calibration set from labeled pairs")
    p.add_argument("--pairs", required=True)

    p = add("verify", cmd_verify, help="score and threshold pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--scorer", choices=SCORER_KINDS, default="raw_cosine")
    p.add_argument("--threshold", type=float, default=None,
                   help="default 0.6 for raw_cosine, 0.5 for probability scorers")
    p.add_argument("--idw-power", type=float, default=2.0)
    p.add_argument("--idw-k", type=_idw_k, default=None, help="neighbor count or ALL")
    p.add_argument("--calibration")
    p.add_argument("--cd-kin-only", action="store_true")
    p.add_argument("--classifier")
    p.add_argument("--descriptor", choices=DESCRIPTORS, default="siamese")
    p.add_argument("--embeddings-b", help="second embedding source for joint descriptors")
    p.add_argument("--symmetrize", action="store_true")

    p = add("eval-verification", cmd_eval_verification, help="accuracy of predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--pairs", required=True)

    p = add("retrieve", cmd_retrieve, help="rank the gallery for every probe")
    p.add_argument("--probes", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--aggregate", choices=AGGREGATIONS, default="mean")

    p = add("eval-retrieval", cmd_eval_retrieval, help="MAP of a rank matrix")
    p.add_argument("--rank-matrix", required=True)
    p.add_argument("--probes", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--families", required=True)
    p.add_argument("--map-cutoff", type=int, default=None)
    p.add_argument("--skip-no-relevant", action="store_true")

    p = add("train-head", cmd_train_head, parents=[optim], help="train a projection head")
    p.add_argument("--loss", choices=LOSS_KINDS, default="triplet")
    p.add_argument("--margin", type=float, default=None,
                   help="triplet alpha (default 0.2) or ArcFace m (default 0.5)")
    p.add_argument("--scale", type=float, default=DEFAULT_SCALE, help="ArcFace scale s")
    p.add_argument("--mining", choices=MINING_STRATEGIES, default="semi_hard")
    p.add_argument("--families", required=True)
    p.add_argument("--dim-out", type=int, default=16)

    p = add("train-pair-classifier", cmd_train_pair_classifier, parents=[optim],
            help="train a logistic pair classifier")
    p.add_argument("--pairs", required=True)
    p.add_argument("--descriptor", choices=DESCRIPTORS, default="siamese")
    p.add_argument("--embeddings-b")

    p = add("fuse", cmd_fuse, help="write pair descriptors")
    p.add_argument("--pairs", required=True)
    p.add_argument("--descriptor", choices=DESCRIPTORS, default="fused")
    p.add_argument("--embeddings-b")

    p = add("gradcheck", cmd_gradcheck, help="finite-difference gradient suites")
    p.add_argument("--configs", type=int, default=100)
    return parser


NEEDS_EMBEDDINGS = {"calibrate", "verify", "retrieve", "train-head", "train-pair-classifier", "fuse"}
NEEDS_OUTPUT = NEEDS_EMBEDDINGS


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in NEEDS_EMBEDDINGS and not args.embeddings:
        parser.error(f"{args.command} requires --embeddings")
    if args.command in NEEDS_OUTPUT and not args.output:
        parser.error(f"{args.command} requires --output")
    try:
        args.func(args)
    except KinshipError as exc:
        print(f"ERROR {exc.kind}: {_one_line(exc)}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"ERROR {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


def _one_line(exc) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
