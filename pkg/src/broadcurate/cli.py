"""Command-line entry point.

Pipeline stages read an INI config (``--config``); stage flags override it.
Exit codes: 0 ok, 2 config error, 3 missing input, 4 stage failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import frameseg, metrics, mia, pipeline, subsample, synth
from .pipeline import ConfigInvalid, MissingInput, PipelineConfig, PipelineError, StageFailed

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_FAILED = 0, 2, 3, 4


def _config(args) -> PipelineConfig:
    cfg = pipeline.load_config(args.config) if args.config else PipelineConfig()
    over = {"jobs": args.jobs}
    if args.seed is not None:
        over.update(chunk_seed=args.seed, subsample_seed=args.seed)
    for name in ("corpus_root", "work_dir", "phases", "min_run", "tol", "n_chunks", "describe_mode",
                 "subsample_target"):
        over[name] = getattr(args, name, None)
    return cfg.with_overrides(**over)


def _print_report(r: pipeline.StageReport) -> None:
    print(f"{r.stage}: {r.status} {json.dumps(r.detail, sort_keys=True)}")


def cmd_stage(args) -> int:
    cfg = _config(args)
    _print_report(pipeline.run_stage(args.stage, cfg, force=args.force))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    stages = args.stages.split(",") if args.stages else pipeline.STAGES
    for r in pipeline.run_pipeline(cfg, stages):
        _print_report(r)
    return EXIT_OK


def cmd_synth_corpus(args) -> int:
    out = Path(args.out)
    c = synth.write_synthetic_corpus(out, n_files=args.files, seed=args.seed if args.seed is not None else 0)
    cfg = PipelineConfig(corpus_root=str(out.resolve()), work_dir=str((out / "work").resolve()))
    pipeline.write_config(cfg, out / "pipeline.ini")
    print(f"wrote {len(c.catalog)} files, {len(c.eval_files)} eval files and pipeline.ini to {out}")
    return EXIT_OK


# --- frameseg ------------------------------------------------------------------

def _labeled_dir(features_dir, labels_dir):
    out = []
    for path in sorted(Path(features_dir).glob("*.fsq")):
        f = frameseg.read_features(path)
        lab_path = Path(labels_dir) / f"{path.stem}.lbl"
        if not lab_path.exists():
            raise MissingInput(f"no labels for {path.stem} in {labels_dir}")
        _, lab = frameseg.read_labels(lab_path)
        out.append((f, lab))
    if not out:
        raise MissingInput(f"no .fsq feature files in {features_dir}")
    return out


def cmd_frameseg_train(args) -> int:
    data = _labeled_dir(args.features, args.labels)
    rng = np.random.default_rng(args.seed or 0)
    order = rng.permutation(len(data))
    n_dev = max(1, int(round(args.dev_fraction * len(data))))
    dev = [data[i] for i in order[:n_dev]]
    train = [data[i] for i in order[n_dev:]]
    cfg = frameseg.TrainConfig(args.lr, args.batch_size, args.epochs, args.dropout, args.hidden,
                               args.seed or 0, args.patience)
    res = frameseg.train_head(train, dev, cfg, log=lambda row: logging.info("%s", row))
    frameseg.save_model(res.model, args.out)
    meta = {"task": args.task, "p_switch": args.p_switch, "best_epoch": res.best_epoch, "curve": res.curve}
    Path(args.out + ".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{args.task}: best dev epoch {res.best_epoch}, dev loss {res.curve[res.best_epoch - 1]['dev_loss']:.4f}")
    return EXIT_OK


def cmd_frameseg_eval(args) -> int:
    model = frameseg.load_model(args.model)
    data = _labeled_dir(args.features, args.labels)
    scores = []
    for f, gold in data:
        for window, lab in zip(frameseg.slice_for_eval(f), _split_like(gold, f)):
            pred = frameseg.viterbi_smooth(frameseg.head_forward(model, window), args.p_switch)
            s = metrics.frame_metrics(pred, lab)
            scores.append((s.accuracy, s.f1, len(lab)))
    arr = np.array(scores)
    bcfg = metrics.BootstrapConfig(args.resamples, args.confidence, args.seed or 0)
    for col, name in ((0, "accuracy"), (1, "f1")):
        value = metrics.weighted_mean(arr[:, col], arr[:, 2])
        ci = metrics.bootstrap_ci(arr[:, col], metrics.weighted_mean, bcfg, weights=arr[:, 2])
        print(f"{name:9s} {metrics.format_ci(100 * value, (100 * ci[0], 100 * ci[1]))}")
    return EXIT_OK


def _split_like(labels, f):
    sizes = [w.T for w in frameseg.slice_for_eval(f)]
    return np.split(np.asarray(labels), np.cumsum(sizes)[:-1])


# --- metrics -------------------------------------------------------------------

def _read_lines(path) -> dict:
    """``utt_id token token ...`` per line."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            uid, _, text = line.partition(" ")
            out[uid] = text
    return out


def cmd_metrics(args) -> int:
    if args.metric == "delta":
        print(f"delta_rel {metrics.delta_rel(args.wer_f, args.wer_m):.1f}")
        return EXIT_OK
    if args.metric == "wer":
        ref, hyp = _read_lines(args.ref), _read_lines(args.hyp)
        missing = sorted(set(ref) - set(hyp))
        if missing:
            raise MissingInput(f"hypothesis missing for {missing[0]}")
        parts = [metrics.wer(metrics.tokenize(ref[u]), metrics.tokenize(hyp[u])) for u in sorted(ref)]
        total = metrics.WerBreakdown(sum(p.substitutions for p in parts), sum(p.deletions for p in parts),
                                     sum(p.insertions for p in parts), sum(p.ref_len for p in parts))
        errors = np.array([p.errors for p in parts], dtype=np.float64)
        lengths = np.array([p.ref_len for p in parts], dtype=np.float64)
        bcfg = metrics.BootstrapConfig(args.resamples, args.confidence, args.seed or 0)
        ci = metrics.bootstrap_ci(errors / lengths, metrics.weighted_mean, bcfg, weights=lengths)
        print(f"WER {metrics.format_ci(100 * total.wer, (100 * ci[0], 100 * ci[1]))} "
              f"(S={total.substitutions} D={total.deletions} I={total.insertions} N={total.ref_len})")
        return EXIT_OK
    s = metrics.read_scores(args.scores)
    report = metrics.verification_report(s)
    print(f"EER {report['eer']:.2f}%  minDCF(0.01) {report['min_dcf1']:.4f}  minDCF(0.05) {report['min_dcf5']:.4f}"
          f"  AUC {100 * report['auc']:.1f}%")
    return EXIT_OK


# --- mia -----------------------------------------------------------------------

def _feature_dir(path) -> dict:
    return {f.chunk_id: f for f in (frameseg.read_features(p) for p in sorted(Path(path).glob("*.fsq")))}


def cmd_mia(args) -> int:
    if args.action == "split":
        base, dups = subsample.Subsample.load(args.base), subsample.Subsample.load(args.duplicates)
        pool = [json.loads(l)["chunk_id"] for l in Path(args.pool).read_text(encoding="utf-8").splitlines() if l]
        sizes = mia.SplitSizes().scaled(args.scale)
        splits = mia.build_splits(base, dups, pool, args.seed or 0, sizes)
        problems = mia.check_splits(splits, base, dups)
        if problems:
            raise StageFailed("; ".join(problems))
        splits.save(args.out)
        print(f"splits: {', '.join(f'{k}={len(v)}' for k, v in splits.sets().items())}")
        return EXIT_OK
    splits = mia.MiaSplits.load(args.splits)
    if args.action == "plant":
        dups = subsample.Subsample.load(args.duplicates)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg = mia.PlantConfig(delta=args.delta, seed=args.seed or 0)
        for sid, stack in mia.planted_feature_map(splits, dups, cfg).items():
            frameseg.write_features(mia.to_feature_seq(sid, stack), out / f"{sid}.fsq")
        print(f"wrote planted features for {sum(len(v) for v in splits.sets().values())} ids to {out}")
        return EXIT_OK
    features = _feature_dir(args.features)
    if args.action == "train":
        cfg = frameseg.TrainConfig(seed=args.seed or 0, max_epochs=args.epochs)
        res = mia.train_probe(splits, features, cfg, log=lambda row: logging.info("%s", row))
        mia.save_probe(res.model, args.out)
        print(f"probe: best dev epoch {res.best_epoch} of {len(res.curve)}")
        return EXIT_OK
    report = mia.run_attack(mia.load_probe(args.probe), splits, features)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    print(report.to_text(), end="")
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def _stage_flags(p) -> None:
    p.add_argument("--corpus-root", dest="corpus_root")
    p.add_argument("--work-dir", dest="work_dir")
    p.add_argument("--force", action="store_true", help="rebuild missing upstream outputs first")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="broadcurate", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="INI pipeline config")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fingerprint", help="fingerprint corpus and evaluation audio")
    _stage_flags(p)
    p.add_argument("--phases", type=int)
    p.set_defaults(func=cmd_stage, stage="fingerprint")

    p = sub.add_parser("dedup", help="streaming copy removal in broadcast-date order")
    _stage_flags(p)
    p.add_argument("action", nargs="?", choices=["run"], default="run")
    p.add_argument("--min-run", dest="min_run", type=int)
    p.add_argument("--tol", type=int)
    p.set_defaults(func=cmd_stage, stage="dedup")

    p = sub.add_parser("blocklist", help="drop files matching evaluation audio")
    _stage_flags(p)
    p.add_argument("--min-run", dest="min_run", type=int)
    p.add_argument("--tol", type=int)
    p.set_defaults(func=cmd_stage, stage="blocklist")

    p = sub.add_parser("chunk", help="sample 30 s chunks")
    _stage_flags(p)
    p.add_argument("--n", dest="n_chunks", type=int)
    p.set_defaults(func=cmd_stage, stage="chunk")

    p = sub.add_parser("describe", help="write per-chunk annotation sidecars")
    _stage_flags(p)
    p.add_argument("--mode", dest="describe_mode", choices=["timeline", "baseline"])
    p.set_defaults(func=cmd_stage, stage="describe")

    p = sub.add_parser("subsample", help="build and verify the six subsamples")
    _stage_flags(p)
    p.add_argument("--target", dest="subsample_target", type=int)
    p.set_defaults(func=cmd_stage, stage="subsample")

    p = sub.add_parser("stats", help="corpus statistics report")
    _stage_flags(p)
    p.set_defaults(func=cmd_stage, stage="stats")

    p = sub.add_parser("pipeline", help="run stages in order")
    _stage_flags(p)
    p.add_argument("--stages", help="comma-separated subset")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("synth-corpus", help="write the deterministic synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--files", type=int, default=30)
    p.set_defaults(func=cmd_synth_corpus)

    for name, func in (("frameseg-train", cmd_frameseg_train), ("frameseg-eval", cmd_frameseg_eval)):
        p = sub.add_parser(name)
        p.add_argument("--task", choices=["vad", "music"], default="vad")
        p.add_argument("--p-switch", dest="p_switch", type=float, default=None)
        p.add_argument("--features", required=True)
        p.add_argument("--labels", required=True)
        p.set_defaults(func=func)
        if name == "frameseg-train":
            d = frameseg.TrainConfig()
            p.add_argument("--out", required=True)
            p.add_argument("--lr", type=float, default=d.learning_rate)
            p.add_argument("--batch-size", dest="batch_size", type=int, default=d.batch_size)
            p.add_argument("--epochs", type=int, default=d.max_epochs)
            p.add_argument("--dropout", type=float, default=d.dropout_p)
            p.add_argument("--hidden", type=int, default=d.hidden)
            p.add_argument("--patience", type=int, default=d.patience)
            p.add_argument("--dev-fraction", dest="dev_fraction", type=float, default=0.1)
        else:
            p.add_argument("--model", required=True)
            p.add_argument("--resamples", type=int, default=1000)
            p.add_argument("--confidence", type=float, default=97.5)

    p = sub.add_parser("metrics", help="WER, delta_rel or detection metrics")
    p.add_argument("metric", choices=["wer", "delta", "scores"])
    p.add_argument("--ref")
    p.add_argument("--hyp")
    p.add_argument("--scores")
    p.add_argument("--wer-f", dest="wer_f", type=float)
    p.add_argument("--wer-m", dest="wer_m", type=float)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--confidence", type=float, default=97.5)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("mia", help="membership-inference harness")
    p.add_argument("action", choices=["split", "plant", "train", "attack"])
    p.add_argument("--base")
    p.add_argument("--duplicates")
    p.add_argument("--pool", help="manifest whose chunk ids form the candidate pool")
    p.add_argument("--scale", type=float, default=1.0, help="multiply the default split sizes")
    p.add_argument("--splits")
    p.add_argument("--features")
    p.add_argument("--probe")
    p.add_argument("--delta", type=float, default=mia.PlantConfig().delta)
    p.add_argument("--epochs", type=int, default=frameseg.TrainConfig().max_epochs)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mia)
    return parser


_REQUIRED = {
    ("metrics", "wer"): ("ref", "hyp"), ("metrics", "delta"): ("wer_f", "wer_m"),
    ("metrics", "scores"): ("scores",),
    ("mia", "split"): ("base", "duplicates", "pool", "out"), ("mia", "plant"): ("splits", "duplicates", "out"),
    ("mia", "train"): ("splits", "features", "out"), ("mia", "attack"): ("splits", "features", "probe"),
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    sel = getattr(args, "metric", None) or getattr(args, "action", None)
    missing = [f"--{k.replace('_', '-')}" for k in _REQUIRED.get((args.command, sel), ())
               if getattr(args, k, None) is None]
    if missing:
        print(f"error: {args.command} {sel} needs {', '.join(missing)}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command.startswith("frameseg") and args.p_switch is None:
        args.p_switch = 0.01 if args.task == "vad" else 0.05
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInput as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except PipelineError as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (FileNotFoundError,) as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ValueError, mia.MiaError, frameseg.FramesegError, metrics.MetricError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
