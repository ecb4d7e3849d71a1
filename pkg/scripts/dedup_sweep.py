"""Planted-copy recall and false removals of streaming dedup over a grid of
similarity tolerances and minimum run lengths.

    python scripts/dedup_sweep.py --seeds 0 1 2 --tol 4 5 6 --min-run 4 8
"""
import argparse
import itertools
import json
import time

from broadcurate import fingerprint, synth
from broadcurate.dedup import dedup_corpus


def evaluate(suite, tracks, tol, min_run):
    rep = dedup_corpus(tracks, min_run=min_run, tol=tol)
    removed = set(rep.removed_ids)
    dups = set(suite.duplicates)
    by_kind = {}
    for sid, (_, kind) in suite.duplicates.items():
        hit, tot = by_kind.get(kind, (0, 0))
        by_kind[kind] = (hit + (sid in removed), tot + 1)
    return {"recall": len(removed & dups) / len(dups), "false_removals": len(removed - dups),
            "recall_by_kind": {k: h / t for k, (h, t) in sorted(by_kind.items())}}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--tol", type=int, nargs="+", default=[4, 6])
    ap.add_argument("--min-run", type=int, nargs="+", default=[4])
    ap.add_argument("--phases", type=int, default=4)
    ap.add_argument("--distinct", type=int, default=200)
    ap.add_argument("--dups", type=int, default=100)
    args = ap.parse_args()
    for seed in args.seeds:
        t0 = time.perf_counter()
        suite = synth.planted_duplicate_suite(args.distinct, args.dups, seed=seed)
        tracks = [fingerprint.extract(suite.buffers[s], s, phases=args.phases) for s in suite.order]
        for tol, min_run in itertools.product(args.tol, args.min_run):
            row = {"seed": seed, "tol": tol, "min_run": min_run, **evaluate(suite, tracks, tol, min_run)}
            print(json.dumps(row, sort_keys=True), flush=True)
        print(f"# seed {seed}: {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
