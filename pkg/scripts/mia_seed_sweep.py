"""Planted-signal membership attack at default split sizes, repeated over
seeds, to show how often the probe picks up the multiplicity shift.

    python scripts/mia_seed_sweep.py --seeds 20 --delta 0.03 --dim 16
"""
import argparse

import numpy as np

from broadcurate import frameseg, mia, subsample
from broadcurate.subsample import Subsample, SubsampleSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--delta", type=float, default=mia.PlantConfig().delta)
    ap.add_argument("--dim", type=int, default=mia.PlantConfig().dim)
    ap.add_argument("--frames", type=int, default=mia.PlantConfig().t_frames)
    ap.add_argument("--segments", type=int, default=subsample.PAPER_SEGMENTS)
    args = ap.parse_args()

    ids = [f"seg{i:06d}" for i in range(args.segments + 3000)]
    base = Subsample(SubsampleSpec("base", args.segments), ids[:args.segments])
    dups = subsample.build_duplicates(base, 0.01, 10, seed=1)
    splits = mia.build_splits(base, dups, ids, seed=0)
    rows = []
    for seed in range(args.seeds):
        cfg = mia.PlantConfig(t_frames=args.frames, dim=args.dim, delta=args.delta, seed=seed)
        feats = mia.planted_feature_map(splits, dups, cfg)
        res = mia.train_probe(splits, feats, frameseg.TrainConfig(seed=seed))
        auc = mia.run_attack(res.model, splits, feats).auc
        rows.append((auc["n=0|1"], auc["n=0|10"]))
        print(f"seed {seed:3d}  best epoch {res.best_epoch:2d}  "
              f"AUC 0|1 {auc['n=0|1']:.3f}  0|10 {auc['n=0|10']:.3f}  train {auc['train']:.3f}", flush=True)
    a = np.array(rows)
    ok = np.sum((a[:, 1] >= 0.60) & (a[:, 0] >= 0.45) & (a[:, 0] <= 0.55))
    print(f"median 0|1 {np.median(a[:, 0]):.3f}  median 0|10 {np.median(a[:, 1]):.3f}  "
          f"both targets met on {ok}/{len(a)} seeds")


if __name__ == "__main__":
    main()
