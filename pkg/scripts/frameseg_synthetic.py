"""Train the frame-level head on synthetic labelled features and report
accuracy and F1 with bootstrap intervals, with and without Viterbi smoothing.

    python scripts/frameseg_synthetic.py --chunks 40 --dim 32 --separation 1.0
"""
import argparse

import numpy as np

from broadcurate import frameseg, metrics


def make(n, offset, dim, separation):
    out = []
    for i in range(offset, offset + n):
        lab = frameseg.synthetic_labels(frameseg.n_frames(30), i)
        out.append((frameseg.synthetic_features(lab, dim, seed=i, separation=separation), lab))
    return out


def report(name, rows, cfg):
    arr = np.array(rows)
    for col, metric in ((0, "accuracy"), (1, "f1")):
        value = metrics.weighted_mean(arr[:, col], arr[:, 2])
        lo, hi = metrics.bootstrap_ci(arr[:, col], metrics.weighted_mean, cfg, weights=arr[:, 2])
        print(f"{name:10s} {metric:9s} {metrics.format_ci(100 * value, (100 * lo, 100 * hi))}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--chunks", type=int, default=40)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--separation", type=float, default=1.0)
    ap.add_argument("--p-switch", type=float, default=0.01)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    train = make(args.chunks, 0, args.dim, args.separation)
    dev = make(max(2, args.chunks // 10), 10_000, args.dim, args.separation)
    test = make(max(4, args.chunks // 4), 20_000, args.dim, args.separation)
    res = frameseg.train_head(train, dev, frameseg.TrainConfig(max_epochs=args.epochs, seed=args.seed))
    print(f"best dev epoch {res.best_epoch} of {len(res.curve)}")
    raw, smooth = [], []
    for f, lab in test:
        post = frameseg.head_forward(res.model, f)
        for rows, pred in ((raw, post > 0.5), (smooth, frameseg.viterbi_smooth(post, args.p_switch))):
            s = metrics.frame_metrics(pred, lab)
            rows.append((s.accuracy, s.f1, len(lab)))
    cfg = metrics.BootstrapConfig(seed=args.seed)
    report("raw", raw, cfg)
    report("viterbi", smooth, cfg)


if __name__ == "__main__":
    main()
