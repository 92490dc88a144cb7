#!/usr/bin/env python3
"""Component ablation grid: window size x constraint graph x task weighting
x cluster-count source, scored by sMOTSA on synthetic sequences.

Reuses checkpoints from reproduce_synthetic.py when present (pass the same
workdir); otherwise trains what it needs first.
"""

import argparse
from pathlib import Path

from clustertrack.constraints import ConstraintConfig
from clustertrack.metrics import aggregate
from clustertrack.synthgen import SynthConfig, generate_sequence
from clustertrack.tracker import TrackerConfig, ablation_run

from reproduce_synthetic import TRAIN_SEEDS, get_model


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/synthetic")
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--eval-frames", type=int, default=300)
    ap.add_argument("--eval-seeds", default="11,12")
    ap.add_argument("--t-lags", default="3,5,8")
    ap.add_argument("--tau", type=int, default=2)
    args = ap.parse_args()

    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    train_seqs = [generate_sequence(SynthConfig(num_frames=120, seed=s)) for s in TRAIN_SEEDS]
    mtl = {"both": get_model(workdir, "both", train_seqs, args.epochs)}
    eqw = {"both": get_model(workdir, "both", train_seqs, args.epochs, mtl=False)}

    eval_seqs = {
        s: generate_sequence(SynthConfig(num_frames=args.eval_frames, seed=int(s)))
        for s in args.eval_seeds.split(",")
    }

    print(f"{'t_lag':>5s} {'graph':>5s} {'MTL':>4s} {'K':>9s} {'sMOTSA':>8s} "
          f"{'MT':>4s} {'IDs':>5s} {'Frag':>5s}")
    for t_lag in (int(x) for x in args.t_lags.split(",")):
        for use_graph in (False, True):
            for weighting, models in (("eqW", eqw), ("MTL", mtl)):
                for k_mode in ("estimated", "oracle"):
                    cfg = TrackerConfig(
                        t_lag=t_lag,
                        k_mode=k_mode,
                        constraints=ConstraintConfig(mode="mask_iou", tau=args.tau),
                    )
                    variant = "loc+shape+G" if use_graph else "loc+shape"
                    reps = {
                        name: ablation_run(seq, variant, models, base_cfg=cfg)
                        for name, seq in eval_seqs.items()
                    }
                    agg = aggregate(reps)
                    print(f"{t_lag:5d} {'yes' if use_graph else 'no':>5s} {weighting:>4s} "
                          f"{k_mode:>9s} {agg.smotsa * 100:8.2f} {agg.mt:4d} {agg.ids:5d} {agg.frag:5d}")


if __name__ == "__main__":
    main()
