"""Command-line pipeline: generate, train, embed, track, evaluate, render, ablate.

A JSON config file can preset any section (seed, synth, autoenc, tracker,
constraints); command-line flags override file values. Unknown keys are
rejected so typos fail loudly. All randomness derives from the single root
seed, split per module by fixed labels.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .constraints import ConstraintConfig
from .core import format_results, parse_results
from .autoenc import (
    AutoencoderConfig,
    build_training_set,
    calibrate_embed_threshold,
    embed_batch,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .metrics import aggregate, evaluate, format_report
from .render import render_sequence
from .seqio import frame_image, load_sequence, save_sequence
from .synthgen import GtSequence, SynthConfig, generate_sequence, perturb_detections
from .tracker import VARIANTS, TrackerConfig, ablation_run, make_oracle_k, track

SECTIONS = {
    "synth": SynthConfig,
    "autoenc": AutoencoderConfig,
    "tracker": TrackerConfig,
    "constraints": ConstraintConfig,
}


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    synth: dict = dataclasses.field(default_factory=dict)
    autoenc: dict = dataclasses.field(default_factory=dict)
    tracker: dict = dataclasses.field(default_factory=dict)
    constraints: dict = dataclasses.field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        doc = json.loads(Path(path).read_text())
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for section, klass in SECTIONS.items():
            if section in doc:
                valid = {f.name for f in dataclasses.fields(klass)}
                bad = set(doc[section]) - valid
                if bad:
                    raise ValueError(f"unknown keys in [{section}]: {sorted(bad)}")
        return cls(**doc)


def module_seed(root: int, label: str) -> int:
    """Stable per-module seed derived from the root seed."""
    h = 0
    for ch in label:
        h = (h * 131 + ord(ch)) % (2**31 - 1)
    return int(np.random.SeedSequence([root, h]).generate_state(1)[0])


def _synth_config(args, rc: RunConfig) -> SynthConfig:
    fields = dict(rc.synth)
    for name in ("frame_w", "frame_h", "object_size", "density", "birth_prob",
                 "mean_speed", "num_frames", "shape_set", "occlusion"):
        v = getattr(args, name, None)
        if v is not None:
            fields[name] = v
    fields["seed"] = args.seed if args.seed is not None else rc.seed
    return SynthConfig(**fields)


def cmd_generate(args) -> int:
    rc = RunConfig.load(args.config)
    cfg = _synth_config(args, rc)
    seq = generate_sequence(cfg)
    if args.drop_prob > 0 or args.conf_noise > 0:
        seq = perturb_detections(
            seq, args.drop_prob, args.conf_noise,
            seed=module_seed(cfg.seed, "perturb"),
        )
    save_sequence(args.out, seq, write_png=args.png)
    print(f"wrote {seq.num_detections()} detections over {len(seq.frames)} frames to {args.out}")
    return 0


def _load_sequences(paths: list[str]) -> list[GtSequence]:
    return [load_sequence(p) for p in paths]


def cmd_train(args) -> int:
    rc = RunConfig.load(args.config)
    fields = dict(rc.autoenc)
    if args.mask_size is not None:
        fields["mask_size"] = args.mask_size
    if args.latent is not None:
        fields["latent"] = args.latent
    if args.conv_channels is not None:
        fields["conv_channels"] = tuple(int(c) for c in args.conv_channels.split(","))
    fields["branches"] = args.variant
    cfg = AutoencoderConfig(**fields)
    seqs = _load_sequences(args.data)
    x_m, x_b = build_training_set(seqs, cfg)
    seed = args.seed if args.seed is not None else rc.seed
    params, history = train(
        x_m, x_b, cfg,
        epochs=args.epochs, batch_size=args.batch_size,
        seed=module_seed(seed, "train"),
        mtl=not args.no_mtl,
        box_target_noise=args.box_target_noise,
        verbose=args.verbose,
    )
    meta = {
        "mtl": not args.no_mtl,
        "embed_dist_max": calibrate_embed_threshold(params, seqs),
        "final_loss": history[-1],
    }
    save_checkpoint(args.out, params, meta)
    print(f"trained {cfg.branches} model: loss {history[0]:.4f} -> {history[-1]:.4f}, "
          f"embed_dist_max {meta['embed_dist_max']:.4f}, saved to {args.out}")
    return 0


def cmd_embed(args) -> int:
    params, meta = load_checkpoint(args.model)
    seq = load_sequence(args.data)
    dims = (seq.config.frame_w, seq.config.frame_h)
    rows = []
    codes = []
    for fr in seq.frames:
        dets = [d for d in fr.detections if d.mask.area() > 0]
        if not dets:
            continue
        z = embed_batch(params, dets, dims)
        for i, d in enumerate(dets):
            rows.append((fr.index, i))
            codes.append(z[i])
    np.savez(args.out, keys=np.array(rows, dtype=np.int64), codes=np.array(codes))
    print(f"embedded {len(rows)} detections to {args.out}")
    return 0


def _tracker_config(args, rc: RunConfig) -> TrackerConfig:
    cons = dict(rc.constraints)
    if args.tau is not None:
        cons["tau"] = args.tau
    if args.constraint_mode is not None:
        cons["mode"] = args.constraint_mode
    if args.embed_dist_max is not None:
        cons["embed_dist_max"] = args.embed_dist_max
    cons.setdefault("mode", "mask_iou")
    cons.setdefault("tau", 2)
    fields = dict(rc.tracker)
    if args.t_lag is not None:
        fields["t_lag"] = args.t_lag
    if args.score_min is not None:
        fields["cluster_score_min"] = args.score_min
    if args.det_threshold is not None:
        fields["det_threshold"] = args.det_threshold
    if args.oracle_k:
        fields["k_mode"] = "oracle"
    fields["constraints"] = ConstraintConfig(**cons)
    if args.variant is not None:
        fields["use_graph"] = VARIANTS[args.variant][1]
    return TrackerConfig(**fields)


def cmd_track(args) -> int:
    rc = RunConfig.load(args.config)
    params, meta = load_checkpoint(args.model)
    if args.variant is not None:
        needed = VARIANTS[args.variant][0]
        if params.config.branches != needed:
            raise SystemExit(
                f"variant {args.variant!r} needs a {needed!r} model, "
                f"checkpoint has {params.config.branches!r}"
            )
    seq = load_sequence(args.data)
    cfg = _tracker_config(args, rc)
    if cfg.constraints.mode == "embedding_distance" and cfg.constraints.embed_dist_max <= 0:
        thr = float(meta.get("embed_dist_max", 0.0))
        if thr <= 0:
            raise SystemExit("no calibrated embed_dist_max in checkpoint; pass --embed-dist-max")
        cfg = dataclasses.replace(cfg, constraints=dataclasses.replace(cfg.constraints, embed_dist_max=thr))
    oracle = None
    if cfg.k_mode == "oracle":
        if not any(d.label is not None for f in seq.frames for d in f.detections):
            raise SystemExit("--oracle-k requires a sequence with ground-truth labels")
        oracle = make_oracle_k(seq)
    frames, store = track(seq, params, cfg, oracle_k=oracle)
    text = format_results(frames, seq.config.frame_w, seq.config.frame_h)
    Path(args.out).write_text(text)
    n = sum(1 for f in frames for d in f.detections if d.label is not None)
    print(f"tracked {store.next_id} identities over {n} detections; results in {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    gt = load_sequence(args.gt)
    hyp_frames = parse_results(Path(args.results).read_text())
    rep = evaluate(list(gt.frames), hyp_frames, use_masks=not args.box_iou)
    text = format_report(rep)
    machine = "\n".join(f"{k}={v}" for k, v in rep.as_dict().items())
    print(text)
    if args.out:
        Path(args.out).write_text(machine + "\n")
    return 0


def cmd_render(args) -> int:
    seq = load_sequence(args.data)
    hyp_frames = parse_results(Path(args.results).read_text())
    backgrounds = {
        fr.index: frame_image(fr, seq.config.frame_w, seq.config.frame_h)
        for fr in seq.frames
    }
    paths = render_sequence(
        hyp_frames, seq.config.frame_w, seq.config.frame_h, args.out, backgrounds
    )
    print(f"rendered {len(paths)} frames to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    rc = RunConfig.load(args.config)
    models_dir = Path(args.models)
    models = {}
    for branch in ("both", "loc", "shape"):
        path = models_dir / f"{branch}.ckpt"
        if path.exists():
            models[branch] = load_checkpoint(path)
    if not models:
        raise SystemExit(f"no model checkpoints (both.ckpt/loc.ckpt/shape.ckpt) in {models_dir}")
    eqw_path = models_dir / "nomtl.ckpt"
    eqw = {"both": load_checkpoint(eqw_path)} if eqw_path.exists() else None
    seqs = {Path(p).name: load_sequence(p) for p in args.data}
    t_lags = [int(x) for x in args.t_lags.split(",")]
    header = "variant\tt_lag\tk_mode\tMOTA\tsMOTSA\tIDF1\tIDs\tFrag\tFN\tFP\tMT\tML"
    print(header)
    lines = [header]
    for variant in ("loc", "shape", "loc+shape", "loc+G", "loc+shape+G"):
        branch = VARIANTS[variant][0]
        if branch not in models:
            continue
        for t_lag in t_lags:
            for k_mode in ("estimated", "oracle"):
                cons = {"mode": "mask_iou", "tau": 2, **rc.constraints}
                base = TrackerConfig(t_lag=t_lag, k_mode=k_mode, constraints=ConstraintConfig(**cons))
                reps = {
                    name: ablation_run(seq, variant, models, base_cfg=base)
                    for name, seq in seqs.items()
                }
                agg = aggregate(reps)
                row = (f"{variant}\t{t_lag}\t{k_mode}\t{agg.mota:.4f}\t{agg.smotsa:.4f}"
                       f"\t{agg.idf1:.4f}\t{agg.ids}\t{agg.frag}\t{agg.fn}\t{agg.fp}\t{agg.mt}\t{agg.ml_tracks}")
                print(row)
                lines.append(row)
    if eqw is not None:
        for t_lag in t_lags:
            for k_mode in ("estimated", "oracle"):
                base = TrackerConfig(
                    t_lag=t_lag, k_mode=k_mode,
                    constraints=ConstraintConfig(mode="mask_iou", tau=2),
                )
                reps = {
                    name: ablation_run(seq, "loc+shape+G", eqw, base_cfg=base)
                    for name, seq in seqs.items()
                }
                agg = aggregate(reps)
                row = (f"loc+shape+G[eqw]\t{t_lag}\t{k_mode}\t{agg.mota:.4f}\t{agg.smotsa:.4f}"
                       f"\t{agg.idf1:.4f}\t{agg.ids}\t{agg.frag}\t{agg.fn}\t{agg.fp}\t{agg.mt}\t{agg.ml_tracks}")
                print(row)
                lines.append(row)
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clustertrack", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic ground-truth sequence")
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--num-frames", dest="num_frames", type=int)
    g.add_argument("--frame-w", dest="frame_w", type=int)
    g.add_argument("--frame-h", dest="frame_h", type=int)
    g.add_argument("--object-size", dest="object_size", type=int)
    g.add_argument("--density", type=int)
    g.add_argument("--birth-prob", dest="birth_prob", type=float)
    g.add_argument("--mean-speed", dest="mean_speed", type=float)
    g.add_argument("--shape-set", dest="shape_set", choices=("sprites", "digits"))
    g.add_argument("--occlusion", choices=("amodal", "visible"))
    g.add_argument("--drop-prob", type=float, default=0.0, help="detector-noise drop rate")
    g.add_argument("--conf-noise", type=float, default=0.0, help="confidence degradation scale")
    g.add_argument("--png", action="store_true", help="also write composite frame PNGs")
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train an autoencoder on sequence directories")
    t.add_argument("--data", nargs="+", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--variant", choices=("both", "loc", "shape"), default="both")
    t.add_argument("--epochs", type=int, default=60)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--seed", type=int)
    t.add_argument("--mask-size", type=int)
    t.add_argument("--latent", type=int)
    t.add_argument("--conv-channels", help="comma-separated, e.g. 16,16,32,32,64")
    t.add_argument("--no-mtl", action="store_true", help="freeze both log-variances at zero")
    t.add_argument("--box-target-noise", type=float, default=0.0)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("embed", help="write latent codes for every detection")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_embed)

    k = sub.add_parser("track", help="assign identities and write a results file")
    k.add_argument("--model", required=True)
    k.add_argument("--data", required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--config")
    k.add_argument("--t-lag", dest="t_lag", type=int)
    k.add_argument("--lambda", dest="score_min", type=float,
                   help="cluster mean-confidence threshold")
    k.add_argument("--det-threshold", dest="det_threshold", type=float)
    k.add_argument("--tau", type=int, help="temporal radius of the spatial test (default 2)")
    k.add_argument("--constraint-mode", dest="constraint_mode",
                   choices=("mask_iou", "embedding_distance"),
                   help="spatial cannot-link cue (default mask_iou; embedding mode "
                        "uses the checkpoint's calibrated distance threshold)")
    k.add_argument("--embed-dist-max", dest="embed_dist_max", type=float)
    k.add_argument("--variant", choices=sorted(VARIANTS),
                   help="embedding/graph variant; default: model branches with the graph on")
    k.add_argument("--oracle-k", action="store_true",
                   help="use the ground-truth identity count per window")
    k.set_defaults(fn=cmd_track)

    v = sub.add_parser("evaluate", help="score a results file against ground truth")
    v.add_argument("--gt", required=True)
    v.add_argument("--results", required=True)
    v.add_argument("--out")
    v.add_argument("--box-iou", action="store_true", help="match by box IoU instead of masks")
    v.set_defaults(fn=cmd_evaluate)

    r = sub.add_parser("render", help="overlay tracked masks onto frames")
    r.add_argument("--data", required=True)
    r.add_argument("--results", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_render)

    a = sub.add_parser("ablate", help="run the embedding/graph variant grid")
    a.add_argument("--data", nargs="+", required=True)
    a.add_argument("--models", required=True,
                   help="directory with both.ckpt/loc.ckpt/shape.ckpt (+ optional nomtl.ckpt)")
    a.add_argument("--t-lags", default="3,5,8")
    a.add_argument("--out")
    a.add_argument("--config")
    a.set_defaults(fn=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
