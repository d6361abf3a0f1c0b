"""Command-line entry points: trials, cohorts, the ISO bench, network
training/evaluation, and the live gateway."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import dsp
from .config import load_config, transport_endpoint
from .harness import (
    TrialConfig,
    cohort_table,
    eval_tracker_error,
    generate_training_set,
    run_cohort,
    run_iso_bench,
    run_trial,
    sample_phantom,
)
from .robot import DEFAULT_NOISE_SIGMA_UM, RobotKinematics
from .segnet import TrainConfig, train, train_single, write_manifest


def _trial_config(args) -> TrialConfig:
    raw = {}
    if args.config:
        raw = load_config(args.config)
    raw.pop("transport", None)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "mode", None):
        raw["tracker_mode"] = args.mode
    if "seed" not in raw:
        raise SystemExit("a seed is required (config 'seed' or --seed)")
    return TrialConfig.from_dict(raw)


def _ensure_out(args):
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_run_trial(args):
    cfg = _trial_config(args)
    out = _ensure_out(args)
    log_path = os.path.join(out, "trial.jsonl") if out else None
    res = run_trial(cfg, log_path=log_path)
    print(f"phase            {res.phase}")
    print(f"final_gap_um     {res.final_gap_um:.3f}")
    print(f"perforated       {res.perforated}")
    print(f"travel_um        {res.travel_um:.3f}")
    if res.completion_s is not None:
        print(f"completion_s     {res.completion_s:.3f}")
    if res.pneumo.demarcation_depth_um is not None:
        print(f"pneumo_depth_um  {res.pneumo.demarcation_depth_um:.3f}")
    print(f"type1_bubble     {res.pneumo.type1_bubble}")
    if log_path:
        print(f"event_log        {log_path}")
    return 0


def cmd_run_cohort(args):
    cfg = _trial_config(args)
    out = _ensure_out(args)
    stats, results = run_cohort(cfg, out_dir=out, label=args.label)
    table = cohort_table([(args.label, stats)])
    print(table)
    if out:
        path = os.path.join(out, f"{args.label}_stats.tsv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
        raw_path = os.path.join(out, f"{args.label}_trials.tsv")
        with open(raw_path, "w", encoding="utf-8") as fh:
            fh.write("trial\tseed\tfinal_gap_um\tperforated\tpneumo_um\ttype1\tcompletion_s\n")
            for i, r in enumerate(results):
                pneumo = "" if r.pneumo.demarcation_depth_um is None else \
                    f"{r.pneumo.demarcation_depth_um:.3f}"
                comp = "" if r.completion_s is None else f"{r.completion_s:.3f}"
                fh.write(f"{i}\t{r.seed}\t{r.final_gap_um:.3f}\t{int(r.perforated)}\t"
                         f"{pneumo}\t{int(r.pneumo.type1_bubble)}\t{comp}\n")
        print(f"# wrote {path} and {raw_path}")
    return 0


def cmd_iso_bench(args):
    kin = RobotKinematics()
    sigma = DEFAULT_NOISE_SIGMA_UM if args.noise_um is None else args.noise_um
    report = run_iso_bench(kin, noise_sigma_um=sigma, seed=args.seed)
    print(report.table())
    out = _ensure_out(args)
    if out:
        path = os.path.join(out, "iso_report.tsv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(report.table() + "\n")
        print(f"# wrote {path}")
    return 0


def cmd_train_net(args):
    out = _ensure_out(args) or "."
    os.makedirs(out, exist_ok=True)
    samples = generate_training_set(args.phantoms, args.frames, seed=args.seed)
    cfg = TrainConfig(seed=args.seed, epochs=args.epochs, folds=args.folds)
    print(f"dataset: {len(samples)} frames from {args.phantoms} phantoms")
    if args.folds > 1:
        result = train(samples, cfg)
        print("fold\tn_train\tn_test\tpixel_acc\tboundary_err_px")
        for m in result.metrics:
            print(f"{m.fold}\t{m.n_train}\t{m.n_test}\t{m.pixel_accuracy:.4f}\t"
                  f"{m.boundary_error_px:.2f}")
        with open(os.path.join(out, "fold_metrics.tsv"), "w", encoding="utf-8") as fh:
            fh.write("fold\tn_train\tn_test\tpixel_acc\tboundary_err_px\n")
            for m in result.metrics:
                fh.write(f"{m.fold}\t{m.n_train}\t{m.n_test}\t{m.pixel_accuracy:.4f}\t"
                         f"{m.boundary_error_px:.2f}\n")
    net, losses = train_single(samples, cfg)
    weights = os.path.join(out, "segnet.weights")
    net.save(weights)
    print(f"full-data training loss per epoch: {[round(l, 4) for l in losses]}")
    print(f"wrote {weights}")
    if args.write_fixtures:
        fx_dir = os.path.join(out, "fixtures")
        os.makedirs(fx_dir, exist_ok=True)
        entries = []
        for i, s in enumerate(samples):
            frame_path = os.path.join(fx_dir, f"frame{i:04d}.mscn")
            mask_path = os.path.join(fx_dir, f"mask{i:04d}.npy")
            dsp.write_mscan_fixture(frame_path, dsp.MScan(pixels=s.pixels), dsp.DepthAxis())
            np.save(mask_path, s.mask)
            entries.append((s.phantom_id, frame_path, mask_path))
        manifest = os.path.join(out, "manifest.tsv")
        write_manifest(manifest, entries)
        print(f"wrote {manifest}")
    return 0


def cmd_eval_tracker(args):
    from .segnet import SegNet

    net = SegNet.load(args.weights)
    errors = []
    for k in range(args.phantoms):
        phantom = sample_phantom(np.random.default_rng(args.seed * 1000 + k))
        errors += eval_tracker_error(net, phantom, seed=args.seed + k, n_frames=args.frames)
    if not errors:
        print("no valid membrane picks")
        return 1
    print(f"n_frames          {len(errors)}")
    print(f"mean_dm_error_um  {np.mean(errors):.3f}")
    print(f"std_dm_error_um   {np.std(errors):.3f}")
    print(f"p95_dm_error_um   {np.percentile(errors, 95):.3f}")
    return 0


def cmd_serve(args):
    from .gateway import serve

    cfg = _trial_config(args)
    cfg = TrialConfig(**{**cfg.__dict__, "emit_frames": True})
    raw = load_config(args.config) if args.config else {}
    host, tcp_port, ws_port = transport_endpoint(raw)
    if args.host:
        host = args.host
    if args.port is not None:
        tcp_port = args.port
    if args.ws_port is not None:
        ws_port = args.ws_port
    serve(cfg, host, tcp_port, ws_port, max_cycles=args.cycles,
          realtime=not args.fast)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="dalksim",
                                     description="closed-loop needle-insertion simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_seed_default=None):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, default=needs_seed_default)
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("run-trial", help="run one closed-loop trial")
    common(p)
    p.add_argument("--mode", choices=["oracle-mask", "neural"])
    p.set_defaults(func=cmd_run_trial)

    p = sub.add_parser("run-cohort", help="run a seeded cohort and emit stats")
    common(p)
    p.add_argument("--mode", choices=["oracle-mask", "neural"])
    p.add_argument("--label", default="cohort")
    p.set_defaults(func=cmd_run_cohort)

    p = sub.add_parser("iso-bench", help="open-loop positioning bench")
    common(p, needs_seed_default=0)
    p.add_argument("--noise-um", type=float, default=None,
                   help="actuation noise sigma (default: calibrated model)")
    p.set_defaults(func=cmd_iso_bench)

    p = sub.add_parser("train-net", help="train the segmentation network")
    common(p, needs_seed_default=0)
    p.add_argument("--phantoms", type=int, default=10)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--write-fixtures", action="store_true")
    p.set_defaults(func=cmd_train_net)

    p = sub.add_parser("eval-tracker", help="membrane tracking error of a weights file")
    common(p, needs_seed_default=0)
    p.add_argument("--weights", required=True)
    p.add_argument("--phantoms", type=int, default=5)
    p.add_argument("--frames", type=int, default=10)
    p.set_defaults(func=cmd_eval_tracker)

    p = sub.add_parser("serve", help="start the live gateway for the console")
    common(p)
    p.add_argument("--mode", choices=["oracle-mask", "neural"])
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--ws-port", type=int)
    p.add_argument("--cycles", type=int, default=None)
    p.add_argument("--fast", action="store_true", help="run unpaced")
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
