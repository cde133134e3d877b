"""Command-line interface: gen / train / eval / check / bench.

Every run is reproducible from (config, seed): outputs other than wall-clock
timings are bit-identical across reruns.  Exit codes: 0 success, 1 failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import checks, report
from . import tensor as T
from .checkpoint import apply_checkpoint, save_checkpoint
from .config import (build_model_config, build_synth_config,
                     build_train_config, parse_config, write_config)
from .dataio import read_dataset, write_dataset
from .errors import ConfigError, ContractError, ParseError
from .model import PoseModel
from .synth import JOINT_NAMES, generate_synthetic
from .training import evaluate, train


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=None, help="override the seed")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one config entry")


def _load_config(args) -> dict:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return parse_config(args.config, overrides)


def _load_samples(cfg: dict, split: str = "data.dir"):
    """Dataset from disk, or synthesized in memory when synth_count is set."""
    if cfg[split]:
        return read_dataset(cfg[split])
    if split == "data.dir" and cfg["data.synth_count"] > 0:
        return generate_synthetic(build_synth_config(cfg), cfg["data.synth_count"])
    raise ConfigError(f"no dataset: set {split} or data.synth_count")


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    out = args.out or cfg["data.dir"] or os.path.join(cfg["out_dir"], "data")
    samples = generate_synthetic(build_synth_config(cfg), cfg["gen.count"])
    write_dataset(samples, out)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    samples = _load_samples(cfg)
    model = PoseModel(build_model_config(cfg))
    tc = build_train_config(cfg)

    log_path = os.path.join(out_dir, "train_log.csv")
    with open(log_path, "a") as log:
        def log_fn(epoch, step, loss, lr, wall_ms):
            log.write(f"{epoch}, {step}, {loss!r}, {lr!r}, {wall_ms:.1f}\n")
            log.flush()

        opt, history = train(model, samples, tc, log_fn=log_fn,
                             eval_every=1 if tc.target_mke_mm > 0 else 0)

    ckpt_path = os.path.join(out_dir, "checkpoint.mcm")
    save_checkpoint(model.parameters(), ckpt_path)
    write_config(cfg, os.path.join(out_dir, "config.resolved"))
    trained = evaluate(model, samples, seed=cfg["seed"])
    if cfg["figures"] and history:
        report.loss_curve(history, os.path.join(out_dir, "loss_curve.png"))
    print(f"steps: {len(history)}")
    print(f"final_loss: {history[-1][2]!r}" if history else "final_loss: n/a")
    print(f"train_mke_mm: {trained.mean_error_mm:.6f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    samples = _load_samples(cfg)
    model = PoseModel(build_model_config(cfg))
    ckpt = args.checkpoint or cfg["eval.checkpoint"]
    if ckpt:
        apply_checkpoint(model, ckpt)
    if model.cfg.num_joints != samples[0].num_joints:
        raise ContractError(
            f"model has {model.cfg.num_joints} joints but dataset has "
            f"{samples[0].num_joints}")

    result, pred_mm = evaluate(model, samples, seed=cfg["seed"],
                               collect_joints=True)
    gt_mm = np.stack([s.gt_joints for s in samples]) * 1000.0

    report_path = os.path.join(out_dir, "report.txt")
    with open(report_path, "w") as f:
        f.write("\n".join(result.lines()) + "\n")
    csv_path = os.path.join(out_dir, "per_sample.csv")
    with open(csv_path, "w") as f:
        f.write("sample_id, joint_id, error_mm\n")
        for s, pred in zip(samples, pred_mm):
            err = np.linalg.norm(pred - s.gt_joints * 1000.0, axis=1)
            for j, e in enumerate(err):
                f.write(f"{s.id}, {j}, {e!r}\n")
    if args.dump_joints:
        dump_path = os.path.join(out_dir, "pred_joints.txt")
        with open(dump_path, "w") as f:
            for s, pred in zip(samples, pred_mm):
                f.write(f"# {s.id}\n")
                for x, y, z in pred:
                    f.write(f"{x!r} {y!r} {z!r}\n")
        print(f"joints: {dump_path}")
    if cfg["figures"]:
        names = (JOINT_NAMES if len(result.per_joint_mm) == len(JOINT_NAMES)
                 else [str(i) for i in range(len(result.per_joint_mm))])
        report.per_joint_bar(result.per_joint_mm, names,
                             os.path.join(out_dir, "per_joint_error.png"))
        all_err = np.linalg.norm(pred_mm - gt_mm, axis=2).ravel()
        report.error_histogram(all_err, os.path.join(out_dir, "error_hist.png"))
    for line in result.lines()[:2]:
        print(line)
    print(f"report: {report_path}")
    return 0


def cmd_check(args) -> int:
    if args.inject_grad_fault:
        T.set_gradient_fault(args.inject_grad_fault)
    try:
        ok = checks.run_all()
    finally:
        T.set_gradient_fault(None)
    return 0 if ok else 1


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    model = PoseModel(build_model_config(cfg))
    if args.checkpoint:
        apply_checkpoint(model, args.checkpoint)
    frames = max(cfg["bench.frames"], 1)
    synth_cfg = build_synth_config(cfg)
    samples = generate_synthetic(synth_cfg, min(frames, 32))

    stages: dict[str, list[float]] = {}
    with T.no_grad():
        for i in range(frames):
            sample = samples[i % len(samples)]
            result = model.forward_sample(sample, point_seed=i,
                                          collect_timings=True)
            for key, ms in result.timings_ms.items():
                stages.setdefault(key, []).append(ms)

    rows = [(name, float(np.median(vals)), float(np.percentile(vals, 95)))
            for name, vals in stages.items()]
    csv_path = os.path.join(out_dir, "bench.csv")
    with open(csv_path, "w") as f:
        f.write("stage, median_ms, p95_ms\n")
        for name, med, p95 in rows:
            f.write(f"{name}, {med:.3f}, {p95:.3f}\n")
    if cfg["figures"]:
        report.bench_chart(rows, os.path.join(out_dir, "bench.png"))
    print(f"{'stage':18s} {'median_ms':>10s} {'p95_ms':>10s}")
    for name, med, p95 in rows:
        print(f"{name:18s} {med:10.3f} {p95:10.3f}")
    print(f"bench: {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcm",
        description="multi-modal correspondence state-space hand-pose toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", default=None, help="output dataset directory")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train on the configured dataset")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--dump-joints", action="store_true",
                   help="also write predicted joint coordinates per sample")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("check", help="run the registered property suites")
    _add_common(p)
    p.add_argument("--inject-grad-fault", default=None, metavar="OP",
                   help=argparse.SUPPRESS)  # negative control for the suites
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("bench", help="per-stage forward timing")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        rc = args.fn(args)
    except (ConfigError, ContractError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if rc == 0:
        print(f"done in {time.perf_counter() - t0:.1f}s")
    return rc


if __name__ == "__main__":
    sys.exit(main())
