"""Command-line entry points.

Subcommands: gen-data, train, eval, gradcheck, inspect-routing.
Exit codes: 0 success, 1 assertion/acceptance failure (failed gradcheck,
aborted training), 2 usage error (bad flags, malformed config/data/checkpoint).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, peek_checkpoint, save_checkpoint
from .checks import format_report, run_model_suite, run_op_suite
from .config import (Config, ConfigError, dump_config, load_config,
                     parse_config, save_config)
from .data import (DataFormatError, file_digest, gen_dataset, load_dataset,
                   save_dataset, spec_line, write_jsonl)
from .model import Model, trainable_param_formula
from .optim import AdamW
from .train import TrainAbort, evaluate, format_metrics, run_training


class UsageError(ValueError):
    pass


def _cmd_gen_data(args) -> int:
    cfg = load_config(args.spec)
    records = gen_dataset(cfg, args.seed, args.n)
    save_dataset(args.out, records, cfg)
    write_jsonl(args.out + ".jsonl", records)
    print(f"wrote {args.n} records to {args.out} (+ .jsonl)")
    print(f"sha256 {file_digest(args.out)}")
    return 0


def _apply_ablation(cfg: Config, name: str) -> Config:
    import dataclasses
    table = {"tapm": {"disable_tapm": True},
             "saclm": {"disable_saclm": True},
             "enc1": {"zero_encoder": 1},
             "enc2": {"zero_encoder": 2},
             "enc3": {"zero_encoder": 3}}
    if name not in table:
        raise UsageError(f"unknown ablation {name!r}; "
                         f"choose from {sorted(table)}")
    return dataclasses.replace(cfg, **table[name])


def _load_records(path, cfg: Config):
    records, spec = load_dataset(path)
    want = spec_line(cfg)
    if spec != want:
        raise DataFormatError(
            f"{path}: dataset spec does not match the config\n"
            f"  data:   {spec}\n  config: {want}")
    return records


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.ablate:
        cfg = _apply_ablation(cfg, args.ablate)
    records = _load_records(args.data, cfg)
    model = Model(cfg)
    opt = AdamW(model.store, cfg)

    n_train = sum(t.data.size for _, t in model.store.trainable_items())
    fused_dim = cfg.enc1_dim + cfg.enc2_dim + cfg.enc3_dim
    assert n_train == trainable_param_formula(cfg, fused_dim)
    print(f"trainable parameters: {n_train}")

    start = 0
    if args.resume:
        start = load_checkpoint(args.resume, model.store, opt,
                                config_text=dump_config(cfg))
        print(f"resumed from {args.resume} at step {start}")

    os.makedirs(args.out_dir, exist_ok=True)
    run_training(model, opt, records, start_step=start, log=print)
    ckpt = os.path.join(args.out_dir, "final.ckpt")
    save_checkpoint(ckpt, model.store, opt, cfg.total_steps, dump_config(cfg))
    save_config(cfg, os.path.join(args.out_dir, "config.txt"))
    print(f"saved {ckpt}")
    return 0


def _restore(ckpt_path):
    head = peek_checkpoint(ckpt_path)
    cfg = parse_config(head["config_text"])
    model = Model(cfg)
    load_checkpoint(ckpt_path, model.store, config_text=head["config_text"])
    return cfg, model, head["step"]


def _cmd_eval(args) -> int:
    cfg, model, step = _restore(args.ckpt)
    records = _load_records(args.data, cfg)
    metrics = evaluate(model, records)
    print(f"checkpoint step {step}, {len(records)} records")
    print(format_metrics(metrics))
    return 0


def _cmd_gradcheck(args) -> int:
    ok = True
    if args.scope in ("op", "both"):
        op_ok, rep = run_op_suite(eps=args.eps, tol=args.tol)
        print(format_report(rep))
        ok = ok and op_ok
    if args.scope in ("model", "both"):
        m_ok, rep = run_model_suite(eps=args.model_eps, tol=args.tol)
        print(format_report(rep))
        ok = ok and m_ok
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_inspect_routing(args) -> int:
    import json

    cfg, model, step = _restore(args.ckpt)
    records = _load_records(args.data, cfg)
    if cfg.disable_tapm:
        raise UsageError("checkpoint was trained with TAPM disabled; "
                         "there is no routing to inspect")
    from .params import seeded_rng
    sums = np.zeros((2, cfg.n_experts)); counts = np.zeros(2)
    dump = [] if args.dump_scores else None
    for lo in range(0, len(records), cfg.batch_size):
        batch = records[lo:lo + cfg.batch_size]
        out = model.forward_batch(batch, seeded_rng(9, lo))
        for r, w in zip(batch, out.routing.data):
            sums[r.task_id] += w
            counts[r.task_id] += 1
        if dump is not None and out.sac is not None:
            for j, r in enumerate(batch):
                dump.append({"index": r.index, "task_id": int(r.task_id),
                             "scores": out.sac.scores.data[j].round(6).tolist(),
                             "decisions": out.sac.decisions.data[j].tolist(),
                             "routing": out.routing.data[j].round(6).tolist()})
    if dump is not None:
        with open(args.dump_scores, "w") as f:
            for row in dump:
                f.write(json.dumps(row) + "\n")
        print(f"wrote per-example scores to {args.dump_scores}")
    print(f"checkpoint step {step}, {len(records)} records")
    header = "task      " + "".join(f"  expert{i}" for i in range(cfg.n_experts))
    print(header)
    means = []
    for tid, name in enumerate(("copy", "reverse")):
        if counts[tid] == 0:
            continue
        mean = sums[tid] / counts[tid]
        means.append(mean)
        print(f"{name:10s}" + "".join(f"  {w:.4f}" for w in mean))
    if len(means) == 2:
        print(f"L1 distance {np.abs(means[0] - means[1]).sum():.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tinyalm")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--spec", required=True, help="config file with the task spec")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_gen_data)

    t = sub.add_parser("train", help="train on a generated dataset")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.add_argument("--ablate", default=None,
                   choices=["tapm", "saclm", "enc1", "enc2", "enc3"])
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(fn=_cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    c.add_argument("--scope", choices=["op", "model", "both"], default="both")
    c.add_argument("--eps", type=float, default=1e-6,
                   help="FD step for the primitive sweep")
    c.add_argument("--model-eps", type=float, default=1e-5,
                   help="FD step for the end-to-end model check")
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(fn=_cmd_gradcheck)

    r = sub.add_parser("inspect-routing", help="per-task mean routing weights")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--dump-scores", default=None, metavar="FILE",
                   help="also write per-example S/D/routing as JSON lines")
    r.set_defaults(fn=_cmd_inspect_routing)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (ConfigError, DataFormatError, CheckpointError, UsageError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainAbort, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
