"""Command-line entry point.

Subcommands: gen, train, aggregate, eval, flops, search, report.
Exit codes: 0 success, 2 validation error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import archflops, harness
from .core import SeededRng, load_embeddings_csv, save_embeddings_csv
from .errors import BudgetFaceError, DivergedLoss
from .metrics import roc_curve, tpr_at_fpr, verification_pairs
from .model import save_checkpoint
from .quality import aggregate, load_framesets_csv, save_framesets_csv
from .synth import gen_framesets, gen_identities


def _load_config(args) -> harness.ExperimentConfig:
    if args.config:
        with open(args.config) as fh:
            text = fh.read()
    else:
        text = harness.DEFAULT_CONFIG
    cfg = harness.parse_config(text)
    if args.seed is not None:
        cfg.data.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _outdir(cfg) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    root = SeededRng(cfg.data.seed)
    train_set, test_set = gen_identities(cfg.data, root.split(0))
    framesets = gen_framesets(cfg.data, test_set.prototypes, root.split(4))
    save_embeddings_csv(os.path.join(out, "train_inputs.csv"),
                        train_set.y.tolist(), train_set.x)
    save_embeddings_csv(os.path.join(out, "test_inputs.csv"),
                        test_set.y.tolist(), test_set.x)
    from .quality import FrameSet
    raw_sets = [FrameSet(fs.inputs, None, set_id=fs.set_id) for fs in framesets]
    save_framesets_csv(os.path.join(out, "framesets.csv"), raw_sets)
    print(f"wrote train/test inputs and {len(raw_sets)} frame sets to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    root = SeededRng(cfg.data.seed)
    train_set, _ = gen_identities(cfg.data, root.split(0))
    net, log = harness.train(cfg, train_set=train_set, rng=root.split(1))
    qsets = gen_framesets(cfg.data, train_set.prototypes, root.split(5))
    qx = np.concatenate([fs.inputs for fs in qsets])
    qy = np.concatenate([np.full(fs.inputs.shape[0], fs.identity) for fs in qsets])
    qw, _ = harness.fit_quality_regressor(net, qx, qy)
    ckpt = harness.checkpoint_from(net, cfg, cfg.schedule.total_iters, quality_w=qw)
    save_checkpoint(os.path.join(out, "checkpoint.bin"), ckpt)
    with open(os.path.join(out, "metrics.csv"), "w") as fh:
        fh.write(harness.metrics_csv(log))
    print(f"final loss {log[-1][2]:.4f}; checkpoint and metrics in {out}")
    return 0


def cmd_aggregate(args) -> int:
    sets = load_framesets_csv(args.framesets)
    ids = [s.set_id for s in sets]
    agg = np.stack([aggregate(s, args.policy) for s in sets])
    save_embeddings_csv(args.output, ids, agg)
    print(f"aggregated {len(sets)} sets with policy {args.policy}")
    return 0


def cmd_eval(args) -> int:
    ids, emb = load_embeddings_csv(args.embeddings)
    rng = SeededRng(args.seed if args.seed is not None else 0)
    scores = verification_pairs(emb, np.array(ids), args.pairing,
                                num_pairs=args.pairs, rng=rng)
    for fpr in args.fpr:
        if fpr < 1.0 / max(scores.impostor.size, 1):
            print(f"warning: fpr target {fpr:g} needs >= {int(1/fpr)} impostor "
                  f"pairs, have {scores.impostor.size}", file=sys.stderr)
    print("fpr_target,threshold,tpr")
    for fpr in args.fpr:
        tpr, thr = tpr_at_fpr(scores, fpr)
        print(f"{fpr:.17g},{thr:.17g},{tpr:.17g}")
    if args.roc:
        with open(args.roc, "w") as fh:
            fh.write("threshold,tpr,fpr\n")
            for p in roc_curve(scores):
                fh.write(f"{p.threshold:.17g},{p.tpr:.17g},{p.fpr:.17g}\n")
    return 0


def cmd_flops(args) -> int:
    with open(args.archfile) as fh:
        arch = archflops.parse_arch(fh.read())
    rows, total = archflops.arch_flops_breakdown(arch)
    print(f"{'layer':<24}{'flops':>16}  output")
    for name, fl, shape in rows:
        print(f"{name:<24}{fl:>16,}  {shape}")
    print(f"{'total':<24}{total:>16,}  ({total / 1e9:.2f} G)")
    return 0


def cmd_search(args) -> int:
    with open(args.archfile) as fh:
        base = archflops.parse_arch(fh.read())
    q = archflops.BudgetQuery(int(float(args.budget)),
                              [float(x) for x in args.depth_grid.split(",")],
                              [float(x) for x in args.width_grid.split(",")],
                              channel_rounding=args.round_channels)
    cands = archflops.expand_under_budget(base, q)
    print(f"{'blocks':<20}{'channels':<26}{'flops':>16}")
    for cand, fl in cands:
        stages = [it for it in cand.items if isinstance(it, archflops.StageSpec)]
        blocks = "[" + ",".join(str(s.blocks) for s in stages) + "]"
        chans = "[" + ",".join(str(s.channels) for s in stages) + "]"
        print(f"{blocks:<20}{chans:<26}{fl:>16,}")
    return 0


def cmd_report(args) -> int:
    cfg = _load_config(args)
    out = _outdir(cfg)
    rows, artifacts = harness.run_experiment(cfg)
    report = harness.report_csv(rows)
    path = os.path.join(out, "report.csv")
    with open(path, "w") as fh:
        fh.write(report)
    for loss_name, art in artifacts.items():
        with open(os.path.join(out, f"metrics_{loss_name}.csv"), "w") as fh:
            fh.write(harness.metrics_csv(art["log"]))
    print(report, end="")
    print(f"report written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="budgetface",
                                description="Flops-constrained face recognition toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None, help="output directory")

    common(sub.add_parser("gen", help="generate synthetic identity data"))
    common(sub.add_parser("train", help="train the toy embedding model"))

    ag = sub.add_parser("aggregate", help="collapse frame sets to set embeddings")
    ag.add_argument("framesets")
    ag.add_argument("--policy", choices=["avg", "weighted_sum", "top1", "qan_pp"],
                    default="qan_pp")
    ag.add_argument("--output", default="aggregated.csv")

    ev = sub.add_parser("eval", help="TPR@FPR on an embeddings CSV (id = label)")
    ev.add_argument("embeddings")
    ev.add_argument("--fpr", type=float, nargs="+", default=[1e-2, 1e-3])
    ev.add_argument("--pairing", choices=["all", "sampled"], default="all")
    ev.add_argument("--pairs", type=int, default=0)
    ev.add_argument("--seed", type=int, default=None)
    ev.add_argument("--roc", help="write full ROC CSV here")

    fl = sub.add_parser("flops", help="MAdd count of an architecture file")
    fl.add_argument("archfile")

    se = sub.add_parser("search", help="budget-constrained depth/width expansion")
    se.add_argument("archfile")
    se.add_argument("--budget", default="30e9")
    se.add_argument("--depth-grid", default="1.0,1.25,1.5,2.0")
    se.add_argument("--width-grid", default="0.75,1.0,1.125,1.25")
    se.add_argument("--round-channels", type=int, default=1)

    common(sub.add_parser("report", help="full train + evaluate experiment"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"gen": cmd_gen, "train": cmd_train, "aggregate": cmd_aggregate,
                "eval": cmd_eval, "flops": cmd_flops, "search": cmd_search,
                "report": cmd_report}
    try:
        return handlers[args.command](args)
    except DivergedLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (BudgetFaceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
