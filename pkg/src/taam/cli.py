"""Command-line entry point.

Subcommands:
    run        train a stream and write matrix.csv, summary.json, per-task
               training logs, and checkpoint.bin into the output directory
    eval       re-evaluate the last completed stage of a saved checkpoint
    ablate     run the three method variants and print a comparison table
    gradcheck  end-to-end finite-difference check of the training gradients
    gen-sbm    write a synthetic block-model graph in the citation text format

The output directory is resolved as --out flag, then $TAAM_OUT_DIR, then the
config's out_dir.  Exit codes: 0 ok, 1 runtime/data failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint
from .config import ABLATIONS, METHODS, RunConfig, make_config, read_config_file
from .datasets import parse_sbm_spec, resolve_dataset, write_planetoid
from .errors import ContractError, IntegrityError, NumericError, ParseError
from .graph import generate_sbm
from .harness import build_stream, evaluate_final_row, run_continual, write_matrix_csv
from .training import end_to_end_grad_check

log = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train a continual stream and write artifacts")
    run.add_argument("--config", help="key = value config file")
    run.add_argument("--dataset", help="file prefix or sbm:spec")
    run.add_argument("--method", choices=METHODS)
    run.add_argument("--protocol", help="equal:K or unequal:a,b,...")
    run.add_argument("--seed", type=int)
    run.add_argument("--ablation", choices=ABLATIONS)
    run.add_argument("--epochs", type=int)
    run.add_argument("--precision", choices=("f64", "f32"))
    run.add_argument("--out", help="output directory")
    run.add_argument("--resume", help="checkpoint to continue from")
    run.add_argument("--stop-after", type=int, default=None,
                     help="stop after this stage (for scripted interruption)")

    ev = sub.add_parser("eval", help="re-evaluate a checkpoint's last stage")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", help="override the dataset location if it moved")
    ev.add_argument("--out", help="where to write eval_summary.json")

    ab = sub.add_parser("ablate", help="run nsm_only, retrieval_only, and full variants")
    ab.add_argument("--config", help="key = value config file")
    ab.add_argument("--dataset", help="file prefix or sbm:spec")
    ab.add_argument("--protocol", help="equal:K or unequal:a,b,...")
    ab.add_argument("--seed", type=int)
    ab.add_argument("--epochs", type=int)
    ab.add_argument("--out", help="output directory (one subdir per variant)")

    gc = sub.add_parser("gradcheck", help="finite-difference check of training gradients")
    gc.add_argument("--seeds", type=int, default=20)
    gc.add_argument("--nodes", type=int, default=10)
    gc.add_argument("--tolerance", type=float, default=1e-4)

    gen = sub.add_parser("gen-sbm", help="write a synthetic graph as .content/.cites")
    gen.add_argument("--out", required=True, help="output file prefix")
    gen.add_argument("--classes", type=int, default=6)
    gen.add_argument("--nodes-per-class", type=int, default=60)
    gen.add_argument("--p-in", type=float, default=0.1)
    gen.add_argument("--p-out", type=float, default=0.02)
    gen.add_argument("--dim", type=int, default=32)
    gen.add_argument("--separation", type=float, default=8.0)
    gen.add_argument("--noise", type=float, default=1.0)
    gen.add_argument("--seed", type=int, default=0)
    return parser


def _resolve_config(args, forced: dict | None = None) -> RunConfig:
    file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
    overrides = {
        key: getattr(args, key, None)
        for key in ("dataset", "method", "protocol", "seed", "ablation", "epochs", "precision")
    }
    if forced:
        overrides.update(forced)
    cfg = make_config(file_values, overrides)
    out = getattr(args, "out", None) or os.environ.get("TAAM_OUT_DIR")
    if out:
        cfg.out_dir = out
    return cfg


def _dump_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_one(cfg: RunConfig, out_dir: str, resume_path=None, stop_after=None) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    graph = resolve_dataset(cfg.dataset, cfg.seed, row_normalize=cfg.row_normalize)
    classes_per_task, sizes = cfg.protocol_spec()
    stream = build_stream(
        graph,
        classes_per_task=classes_per_task or 2,
        task_sizes=sizes,
        seed=cfg.seed,
        shuffle_classes=cfg.shuffle_classes,
        train_frac=cfg.train_frac,
        val_frac=cfg.val_frac,
    )
    resume = load_checkpoint(resume_path) if resume_path else None
    checkpoint_path = os.path.join(out_dir, "checkpoint.bin")
    result = run_continual(
        stream, cfg, resume=resume, checkpoint_path=checkpoint_path, stop_after=stop_after
    )
    write_matrix_csv(os.path.join(out_dir, "matrix.csv"), result.matrix, result.completed)
    summary = result.summary(cfg)
    _dump_json(os.path.join(out_dir, "summary.json"), summary)
    for task_log in result.task_logs:
        log_path = os.path.join(out_dir, f"task_{task_log.task_id:02d}_train.log")
        with open(log_path, "w") as fh:
            for entry in task_log.epochs:
                fh.write(entry.line() + "\n")
    return summary


def _cmd_run(args) -> int:
    cfg = _resolve_config(args)
    summary = _run_one(cfg, cfg.out_dir, resume_path=args.resume, stop_after=args.stop_after)
    print(
        f"method={summary['method']} dataset={summary['dataset']} seed={summary['seed']} "
        f"stages={summary['stages_completed']}/{summary['tasks_total']} "
        f"AA={summary['AA']} AF={summary['AF']}"
    )
    print(f"artifacts in {cfg.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    cfg = make_config(state.config, {"dataset": args.dataset} if args.dataset else {})
    graph = resolve_dataset(cfg.dataset, cfg.seed, row_normalize=cfg.row_normalize)
    classes_per_task, sizes = cfg.protocol_spec()
    stream = build_stream(
        graph,
        classes_per_task=classes_per_task or 2,
        task_sizes=sizes,
        seed=cfg.seed,
        shuffle_classes=cfg.shuffle_classes,
        train_frac=cfg.train_frac,
        val_frac=cfg.val_frac,
    )
    row, decisions = evaluate_final_row(stream, cfg, state)
    payload = {
        "checkpoint": args.checkpoint,
        "stage": state.stage,
        "accuracies": [float(v) for v in row],
        "AA": float(np.mean(row)),
        "retrieval": decisions,
    }
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    _dump_json(os.path.join(out_dir, "eval_summary.json"), payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def _cmd_ablate(args) -> int:
    rows = []
    for variant in ("nsm_only", "retrieval_only", "full"):
        cfg = _resolve_config(args, forced={"method": "taam", "ablation": variant})
        out_dir = os.path.join(cfg.out_dir, variant)
        summary = _run_one(cfg, out_dir)
        rows.append((variant, summary["AA"], summary["AF"]))
    print(f"{'variant':<16}{'AA':>10}{'AF':>10}")
    for variant, aa, af in rows:
        af_text = f"{af:.2f}" if af is not None else "-"
        print(f"{variant:<16}{aa:>10.2f}{af_text:>10}")
    return 0


def _cmd_gradcheck(args) -> int:
    worst_overall = 0.0
    failed = False
    for seed in range(args.seeds):
        worst = end_to_end_grad_check(seed, num_nodes=args.nodes)
        worst_overall = max(worst_overall, worst)
        status = "ok" if worst <= args.tolerance else "FAIL"
        print(f"seed={seed} max_rel_err={worst:.3e} {status}")
        failed = failed or worst > args.tolerance
    print(f"worst over {args.seeds} seeds: {worst_overall:.3e} (tolerance {args.tolerance:g})")
    return 1 if failed else 0


def _cmd_gen_sbm(args) -> int:
    graph = generate_sbm(
        args.classes,
        args.nodes_per_class,
        args.p_in,
        args.p_out,
        args.dim,
        args.separation,
        args.seed,
        feature_noise=args.noise,
    )
    parent = os.path.dirname(args.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    content, cites = write_planetoid(graph, args.out)
    print(f"wrote {content} ({graph.num_nodes} nodes) and {cites} ({graph.num_edges // 2} edges)")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "eval": _cmd_eval,
        "ablate": _cmd_ablate,
        "gradcheck": _cmd_gradcheck,
        "gen-sbm": _cmd_gen_sbm,
    }
    try:
        return handlers[args.command](args)
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ParseError, IntegrityError, NumericError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
