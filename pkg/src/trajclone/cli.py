"""Command-line entry points for the full pipeline.

    traj-clone gen-data      --config c.yaml --seed 0 --out runs/exp
    traj-clone train         --config c.yaml --out runs/exp [--agent ...]
    traj-clone finetune-cvar --config c.yaml --out runs/exp --checkpoint ...
    traj-clone eval          --config c.yaml --out runs/exp --checkpoint ...
    traj-clone grid-search   --config c.yaml --out runs/exp --grid 0,0.3,1.0
    traj-clone report        --out runs/exp
    traj-clone verify

Outputs are byte-identical for identical (config, seed), except the summary
timestamp.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, config_to_dict, load_config
from .dataset import load_dataset, record_demonstrations, save_dataset
from .evaluation import eval_closed_loop
from .reporting import generate_report, write_summary
from .training import (
    finetune_cvar,
    grid_search_weights,
    load_checkpoint,
    save_checkpoint,
    train,
)


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    ds = record_demonstrations(cfg, cfg.seed)
    path = out / "dataset.jsonl"
    save_dataset(ds, path)
    n_train = len(ds.split(ds.train_track_ids))
    n_val = len(ds.split(ds.val_track_ids))
    print(f"wrote {path} ({n_train} train / {n_val} val samples, "
          f"{ds.stats.episodes} episodes, "
          f"{ds.stats.expert_collisions} expert collisions)")
    return 0 if ds.stats.expert_collisions == 0 else 1


def _dataset_path(args, out: Path) -> Path:
    return Path(args.data) if args.data else out / "dataset.jsonl"


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    if args.agent:
        cfg = dataclasses.replace(cfg, agent=args.agent)
    if args.w_aff is not None:
        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, w_aff=args.w_aff))
    ds = load_dataset(_dataset_path(args, out))
    model = train(cfg, ds)
    name = args.name or cfg.agent
    path = out / f"checkpoint_{name}.json"
    save_checkpoint(model, path)
    last = model.meta["curves"][-1]
    print(f"wrote {path} (val loss {last['val_loss']:.4f}, "
          f"val CVaR-90 {last['val_cvar90']:.4f})")
    return 0


def cmd_finetune_cvar(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(_dataset_path(args, out))
    tuned = finetune_cvar(model, cfg, ds)
    name = args.name or f"{Path(args.checkpoint).stem.removeprefix('checkpoint_')}-cvar"
    path = out / f"checkpoint_{name}.json"
    save_checkpoint(tuned, path)
    last = tuned.meta["curves"][-1]
    print(f"wrote {path} (val loss {last['val_loss']:.4f}, "
          f"val CVaR-90 {last['val_cvar90']:.4f})")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    if args.agent == "expert":
        model, agent, name = None, "expert", "expert"
        report = eval_closed_loop(None, "expert", cfg, expert_mode=True)
    else:
        model = load_checkpoint(args.checkpoint)
        agent = args.agent or model.agent
        name = args.name or Path(args.checkpoint).stem.removeprefix("checkpoint_")
        report = eval_closed_loop(model, agent, cfg)
    with open(out / f"eval_{name}.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / f"traces_{name}.jsonl", "w") as fh:
        header = {"schema": "trajclone-traces", "agent": name,
                  "trace_dt": cfg.dt_sim * cfg.eval.trace_every}
        fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n")
        for ep_idx, ep in enumerate(report.episodes):
            for row in ep.trace:
                row = {"ep": ep_idx, "track": ep.track_id, **row}
                fh.write(json.dumps(row, separators=(",", ":"), sort_keys=True) + "\n")
    print(f"{name}: {report.miles_driven:.1f} mi, {report.collisions} collisions "
          f"({report.collisions_per_100mi:.2f}/100mi), "
          f"{report.mean_speed_mph:.1f} mph")
    return 0


def cmd_grid_search(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    ds = load_dataset(_dataset_path(args, out))
    grid = [float(w) for w in args.grid.split(",")]
    best, table = grid_search_weights(cfg, ds, grid)
    path = out / "grid_search.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["w_aff", "train_traj_loss",
                                                "val_traj_loss"])
        writer.writeheader()
        for row in table:
            writer.writerow(row)
    (out / "grid_search_best.json").write_text(
        json.dumps({"best_w_aff": best}, sort_keys=True) + "\n")
    print(f"best auxiliary weight: {best} (table in {path})")
    return 0


def cmd_report(args) -> int:
    out = _out_dir(args)
    written = generate_report(out)
    cfg = load_config(args.config) if args.config else None
    metrics_path = out / "ablation.csv"
    metrics = {}
    with open(metrics_path) as fh:
        for row in csv.DictReader(fh):
            metrics[row["agent"]] = {
                "collisions_per_100mi": float(row["collisions_per_100mi"]),
                "mean_speed_mph": float(row["mean_speed_mph"]),
            }
    write_summary(config_to_dict(cfg) if cfg else {}, metrics,
                  out / "summary.json")
    written.append("summary.json")
    print("wrote " + ", ".join(sorted(written)))
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all(seed=args.seed or 0)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"[{status}] {r.name}: {r.detail} ({r.seconds:.1f}s)")
        failed += 0 if r.passed else 1
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="traj-clone",
        description="imitation-learning driving lab: data, training, CVaR, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="YAML config file (defaults built in)")
        p.add_argument("--seed", type=int, help="override config seed")
        if needs_out:
            p.add_argument("--out", required=True, help="artifact directory")

    p = sub.add_parser("gen-data", help="record expert demonstrations")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="average-loss training phase")
    common(p)
    p.add_argument("--data", help="dataset path (default <out>/dataset.jsonl)")
    p.add_argument("--agent", choices=["trajectory-gmm", "trajectory-l2",
                                       "baseline-actuation"])
    p.add_argument("--w-aff", type=float, dest="w_aff",
                   help="auxiliary affordance weight override")
    p.add_argument("--name", help="checkpoint name (default agent kind)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("finetune-cvar", help="CVaR fine-tuning phase")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset path (default <out>/dataset.jsonl)")
    p.add_argument("--name")
    p.set_defaults(fn=cmd_finetune_cvar)

    p = sub.add_parser("eval", help="closed-loop evaluation")
    common(p)
    p.add_argument("--checkpoint", help="model checkpoint (omit for --agent expert)")
    p.add_argument("--agent", help="agent kind override, or 'expert'")
    p.add_argument("--name")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("grid-search", help="auxiliary-weight grid search")
    common(p)
    p.add_argument("--data")
    p.add_argument("--grid", default="0.0,0.1,0.3,1.0",
                   help="comma-separated auxiliary weights")
    p.set_defaults(fn=cmd_grid_search)

    p = sub.add_parser("report", help="emit tables and plot data")
    common(p)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("verify", help="run the numerical oracles")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
