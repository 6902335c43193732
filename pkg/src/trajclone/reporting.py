"""Flat-file experiment reports: ablation table, CVaR percentile curves, loss curves.

Everything is CSV or JSON so any plotting tool can render the figures; nothing
here depends on a graphics stack. Output bytes are deterministic except for
the single timestamp field in the summary.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

ABLATION_ORDER = ("baseline-actuation", "trajectory-gmm", "gmm-affordance",
                  "gmm-affordance-cvar")


def write_ablation_table(rows: list[dict], out_dir: Path):
    """rows: dicts with agent, miles, collisions, collisions_per_100mi, mean_speed_mph."""
    out_dir = Path(out_dir)
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "agent", "miles", "collisions", "collisions_per_100mi",
            "mean_speed_mph"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    width = max(len(r["agent"]) for r in rows) + 2
    lines = [f"{'agent':<{width}}{'miles':>9}{'coll':>6}{'per100mi':>10}{'mph':>7}"]
    for r in rows:
        lines.append(f"{r['agent']:<{width}}{r['miles']:>9.1f}"
                     f"{r['collisions']:>6d}{r['collisions_per_100mi']:>10.2f}"
                     f"{r['mean_speed_mph']:>7.1f}")
    (out_dir / "ablation.txt").write_text("\n".join(lines) + "\n")


def write_percentile_curve(curve, path):
    """curve: list of (percentile, cvar) pairs."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["percentile", "cvar"])
        for p, v in curve:
            writer.writerow([p, repr(float(v))])


def write_loss_curves(curves: list[dict], path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "epoch", "phase", "train_loss", "val_loss", "val_cvar90"])
        writer.writeheader()
        for row in curves:
            writer.writerow(row)


def write_summary(config_dict: dict, metrics: dict, path,
                  timestamp: bool = True):
    payload = {
        "config": config_dict,
        "metrics": metrics,
    }
    if timestamp:
        payload["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def generate_report(artifacts_dir) -> list[str]:
    """Collect eval reports and checkpoints from a pipeline run directory.

    Expects eval_<name>.json and checkpoint_<name>.json files as written by
    the CLI; missing inputs are reported by name. Returns the list of files
    written.
    """
    art = Path(artifacts_dir)
    eval_files = sorted(art.glob("eval_*.json"))
    ckpt_files = sorted(art.glob("checkpoint_*.json"))
    missing = []
    if not eval_files:
        missing.append("eval_<agent>.json (run `traj-clone eval` first)")
    if not ckpt_files:
        missing.append("checkpoint_<agent>.json (run `traj-clone train` first)")
    if missing:
        raise FileNotFoundError("report inputs missing: " + "; ".join(missing))

    written = []
    rows = []
    metrics = {}
    for path in eval_files:
        with open(path) as fh:
            rep = json.load(fh)
        name = path.stem.removeprefix("eval_")
        rows.append({
            "agent": name,
            "miles": rep["miles_driven"],
            "collisions": rep["collisions"],
            "collisions_per_100mi": rep["collisions_per_100mi"],
            "mean_speed_mph": rep["mean_speed_mph"],
        })
        metrics[name] = {
            "collisions_per_100mi": rep["collisions_per_100mi"],
            "mean_speed_mph": rep["mean_speed_mph"],
            "miles": rep["miles_driven"],
        }
    order = {name: i for i, name in enumerate(ABLATION_ORDER)}
    rows.sort(key=lambda r: (order.get(r["agent"], len(order)), r["agent"]))
    write_ablation_table(rows, art)
    written += ["ablation.csv", "ablation.txt"]

    for path in ckpt_files:
        with open(path) as fh:
            meta = json.load(fh).get("meta", {})
        name = path.stem.removeprefix("checkpoint_")
        for key, suffix in (("val_percentile_curve", "avg"),
                            ("val_percentile_curve_cvar", "cvar")):
            if key in meta:
                fname = f"cvar_percentile_{name}_{suffix}.csv"
                write_percentile_curve(meta[key], art / fname)
                written.append(fname)
        if meta.get("curves"):
            fname = f"loss_curves_{name}.csv"
            write_loss_curves(meta["curves"], art / fname)
            written.append(fname)
    return written
