"""Command-line front end: generate deployments, train, evaluate, serve.

The experiment config is one JSON document; every run is fully determined
by it (plus an optional --seed override), so repeated invocations write
byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import statistics
import sys
from dataclasses import dataclass, field

from cellconn.dqn import TrainConfig, deployment_state, greedy_rollout, train
from cellconn.gnn import load_model, save_model
from cellconn.graph import capacity_matrix
from cellconn.metrics import coverage, jain_index, sum_throughput
from cellconn.netmodel import (Deployment, RadioConfig, generate_deployment,
                               load_deployment, save_deployment)
from cellconn.xapp import max_rsrp_graph, serve

# Eval deployments sit far from the training seed range so sweeps never
# evaluate on a deployment that was trained on.
EVAL_SEED_OFFSET = 1_000_000
EVAL_POINT_STRIDE = 10_000


class UsageError(ValueError):
    """Bad flags or config; maps to exit code 1."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a benchmark run needs, serializable as one JSON object."""

    n_cells_list: tuple[int, ...] = (6,)
    n_ues_list: tuple[int, ...] = (50,)
    density_list: tuple[float, ...] = ()   # cells per km^2; optional extra sweep
    n_train_deployments: int = 1000
    n_eval_deployments: int = 50
    hex_diameter_m: float = 500.0
    min_cell_sep_m: float = 50.0
    seed: int = 0
    deployments_dir: str | None = None  # train from files instead of inline generation
    radio: RadioConfig = field(default_factory=RadioConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def base_point(self) -> tuple[int, int]:
        """Training happens at the first size of the sweep."""
        return self.n_cells_list[0], self.n_ues_list[0]

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed,
                                   n_deployments=self.n_train_deployments)

    def hex_area_km2(self) -> float:
        r = self.hex_diameter_m / 2.0
        return 1.5 * math.sqrt(3.0) * r * r / 1e6


def _build(cls, doc: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise UsageError(f"{path}: unknown config keys {sorted(unknown)}")
    return cls(**doc)


def config_from_dict(doc: dict, path: str = "<config>") -> ExperimentConfig:
    doc = dict(doc)
    for key in ("n_cells_list", "n_ues_list", "density_list"):
        if key in doc:
            doc[key] = tuple(doc[key])
    if "radio" in doc:
        doc["radio"] = _build(RadioConfig, doc["radio"], path)
    if "train" in doc:
        doc["train"] = _build(TrainConfig, doc["train"], path)
    cfg = _build(ExperimentConfig, doc, path)
    if not cfg.n_cells_list or not cfg.n_ues_list:
        raise UsageError(f"{path}: n_cells_list and n_ues_list must be non-empty")
    if cfg.n_train_deployments < 1 or cfg.n_eval_deployments < 1:
        raise UsageError(f"{path}: deployment counts must be >= 1, got "
                         f"train={cfg.n_train_deployments} eval={cfg.n_eval_deployments}")
    return cfg


def load_config(path: str | None, seed: int | None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        try:
            cfg = config_from_dict(doc, path)
        except TypeError as exc:
            raise UsageError(f"{path}: {exc}") from exc
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


@dataclass(frozen=True)
class SweepPoint:
    n_cells: int
    n_ues: int
    density_cells_km2: float | None = None


def sweep_points(cfg: ExperimentConfig) -> list[SweepPoint]:
    """Size grid (cells x UEs), plus optional density points at fixed UE/cell."""
    points = [SweepPoint(c, u) for c in cfg.n_cells_list for u in cfg.n_ues_list]
    if cfg.density_list:
        base_c, base_u = cfg.base_point()
        per_cell = base_u / base_c
        for rho in cfg.density_list:
            n_cells = max(1, round(rho * cfg.hex_area_km2()))
            n_ues = max(1, round(n_cells * per_cell))
            points.append(SweepPoint(n_cells, n_ues, rho))
    return points


def train_deployment(cfg: ExperimentConfig, i: int) -> Deployment:
    c, u = cfg.base_point()
    return generate_deployment(cfg.seed + i, c, u, cfg.hex_diameter_m,
                               cfg.radio, cfg.min_cell_sep_m)


def eval_deployment(cfg: ExperimentConfig, point_idx: int, point: SweepPoint,
                    i: int) -> Deployment:
    seed = cfg.seed + EVAL_SEED_OFFSET + point_idx * EVAL_POINT_STRIDE + i
    return generate_deployment(seed, point.n_cells, point.n_ues,
                               cfg.hex_diameter_m, cfg.radio, cfg.min_cell_sep_m)


def cmd_generate(cfg: ExperimentConfig, out_dir: str) -> str:
    """Write every train/eval deployment as JSON plus a manifest; returns the
    manifest path."""
    dep_root = os.path.join(out_dir, "deployments")
    train_dir = os.path.join(dep_root, "train")
    os.makedirs(train_dir, exist_ok=True)
    manifest: dict = {"hex_diameter_m": cfg.hex_diameter_m, "seed": cfg.seed,
                      "train": [], "eval": []}
    for i in range(cfg.n_train_deployments):
        dep = train_deployment(cfg, i)
        rel = os.path.join("deployments", "train", f"dep_{dep.seed}.json")
        save_deployment(dep, os.path.join(out_dir, rel))
        manifest["train"].append({"seed": dep.seed, "n_cells": dep.n_cells,
                                  "n_ues": dep.n_ues, "file": rel})
    for pi, point in enumerate(sweep_points(cfg)):
        point_dir = os.path.join(dep_root, f"eval_{point.n_cells}c_{point.n_ues}u")
        os.makedirs(point_dir, exist_ok=True)
        entry = {"n_cells": point.n_cells, "n_ues": point.n_ues,
                 "density_cells_km2": point.density_cells_km2, "files": []}
        for i in range(cfg.n_eval_deployments):
            dep = eval_deployment(cfg, pi, point, i)
            rel = os.path.join("deployments", f"eval_{point.n_cells}c_{point.n_ues}u",
                               f"dep_{dep.seed}.json")
            save_deployment(dep, os.path.join(out_dir, rel))
            entry["files"].append({"seed": dep.seed, "file": rel})
        manifest["eval"].append(entry)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def _deployments_from_dir(cfg: ExperimentConfig) -> list[Deployment]:
    manifest_path = os.path.join(cfg.deployments_dir, "manifest.json")
    if not os.path.isdir(cfg.deployments_dir) or not os.path.isfile(manifest_path):
        raise UsageError(f"deployments_dir {cfg.deployments_dir!r} has no manifest.json "
                         "(run the generate command first)")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    return [load_deployment(os.path.join(cfg.deployments_dir, entry["file"]))
            for entry in manifest["train"]]


def cmd_train(cfg: ExperimentConfig, out_dir: str) -> tuple[str, str]:
    """Train at the base sweep point; writes model.json and trainlog.csv."""
    os.makedirs(out_dir, exist_ok=True)
    if cfg.deployments_dir:
        deps: object = _deployments_from_dir(cfg)
    else:
        deps = (train_deployment(cfg, i) for i in range(cfg.n_train_deployments))
    params, log = train(cfg.train_config(), deps)
    model_path = os.path.join(out_dir, "model.json")
    log_path = os.path.join(out_dir, "trainlog.csv")
    save_model(params, model_path)
    log.to_csv(log_path)
    return model_path, log_path


GAIN_COLUMNS = (
    "row_type", "n_cells", "n_ues", "density_cells_km2", "deployment_seed", "stat",
    "policy_throughput", "policy_coverage", "policy_jain",
    "baseline_throughput", "baseline_coverage", "baseline_jain",
    "gain_throughput_pct", "gain_coverage_pct", "gain_jain_pct",
    "excluded_throughput", "excluded_coverage", "excluded_jain",
)

_METRICS = ("throughput", "coverage", "jain")


def _gain_pct(policy: float, baseline: float) -> float | None:
    """Relative gain in percent; None marks a zero baseline (excluded rows)."""
    if baseline == 0.0:
        return None
    return 100.0 * (policy - baseline) / baseline


def evaluate_point(params, cfg: ExperimentConfig, point_idx: int,
                   point: SweepPoint) -> list[dict]:
    """Per-deployment policy/baseline metrics and gains for one sweep point,
    followed by the point's median and mean aggregate rows."""
    tc = cfg.train_config()
    rows: list[dict] = []
    gains: dict[str, list[float]] = {m: [] for m in _METRICS}
    excluded = {m: 0 for m in _METRICS}
    for i in range(cfg.n_eval_deployments):
        dep = eval_deployment(cfg, point_idx, point, i)
        cap = capacity_matrix(dep)
        policy_g = greedy_rollout(params, deployment_state(dep, tc, cap))
        base_g = max_rsrp_graph(dep, tc.d_max_m)
        row = {"row_type": "deployment", "n_cells": point.n_cells,
               "n_ues": point.n_ues, "density_cells_km2": point.density_cells_km2,
               "deployment_seed": dep.seed, "stat": ""}
        pol = {"throughput": sum_throughput(policy_g, cap),
               "coverage": coverage(policy_g, cap),
               "jain": jain_index(policy_g)}
        base = {"throughput": sum_throughput(base_g, cap),
                "coverage": coverage(base_g, cap),
                "jain": jain_index(base_g)}
        for m in _METRICS:
            row[f"policy_{m}"] = pol[m]
            row[f"baseline_{m}"] = base[m]
            gain = _gain_pct(pol[m], base[m])
            row[f"gain_{m}_pct"] = gain
            if gain is None:
                excluded[m] += 1
            else:
                gains[m].append(gain)
        rows.append(row)
    for stat, fn in (("median", statistics.median), ("mean", statistics.fmean)):
        agg = {"row_type": "aggregate", "n_cells": point.n_cells,
               "n_ues": point.n_ues, "density_cells_km2": point.density_cells_km2,
               "stat": stat}
        for m in _METRICS:
            agg[f"gain_{m}_pct"] = fn(gains[m]) if gains[m] else None
            agg[f"excluded_{m}"] = excluded[m]
        rows.append(agg)
    return rows


def cmd_eval(cfg: ExperimentConfig, model_path: str, out_dir: str) -> str:
    """Sweep the eval grid against the max-RSRP baseline; writes gainreport.csv."""
    params = load_model(model_path)
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for pi, point in enumerate(sweep_points(cfg)):
        rows.extend(evaluate_point(params, cfg, pi, point))
    path = os.path.join(out_dir, "gainreport.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=GAIN_COLUMNS, restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    return path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="cellconn",
                     description="Connection management: simulate, learn, serve.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", default=".", help="output directory")

    common(sub.add_parser("generate", help="write deployment files + manifest"))
    common(sub.add_parser("train", help="train a model, write model.json + trainlog.csv"))
    p_eval = sub.add_parser("eval", help="compare model vs max-RSRP, write gainreport.csv")
    common(p_eval)
    p_eval.add_argument("--model", required=True, help="model JSON from train")
    p_serve = sub.add_parser("serve", help="answer handover requests over NDJSON")
    p_serve.add_argument("--model", required=True)
    p_serve.add_argument("--deployment", required=True, help="deployment JSON")
    p_serve.add_argument("--endpoint", default="-",
                         help="'-' for stdin/stdout or host:port")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "serve":
            serve(args.model, args.deployment, args.endpoint)
            return 0
        cfg = load_config(args.config, args.seed)
        os.makedirs(args.out, exist_ok=True)
        if args.command == "generate":
            path = cmd_generate(cfg, args.out)
            print(f"wrote {path}")
        elif args.command == "train":
            model_path, log_path = cmd_train(cfg, args.out)
            print(f"wrote {model_path} and {log_path}")
        elif args.command == "eval":
            path = cmd_eval(cfg, args.model, args.out)
            print(f"wrote {path}")
        return 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # runtime failure -> exit 2, with the cause
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
