"""Command-line front end: experiment configs, orchestration, CSV and chart
emission.

Every run directory receives a manifest recording the normalized config (seeds
included), the package version, and a checksum per emitted file. Re-running
with the same config reproduces the CSVs byte for byte; charts are always
re-renderable from the CSVs alone via the ``plot`` subcommand.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, baselines, charts, netsim, solvers, stateaug
from .errors import SchemaError
from .gnn import load_checkpoint, save_checkpoint
from .stateaug import TrainConfig
from .topology import (BudgetSplit, channel_from_distance, generate_knn, load_graphml,
                       perturb, save_graphml, uniform_flows)

KINDS = ("unparam-compare", "sa-train", "sa-eval", "scale-nodes", "scale-flows",
         "perturb", "transfer", "route-map", "dual-trace", "topology-zoo")

_SUBCOMMAND_KINDS = {
    "train": ("sa-train",),
    "eval": ("sa-eval", "perturb", "transfer", "route-map", "dual-trace",
             "topology-zoo"),
    "compare": ("unparam-compare",),
    "sweep": ("scale-nodes", "scale-flows"),
}


# ---------------------------------------------------------------------------
# config schema

def _expect(doc: dict, path: str, name: str, types, default=None, required=False):
    if name not in doc or doc[name] is None:
        if required:
            raise SchemaError(f"{path}.{name}", "required field is missing")
        return default
    value = doc[name]
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise SchemaError(f"{path}.{name}", f"expected {types}, got bool")
    if not isinstance(value, types):
        raise SchemaError(
            f"{path}.{name}",
            f"expected {getattr(types, '__name__', types)}, got {type(value).__name__}")
    return value


def _number(doc, path, name, default=None, required=False, minimum=None):
    value = _expect(doc, path, name, (int, float), default=default, required=required)
    if value is not None and minimum is not None and value < minimum:
        raise SchemaError(f"{path}.{name}", f"must be >= {minimum}, got {value}")
    return value


def _check_unknown(doc: dict, path: str, known: set[str]) -> None:
    for key in doc:
        if key not in known:
            raise SchemaError(f"{path}.{key}", "unknown field")


def _arrival_mean(doc, path):
    value = doc.get("arrival_mean", {"budget": [5.5, 7.5], "skew": 2.0})
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if value < 0:
            raise SchemaError(f"{path}.arrival_mean", "must be non-negative")
        return float(value)
    if (isinstance(value, list) and len(value) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        low, high = float(value[0]), float(value[1])
        if low < 0 or high < low:
            raise SchemaError(f"{path}.arrival_mean", f"invalid range {value}")
        return [low, high]
    if isinstance(value, dict):
        known = {"budget", "skew", "offset"}
        for key in value:
            if key not in known:
                raise SchemaError(f"{path}.arrival_mean.{key}", "unknown field")
        budget = value.get("budget")
        if (not isinstance(budget, list) or len(budget) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                           for v in budget)):
            raise SchemaError(f"{path}.arrival_mean.budget",
                              "expected a [low, high] pair")
        try:
            BudgetSplit(low=float(budget[0]), high=float(budget[1]),
                        skew=float(value.get("skew", 2.0)),
                        offset=float(value.get("offset", 0.15)))
        except Exception as exc:
            raise SchemaError(f"{path}.arrival_mean", str(exc))
        return {"budget": [float(budget[0]), float(budget[1])],
                "skew": float(value.get("skew", 2.0)),
                "offset": float(value.get("offset", 0.15))}
    raise SchemaError(f"{path}.arrival_mean",
                      "expected a number, a [low, high] pair, or a budget object")


def _normalize_topology(doc: dict) -> dict:
    _check_unknown(doc, "topology", {"n", "k", "d_c", "capacity", "graphml"})
    return {
        "n": int(_number(doc, "topology", "n", default=10, minimum=1)),
        "k": int(_number(doc, "topology", "k", default=4, minimum=0)),
        "d_c": float(_number(doc, "topology", "d_c", default=1.0)),
        "capacity": float(_number(doc, "topology", "capacity", default=10.0, minimum=0)),
        "graphml": _expect(doc, "topology", "graphml", str),
    }


def _normalize_flows(doc: dict) -> dict:
    _check_unknown(doc, "flows", {"count", "arrival_mean", "arrival_dist", "destinations"})
    dist = _expect(doc, "flows", "arrival_dist", str, default="exponential")
    if dist not in netsim.ARRIVAL_DISTRIBUTIONS:
        raise SchemaError("flows.arrival_dist",
                          f"expected one of {netsim.ARRIVAL_DISTRIBUTIONS}, got {dist!r}")
    dests = _expect(doc, "flows", "destinations", list)
    if dests is not None and not all(isinstance(d, int) for d in dests):
        raise SchemaError("flows.destinations", "expected a list of node ids")
    return {
        "count": int(_number(doc, "flows", "count", default=4, minimum=1)),
        "arrival_mean": _arrival_mean(doc, "flows"),
        "arrival_dist": dist,
        "destinations": dests,
    }


def _normalize_train(doc: dict) -> dict:
    known = {"horizon", "period", "batch", "epochs", "lr", "rho", "rho_decay",
             "mu_low", "mu_high", "widths", "taps", "gso_normalization"}
    _check_unknown(doc, "train", known)
    widths = _expect(doc, "train", "widths", list, default=[2, 16, 8])
    if not all(isinstance(w, int) and w >= 1 for w in widths):
        raise SchemaError("train.widths", "expected a list of positive ints")
    norm = _expect(doc, "train", "gso_normalization", str, default="none")
    return {
        "horizon": int(_number(doc, "train", "horizon", default=100, minimum=1)),
        "period": int(_number(doc, "train", "period", default=5, minimum=1)),
        "batch": int(_number(doc, "train", "batch", default=16, minimum=1)),
        "epochs": int(_number(doc, "train", "epochs", default=30, minimum=0)),
        "lr": float(_number(doc, "train", "lr", default=0.05)),
        "rho": float(_number(doc, "train", "rho", default=0.005, minimum=0)),
        "rho_decay": float(_number(doc, "train", "rho_decay", default=0.98)),
        "mu_low": float(_number(doc, "train", "mu_low", default=1.0, minimum=0)),
        "mu_high": float(_number(doc, "train", "mu_high", default=5.0, minimum=0)),
        "widths": widths,
        "taps": int(_number(doc, "train", "taps", default=2, minimum=1)),
        "gso_normalization": norm,
    }


def _normalize_solver(doc: dict) -> dict:
    known = {"iters", "dd_iters", "gamma_phi", "dd_gamma_phi", "gamma_mu",
             "rho0", "decay", "inner_steps"}
    _check_unknown(doc, "solver", known)
    iters = int(_number(doc, "solver", "iters", default=30, minimum=1))
    return {
        "iters": iters,
        "dd_iters": int(_number(doc, "solver", "dd_iters", default=iters, minimum=1)),
        "gamma_phi": float(_number(doc, "solver", "gamma_phi", default=0.05)),
        "dd_gamma_phi": float(_number(doc, "solver", "dd_gamma_phi", default=0.01)),
        "gamma_mu": float(_number(doc, "solver", "gamma_mu", default=0.01, minimum=0)),
        "rho0": float(_number(doc, "solver", "rho0", default=0.5)),
        "decay": float(_number(doc, "solver", "decay", default=0.98)),
        "inner_steps": int(_number(doc, "solver", "inner_steps", default=50, minimum=1)),
    }


def _normalize_eval(doc: dict) -> dict:
    known = {"horizon", "period", "gamma_mu", "checkpoint", "baselines", "seeds",
             "flow", "dd_iters"}
    _check_unknown(doc, "eval", known)
    seeds = _expect(doc, "eval", "seeds", list, default=[0])
    if not all(isinstance(s, int) for s in seeds):
        raise SchemaError("eval.seeds", "expected a list of ints")
    return {
        "horizon": int(_number(doc, "eval", "horizon", default=100, minimum=1)),
        "period": int(_number(doc, "eval", "period", default=5, minimum=1)),
        "gamma_mu": float(_number(doc, "eval", "gamma_mu", default=0.1, minimum=0)),
        "checkpoint": _expect(doc, "eval", "checkpoint", str),
        "baselines": _expect(doc, "eval", "baselines", bool, default=False),
        "seeds": seeds,
        "flow": int(_number(doc, "eval", "flow", default=0, minimum=0)),
        "dd_iters": int(_number(doc, "eval", "dd_iters", default=300, minimum=1)),
    }


def _normalize_sweep(doc: dict) -> dict:
    _check_unknown(doc, "sweep", {"values", "epochs", "batch", "workers"})
    values = _expect(doc, "sweep", "values", list, required=True)
    if not values or not all(isinstance(v, int) and v >= 1 for v in values):
        raise SchemaError("sweep.values", "expected a non-empty list of positive ints")
    return {
        "values": values,
        "epochs": int(_number(doc, "sweep", "epochs", default=10, minimum=0)),
        "batch": int(_number(doc, "sweep", "batch", default=8, minimum=1)),
        "workers": int(_number(doc, "sweep", "workers", default=1, minimum=1)),
    }


def _normalize_perturb(doc: dict) -> dict:
    _check_unknown(doc, "perturb", {"fraction", "magnitude", "seeds"})
    fraction = float(_number(doc, "perturb", "fraction", default=0.5, minimum=0))
    magnitude = float(_number(doc, "perturb", "magnitude", default=0.2, minimum=0))
    seeds = _expect(doc, "perturb", "seeds", list, default=[0, 1, 2, 3, 4])
    if fraction > 1:
        raise SchemaError("perturb.fraction", "must lie in [0, 1]")
    if not all(isinstance(s, int) for s in seeds):
        raise SchemaError("perturb.seeds", "expected a list of ints")
    return {"fraction": fraction, "magnitude": magnitude, "seeds": seeds}


def _normalize_zoo(doc: dict) -> dict:
    _check_unknown(doc, "zoo", {"files", "d_c"})
    files = _expect(doc, "zoo", "files", list, required=True)
    if not files or not all(isinstance(f, str) for f in files):
        raise SchemaError("zoo.files", "expected a non-empty list of paths")
    return {"files": files, "d_c": float(_number(doc, "zoo", "d_c", default=1.0))}


_REQUIRED_SECTIONS = {
    "unparam-compare": ("topology", "flows", "solver"),
    "sa-train": ("topology", "flows", "train"),
    "sa-eval": ("topology", "flows", "eval"),
    "scale-nodes": ("topology", "flows", "train", "eval", "sweep"),
    "scale-flows": ("topology", "flows", "train", "eval", "sweep"),
    "perturb": ("topology", "flows", "eval", "perturb"),
    "transfer": ("topology", "flows", "eval", "sweep"),
    "route-map": ("topology", "flows", "eval"),
    "dual-trace": ("topology", "flows", "eval"),
    "topology-zoo": ("flows", "eval", "zoo"),
}

_NORMALIZERS = {
    "topology": _normalize_topology,
    "flows": _normalize_flows,
    "train": _normalize_train,
    "solver": _normalize_solver,
    "eval": _normalize_eval,
    "sweep": _normalize_sweep,
    "perturb": _normalize_perturb,
    "zoo": _normalize_zoo,
}

_CHECKPOINT_REQUIRED = {"sa-eval", "perturb", "transfer", "route-map",
                        "dual-trace", "topology-zoo"}


def normalize_config(doc: dict) -> dict:
    """Validate a raw config document and fill defaults. Idempotent."""
    if not isinstance(doc, dict):
        raise SchemaError("", "config must be a JSON object")
    kind = _expect(doc, "", "kind", str, required=True)
    if kind not in KINDS:
        raise SchemaError("kind", f"expected one of {KINDS}, got {kind!r}")
    known = {"kind", "seed", "out"} | set(_REQUIRED_SECTIONS[kind])
    _check_unknown(doc, "config", known)
    out = {
        "kind": kind,
        "seed": int(_number(doc, "", "seed", default=0)),
    }
    if "out" in doc:
        out["out"] = _expect(doc, "", "out", str)
    for section in _REQUIRED_SECTIONS[kind]:
        raw = doc.get(section, {})
        if not isinstance(raw, dict):
            raise SchemaError(section, "expected an object")
        out[section] = _NORMALIZERS[section](raw)
    if kind in _CHECKPOINT_REQUIRED and not out["eval"]["checkpoint"]:
        raise SchemaError("eval.checkpoint", f"required for kind {kind!r}")
    return out


def load_config(path: str | Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"config is not valid JSON: {exc}") from exc
    return normalize_config(doc)


# ---------------------------------------------------------------------------
# output helpers

def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _r(value) -> str:
    return repr(float(value))


def _write_manifest(out_dir: Path, config: dict, files: list[Path]) -> Path:
    manifest = {
        "config": config,
        "version": __version__,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "files": {
            f.name: hashlib.sha256(f.read_bytes()).hexdigest()
            for f in sorted(files, key=lambda p: p.name)
        },
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


# ---------------------------------------------------------------------------
# instance construction

def _mean_value(flows_cfg: dict):
    mean = flows_cfg["arrival_mean"]
    if isinstance(mean, dict):
        return BudgetSplit(low=mean["budget"][0], high=mean["budget"][1],
                           skew=mean["skew"], offset=mean["offset"])
    return tuple(mean) if isinstance(mean, list) else mean


def _build_instance(config: dict, seed: int, n: int | None = None,
                    num_flows: int | None = None):
    topo_cfg, flows_cfg = config["topology"], config["flows"]
    n = n if n is not None else topo_cfg["n"]
    num_flows = num_flows if num_flows is not None else flows_cfg["count"]
    if topo_cfg.get("graphml"):
        topo, channel = load_graphml(topo_cfg["graphml"], d_c=topo_cfg["d_c"],
                                     capacity=topo_cfg["capacity"])
    else:
        topo = generate_knn(n, topo_cfg["k"], seed=seed, capacity=topo_cfg["capacity"])
        channel = channel_from_distance(topo, topo_cfg["d_c"])
    spec = uniform_flows(topo, num_flows, _mean_value(flows_cfg), seed=seed + 1,
                         destinations=flows_cfg["destinations"])
    return topo, channel, spec


def _train_result(config: dict, seed: int, n: int | None = None,
                  num_flows: int | None = None, epochs: int | None = None,
                  batch: int | None = None) -> stateaug.TrainResult:
    topo_cfg, flows_cfg, train_cfg = config["topology"], config["flows"], config["train"]
    cfg = TrainConfig(
        horizon=train_cfg["horizon"], period=train_cfg["period"],
        batch=batch if batch is not None else train_cfg["batch"],
        epochs=epochs if epochs is not None else train_cfg["epochs"],
        lr=train_cfg["lr"], rho=train_cfg["rho"], rho_decay=train_cfg["rho_decay"],
        mu_low=train_cfg["mu_low"], mu_high=train_cfg["mu_high"], seed=seed,
        arrival_dist=flows_cfg["arrival_dist"], widths=tuple(train_cfg["widths"]),
        taps=train_cfg["taps"], gso_normalization=train_cfg["gso_normalization"])
    sampler = stateaug.knn_sampler(
        n=n if n is not None else topo_cfg["n"], k=topo_cfg["k"],
        num_flows=num_flows if num_flows is not None else flows_cfg["count"],
        arrival_mean=_mean_value(flows_cfg), capacity=topo_cfg["capacity"],
        d_c=topo_cfg["d_c"])
    return stateaug.train(cfg, sampler)


def _execute(config: dict, params, topo, channel, spec, seed: int):
    eval_cfg = config["eval"]
    rng = np.random.default_rng(seed)
    return stateaug.execute(
        params, channel, topo, spec, horizon=eval_cfg["horizon"],
        period=eval_cfg["period"], rate=eval_cfg["gamma_mu"], rng=rng,
        arrival_dist=config["flows"]["arrival_dist"])


def _exor_trajectory(channel, topo, spec, horizon: int, seed: int, arrival_dist: str):
    costs = baselines.exor_costs(channel, spec)
    rng = np.random.default_rng(seed)

    def decide_fn(t, a0, q, channel_t):
        return baselines.exor_decide(costs, channel_t, spec, a0, q)

    return netsim.rollout(channel, topo, spec, decide_fn, horizon, rng, arrival_dist)


def _growth(traj, window: int | None = None) -> float:
    window = window if window is not None else max(2, traj.horizon // 2)
    return netsim.queue_growth_rate(traj, window)


def _safe_utility(traj) -> float:
    mean_packets = traj.mean_packets()
    keep = ~traj.spec.destination_mask()
    values = mean_packets[keep]
    with np.errstate(divide="ignore"):
        return float(np.where(values > 0, np.log(np.maximum(values, 1e-300)), -np.inf).sum())


# ---------------------------------------------------------------------------
# experiment runners

def _run_unparam_compare(config: dict, out_dir: Path) -> list[Path]:
    topo_cfg, flows_cfg, solver_cfg = config["topology"], config["flows"], config["solver"]
    problem = solvers.random_instance(
        topo_cfg["n"], topo_cfg["k"], flows_cfg["count"], _mean_value(flows_cfg),
        seed=config["seed"], capacity=topo_cfg["capacity"], d_c=topo_cfg["d_c"])
    _, _, dd_hist = solvers.dd_solve(
        problem, iters=solver_cfg["dd_iters"],
        gamma_phi=solver_cfg["dd_gamma_phi"], gamma_mu=solver_cfg["gamma_mu"])
    _, mom_hist = solvers.mom_solve(
        problem, outer_iters=solver_cfg["iters"], rho0=solver_cfg["rho0"],
        decay=solver_cfg["decay"], gamma_phi=solver_cfg["gamma_phi"],
        inner_steps=solver_cfg["inner_steps"])
    header = ["iter", "utility", "max_violation", "mean_queue", "rho", "mu_norm"]
    files = []
    for name, hist in (("dd", dd_hist), ("mom", mom_hist)):
        path = out_dir / f"{name}.csv"
        _write_csv(path, header, solvers.metrics_to_rows(hist))
        files.append(path)
    summary = out_dir / "summary.csv"
    _write_csv(summary, ["method", "final_utility", "final_max_violation", "final_mean_queue"],
               [["dd", _r(dd_hist[-1].utility), _r(dd_hist[-1].max_violation),
                 _r(dd_hist[-1].mean_queue)],
                ["mom", _r(mom_hist[-1].utility), _r(mom_hist[-1].max_violation),
                 _r(mom_hist[-1].mean_queue)]])
    files.append(summary)
    chart = out_dir / "utility_vs_iter.svg"
    series = []
    for name in ("dd", "mom"):
        cols = charts.read_csv_columns(out_dir / f"{name}.csv")
        series.append((name.upper(), [float(v) for v in cols["iter"]],
                       [float(v) for v in cols["utility"]]))
    charts.line_chart(series, chart, title="direct solvers", xlabel="iteration",
                      ylabel="utility")
    files.append(chart)
    return files


def _run_sa_train(config: dict, out_dir: Path) -> list[Path]:
    result = _train_result(config, config["seed"])
    ckpt = out_dir / "checkpoint.json"
    save_checkpoint(result.params, ckpt)
    log = out_dir / "training_log.csv"
    _write_csv(log, ["epoch", "lagrangian", "utility", "mean_violation"],
               [[h.epoch, _r(h.lagrangian), _r(h.utility), _r(h.mean_violation)]
                for h in result.history])
    chart = out_dir / "training.svg"
    charts.chart_from_csv(log, "epoch", ["lagrangian", "utility"], chart,
                          title="training progress")
    return [ckpt, log, chart]


def _execution_log_rows(res: stateaug.ExecutionResult, period: int) -> list[list]:
    traj = res.trajectory
    keep = ~traj.spec.destination_mask()
    rows = []
    packet_sum = np.zeros_like(traj.spec.arrival_mean)
    for t in range(traj.horizon):
        packet_sum = packet_sum + traj.decisions[t].packets
        values = (packet_sum / (t + 1))[keep]
        with np.errstate(divide="ignore"):
            util = float(np.log(np.maximum(values, 1e-300)).sum()) if np.all(values > 0) else float("-inf")
        updates = (t + 1) // period
        mu = res.dual_history[updates - 1] if updates >= 1 else np.zeros_like(packet_sum)
        rows.append([t, _r(util), _r(traj.queues[t][keep].mean()),
                     _r(float(np.linalg.norm(mu)))])
    return rows


def _run_sa_eval(config: dict, out_dir: Path) -> list[Path]:
    params = load_checkpoint(config["eval"]["checkpoint"])
    eval_cfg = config["eval"]
    files = []
    summary_rows = []
    for seed in eval_cfg["seeds"]:
        topo, channel, spec = _build_instance(config, seed=config["seed"] + 17 * seed)
        res = _execute(config, params, topo, channel, spec, seed=config["seed"] + 1000 + seed)
        tag = f"seed{seed}"
        log = out_dir / f"execution_log_{tag}.csv"
        _write_csv(log, ["t", "utility_so_far", "mean_queue", "mu_norm"],
                   _execution_log_rows(res, eval_cfg["period"]))
        traj_path = out_dir / f"trajectory_{tag}.csv"
        res.trajectory.to_csv(traj_path)
        files += [log, traj_path]
        summary_rows.append(["sa", seed, _r(_safe_utility(res.trajectory)),
                             _r(_growth(res.trajectory)),
                             _r(res.trajectory.mean_queue_series()[-1])])
        if eval_cfg["baselines"]:
            ex = _exor_trajectory(channel, topo, spec, eval_cfg["horizon"],
                                  config["seed"] + 1000 + seed,
                                  config["flows"]["arrival_dist"])
            summary_rows.append(["exor", seed, _r(_safe_utility(ex)), _r(_growth(ex)),
                                 _r(ex.mean_queue_series()[-1])])
            problem = solvers.UnparamProblem(topo=topo, channel=channel, spec=spec,
                                             arrivals=spec.arrival_mean.copy())
            primal, _, _ = solvers.dd_solve(problem, iters=eval_cfg["dd_iters"],
                                            gamma_phi=0.05, gamma_mu=0.01)
            static = primal.decision(problem)
            rng = np.random.default_rng(config["seed"] + 1000 + seed)
            dd_traj = netsim.rollout(channel, topo, spec,
                                     lambda t, a0, q, c: static, eval_cfg["horizon"],
                                     rng, config["flows"]["arrival_dist"])
            summary_rows.append(["dd", seed, _r(_safe_utility(dd_traj)),
                                 _r(_growth(dd_traj)),
                                 _r(dd_traj.mean_queue_series()[-1])])
    summary = out_dir / "comparison.csv"
    _write_csv(summary, ["policy", "seed", "utility", "queue_growth", "final_mean_queue"],
               summary_rows)
    files.append(summary)
    first_log = out_dir / f"execution_log_seed{eval_cfg['seeds'][0]}.csv"
    chart = out_dir / "mean_queue.svg"
    charts.chart_from_csv(first_log, "t", ["mean_queue"], chart, title="mean queue")
    files.append(chart)
    return files


def _run_scale(config: dict, out_dir: Path, vary: str) -> list[Path]:
    sweep = config["sweep"]
    eval_cfg = config["eval"]

    def one(value: int):
        n = value if vary == "nodes" else config["topology"]["n"]
        num_flows = value if vary == "flows" else config["flows"]["count"]
        result = _train_result(config, seed=config["seed"] + value, n=n,
                               num_flows=num_flows, epochs=sweep["epochs"],
                               batch=sweep["batch"])
        topo, channel, spec = _build_instance(config, seed=config["seed"] + value,
                                              n=n, num_flows=num_flows)
        res = _execute(config, result.params, topo, channel, spec,
                       seed=config["seed"] + 9000 + value)
        sa_util, sa_growth = _safe_utility(res.trajectory), _growth(res.trajectory)
        problem = solvers.UnparamProblem(topo=topo, channel=channel, spec=spec,
                                         arrivals=spec.arrival_mean.copy())
        primal, _, _ = solvers.dd_solve(problem, iters=eval_cfg["dd_iters"],
                                        gamma_phi=0.05, gamma_mu=0.01)
        static = primal.decision(problem)
        rng = np.random.default_rng(config["seed"] + 9000 + value)
        dd_traj = netsim.rollout(channel, topo, spec, lambda t, a0, q, c: static,
                                 eval_cfg["horizon"], rng,
                                 config["flows"]["arrival_dist"])
        dd_util, dd_growth = _safe_utility(dd_traj), _growth(dd_traj)
        ratio = sa_util / dd_util if dd_util not in (0.0, float("-inf")) else float("nan")
        return [value, _r(sa_util), _r(dd_util), _r(ratio), _r(sa_growth), _r(dd_growth)]

    values = sweep["values"]
    if sweep["workers"] > 1:
        with ThreadPoolExecutor(max_workers=sweep["workers"]) as pool:
            rows = list(pool.map(one, values))
    else:
        rows = [one(v) for v in values]
    rows.sort(key=lambda row: row[0])
    path = out_dir / "scale.csv"
    _write_csv(path, [vary[:-1] if vary.endswith("s") else vary, "sa_utility",
                      "dd_utility", "sa_dd_utility_ratio", "sa_growth", "dd_growth"],
               rows)
    chart = out_dir / "scale.svg"
    charts.chart_from_csv(path, path.read_text().splitlines()[0].split(",")[0],
                          ["sa_utility", "dd_utility"], chart,
                          title=f"utility vs {vary}")
    return [path, chart]


def _run_perturb(config: dict, out_dir: Path) -> list[Path]:
    params = load_checkpoint(config["eval"]["checkpoint"])
    pert = config["perturb"]
    rows = []
    for seed in pert["seeds"]:
        topo, channel, spec = _build_instance(config, seed=config["seed"] + 31 * seed)
        base = _execute(config, params, topo, channel, spec,
                        seed=config["seed"] + 5000 + seed)
        moved = perturb(topo, pert["fraction"], pert["magnitude"],
                        seed=config["seed"] + 7000 + seed)
        moved_channel = channel_from_distance(moved, config["topology"]["d_c"])
        shifted = _execute(config, params, moved, moved_channel, spec,
                           seed=config["seed"] + 5000 + seed)
        u0, u1 = _safe_utility(base.trajectory), _safe_utility(shifted.trajectory)
        rows.append([seed, _r(u0), _r(u1), _r(u1 / u0 if u0 else float("nan"))])
    path = out_dir / "perturb.csv"
    _write_csv(path, ["seed", "utility_base", "utility_perturbed", "ratio"], rows)
    chart = out_dir / "perturb.svg"
    charts.chart_from_csv(path, "seed", ["utility_base", "utility_perturbed"], chart,
                          title="perturbation stability")
    return [path, chart]


def _run_transfer(config: dict, out_dir: Path) -> list[Path]:
    params = load_checkpoint(config["eval"]["checkpoint"])
    rows = []
    for n in config["sweep"]["values"]:
        for seed in config["eval"]["seeds"]:
            topo, channel, spec = _build_instance(
                config, seed=config["seed"] + 13 * n + seed, n=n)
            res = _execute(config, params, topo, channel, spec,
                           seed=config["seed"] + 4000 + 13 * n + seed)
            rows.append([n, seed, _r(_safe_utility(res.trajectory)),
                         _r(_growth(res.trajectory))])
    path = out_dir / "transfer.csv"
    _write_csv(path, ["n", "seed", "utility", "queue_growth"], rows)
    chart = out_dir / "transfer.svg"
    charts.chart_from_csv(path, "n", ["utility"], chart, title="transference")
    return [path, chart]


def _run_route_map(config: dict, out_dir: Path) -> list[Path]:
    params = load_checkpoint(config["eval"]["checkpoint"])
    flow = config["eval"]["flow"]
    topo, channel, spec = _build_instance(config, seed=config["seed"])
    if flow >= spec.num_flows:
        raise SchemaError("eval.flow", f"flow {flow} out of range for {spec.num_flows} flows")
    res = _execute(config, params, topo, channel, spec, seed=config["seed"] + 1000)
    traj = res.trajectory
    handled = np.zeros(spec.n)
    for t in range(traj.horizon):
        dec = traj.decisions[t]
        inflow = netsim.weighted_inflow(dec.transmit, dec.keep, channel.probs,
                                        traj.arrivals[t])
        handled += traj.arrivals[t][:, flow] + inflow[:, flow]
    handled /= traj.horizon
    top = handled.max() if handled.max() > 0 else 1.0
    rows = [[i, _r(topo.positions[i, 0]), _r(topo.positions[i, 1]),
             _r(handled[i]), _r(handled[i] / top)] for i in range(spec.n)]
    path = out_dir / "route_map.csv"
    _write_csv(path, ["node", "x", "y", "handled", "handled_norm"], rows)
    svg = out_dir / "route_map.svg"
    cols = charts.read_csv_columns(path)
    charts.node_map(
        positions=[(float(x), float(y)) for x, y in zip(cols["x"], cols["y"])],
        intensity=[float(v) for v in cols["handled_norm"]],
        edges=list(topo.edges), path=svg,
        title=f"packets handled, flow {flow}",
        highlight=spec.destination[flow])
    return [path, svg]


def _run_dual_trace(config: dict, out_dir: Path) -> list[Path]:
    params = load_checkpoint(config["eval"]["checkpoint"])
    topo, channel, spec = _build_instance(config, seed=config["seed"])
    res = _execute(config, params, topo, channel, spec, seed=config["seed"] + 1000)
    rows = []
    for update, mu in enumerate(res.dual_history):
        for i in range(spec.n):
            for k in range(spec.num_flows):
                rows.append([update, i, k, _r(mu[i, k])])
    path = out_dir / "dual_trace.csv"
    _write_csv(path, ["update", "node", "flow", "mu"], rows)
    stacked = np.stack(res.dual_history) if res.dual_history else np.zeros((1, spec.n, spec.num_flows))
    norms = [float(np.linalg.norm(m)) for m in stacked]
    peaks = stacked.max(axis=0)
    flat = peaks.reshape(-1)
    top_entries = np.argsort(flat)[::-1][:3]
    series = [("|mu|", list(range(len(norms))), norms)]
    for entry in top_entries:
        i, k = divmod(int(entry), spec.num_flows)
        series.append((f"node {i} flow {k}", list(range(stacked.shape[0])),
                       [float(m[i, k]) for m in stacked]))
    svg = out_dir / "dual_trace.svg"
    charts.line_chart(series, svg, title="dual multipliers", xlabel="update",
                      ylabel="mu")
    return [path, svg]


def _run_topology_zoo(config: dict, out_dir: Path) -> list[Path]:
    params = load_checkpoint(config["eval"]["checkpoint"])
    zoo = config["zoo"]
    rows = []
    for file in zoo["files"]:
        topo, channel = load_graphml(file, d_c=zoo["d_c"])
        spec = uniform_flows(topo, config["flows"]["count"],
                             _mean_value(config["flows"]), seed=config["seed"] + 1,
                             destinations=config["flows"]["destinations"])
        res = _execute(config, params, topo, channel, spec, seed=config["seed"] + 1000)
        directed_edges = len(topo.edges)
        rows.append([topo.name, topo.n, directed_edges // 2,
                     _r(_safe_utility(res.trajectory)), _r(_growth(res.trajectory)),
                     _r(res.trajectory.mean_queue_series()[-1])])
    path = out_dir / "zoo.csv"
    _write_csv(path, ["name", "nodes", "links", "utility", "queue_growth",
                      "final_mean_queue"], rows)
    return [path]


_RUNNERS = {
    "unparam-compare": _run_unparam_compare,
    "sa-train": _run_sa_train,
    "sa-eval": _run_sa_eval,
    "scale-nodes": lambda cfg, out: _run_scale(cfg, out, "nodes"),
    "scale-flows": lambda cfg, out: _run_scale(cfg, out, "flows"),
    "perturb": _run_perturb,
    "transfer": _run_transfer,
    "route-map": _run_route_map,
    "dual-trace": _run_dual_trace,
    "topology-zoo": _run_topology_zoo,
}


def run(config: dict, out_dir: str | Path) -> Path:
    """Execute one experiment config into a fresh artifact directory."""
    config = normalize_config(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _RUNNERS[config["kind"]](config, out_dir)
    _write_manifest(out_dir, config, files)
    return out_dir


# ---------------------------------------------------------------------------
# entry point

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config (JSON)")
    parser.add_argument("--out", help="artifact directory (overrides config)")
    parser.add_argument("--seed", type=int, help="seed override")


def _dispatch(args, allowed: tuple[str, ...]) -> int:
    config = load_config(args.config)
    if config["kind"] not in allowed:
        raise SchemaError("kind", f"subcommand accepts {allowed}, got {config['kind']!r}")
    if args.seed is not None:
        config["seed"] = args.seed
    out = args.out or config.get("out")
    if not out:
        raise SchemaError("out", "no output directory given (flag --out or config field)")
    run(config, out)
    print(out)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="oppnet", description="opportunistic-routing experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="emit topology artifacts")
    gen.add_argument("--n", type=int, default=10)
    gen.add_argument("--k", type=int, default=4)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--d-c", type=float, default=1.0, dest="d_c")
    gen.add_argument("--capacity", type=float, default=10.0)
    gen.add_argument("--out", required=True)

    for name in ("train", "eval", "compare", "sweep"):
        _add_common(sub.add_parser(name, help=f"run a {name} experiment config"))

    plot = sub.add_parser("plot", help="re-render a chart from a CSV")
    plot.add_argument("--csv", required=True)
    plot.add_argument("--x", required=True)
    plot.add_argument("--y", required=True, help="comma-separated column names")
    plot.add_argument("--out", required=True)
    plot.add_argument("--title", default="")

    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            out_dir = Path(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
            topo = generate_knn(args.n, args.k, seed=args.seed, capacity=args.capacity)
            channel = channel_from_distance(topo, args.d_c)
            files = []
            topo_json = out_dir / "topology.json"
            topo_json.write_text(topo.to_json())
            files.append(topo_json)
            graphml = out_dir / "topology.graphml"
            save_graphml(topo, graphml)
            files.append(graphml)
            channel_csv = out_dir / "channel.csv"
            _write_csv(channel_csv, ["i", "j", "prob"],
                       [[i, j, _r(channel.probs[i, j])] for i, j in topo.edges])
            files.append(channel_csv)
            _write_manifest(out_dir, {"kind": "generate", "seed": args.seed,
                                      "n": args.n, "k": args.k, "d_c": args.d_c,
                                      "capacity": args.capacity}, files)
            print(out_dir)
            return 0
        if args.command == "plot":
            charts.chart_from_csv(args.csv, args.x, args.y.split(","), args.out,
                                  title=args.title)
            print(args.out)
            return 0
        return _dispatch(args, _SUBCOMMAND_KINDS[args.command])
    except SchemaError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
