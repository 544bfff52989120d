"""Command line front end: the two pooling studies, dataset emission, and
the numeric test battery.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Config precedence: CLI flags > key=value config file > MOLPOOL_SEED >
built-in defaults; the fully resolved config is echoed in every report.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import gnn as G
from . import gradcheck
from . import molgraph as M
from . import tensor as T
from . import train as tr
from .pooling import PoolingKind

USAGE_ERROR = 2
DATA_ERROR = 3
NUMERIC_ERROR = 4

DATA_ERRORS = (
    tr.BadCsvError, tr.TooSmallError, tr.EmptySplitError,
    tr.MissingTableEntryError, M.SmilesSyntaxError, M.UnsupportedFeatureError,
    M.ValenceError, M.DisconnectedError, M.EmptyBatchError,
    M.InvalidRangeError, M.NotATreeError, FileNotFoundError,
)

_COMMON_DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "t_steps": 3,
    "out": "report.json",
    "plot_out": None,
    "history_dir": None,
}

# Small net, small batches: the weight target is exactly per-atom additive,
# so capacity matters less than step count within the 500-epoch budget.
ALKANE_DEFAULTS = {
    **_COMMON_DEFAULTS,
    "poolings": "sum,mean,max",
    "repeats": 10,
    "epochs": 500,
    "batch_size": 8,
    "hidden_dim": 16,
    "num_layers": 1,
    "dataset": None,
    "min_c": 1,
    "max_c": 60,
    "cap": 44,
}

QM9_DEFAULTS = {
    **_COMMON_DEFAULTS,
    "poolings": "sum,mean,max,set2set",
    "repeats": 3,
    "epochs": 300,
    "batch_size": 32,
    "hidden_dim": 16,
    "num_layers": 1,
    "edge_net_hidden": 32,
    "data": None,
    "synthetic": "additive",
}

_KEY_TYPES = {
    "poolings": str, "repeats": int, "epochs": int, "seed": int, "jobs": int,
    "batch_size": int, "hidden_dim": int, "num_layers": int, "t_steps": int,
    "edge_net_hidden": int, "min_c": int, "max_c": int, "cap": int,
    "dataset": str, "data": str, "synthetic": str, "out": str,
    "plot_out": str, "history_dir": str,
}

# Sampling plan for the synthetic molecule study: mostly 8-heavy-atom
# molecules to train on plus a large exactly-9 external set.
QM9_SIZE_PLAN = {1: 3, 2: 10, 3: 25, 4: 60, 5: 150, 6: 300, 7: 550,
                 8: 1000, 9: 1100}


class UsageError(ValueError):
    """Bad flag or config value outside argparse's own validation."""


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def _read_config_file(path: str) -> dict[str, str]:
    entries = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for ln, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{ln}: expected key=value")
                key, _, value = line.partition("=")
                entries[key.strip().replace("-", "_")] = value.strip()
    except OSError as err:
        raise UsageError(f"cannot read config file {path}: {err}") from err
    return entries


def resolve_config(defaults: dict, args: argparse.Namespace) -> dict:
    """Merge defaults, MOLPOOL_SEED, config file, and explicit CLI flags."""
    merged = dict(defaults)
    env_seed = os.environ.get("MOLPOOL_SEED")
    if env_seed is not None:
        try:
            merged["seed"] = int(env_seed)
        except ValueError:
            raise UsageError(f"MOLPOOL_SEED must be an integer, got {env_seed!r}")
    config_path = getattr(args, "config", None)
    if config_path:
        for key, text in _read_config_file(config_path).items():
            if key not in defaults:
                raise UsageError(f"unknown config key {key!r}")
            try:
                merged[key] = _KEY_TYPES[key](text)
            except ValueError:
                raise UsageError(f"config key {key}: bad value {text!r}")
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _pooling_list(config: dict) -> list[PoolingKind]:
    names = [p for p in config["poolings"].split(",") if p.strip()]
    if not names:
        raise UsageError("empty pooling list")
    return [PoolingKind.from_string(p, t_steps=config["t_steps"])
            for p in names]


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------

def _graph_token(g: M.MolGraph, target: float) -> str:
    atoms = ";".join(
        f"{a.element.value}{a.implicit_h_count}{int(a.is_aromatic)}"
        f"{int(a.is_in_ring)}{a.hybridization.value}" for a in g.atoms)
    bonds = ";".join(
        f"{b.endpoints[0]}-{b.endpoints[1]}:{b.order.value}:"
        f"{int(b.is_conjugated)}:{b.stereo.value}"
        for b in sorted(g.bonds, key=lambda b: b.endpoints))
    return f"{atoms}|{bonds}|{target!r}\n"


def dataset_fingerprint(ds: tr.Dataset) -> dict:
    hasher = hashlib.sha256()
    histogram: dict[int, int] = {}
    for g, target in ds.entries:
        histogram[len(g.atoms)] = histogram.get(len(g.atoms), 0) + 1
        hasher.update(_graph_token(g, target).encode())
    return {
        "entry_count": len(ds),
        "size_histogram": {str(k): histogram[k] for k in sorted(histogram)},
        "content_hash": hasher.hexdigest(),
    }


def _aggregate(values: list[float]) -> dict:
    return {"mean": float(np.mean(values)), "per_repeat": list(values)}


def emit_plot_data(report: dict) -> str:
    """Tidy `pooling,split,repeat,mae` rows for external plotting."""
    lines = ["pooling,split,repeat,mae"]
    for pooling, blocks in report["per_pooling"].items():
        for key, split in (("interpolation_mae", "interpolation"),
                           ("extrapolation_mae", "extrapolation")):
            block = blocks.get(key)
            if block is None:
                continue
            for repeat, mae in enumerate(block["per_repeat"]):
                lines.append(f"{pooling},{split},{repeat},{mae!r}")
    return "\n".join(lines) + "\n"


def _write_report(report: dict, config: dict) -> None:
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    with open(config["out"], "w", encoding="utf-8") as fh:
        fh.write(text)
    if config.get("plot_out"):
        with open(config["plot_out"], "w", encoding="utf-8") as fh:
            fh.write(emit_plot_data(report))


def _history_path(config: dict, experiment: str, pooling: str, repeat: int):
    directory = config.get("history_dir")
    if directory is None:
        directory = os.path.join(
            os.path.dirname(os.path.abspath(config["out"])), "histories")
    os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, f"{experiment}-{pooling}-r{repeat}.csv")


# ---------------------------------------------------------------------------
# experiment runs
# ---------------------------------------------------------------------------

def _run_one(task: dict) -> dict:
    """Train one (pooling, repeat) cell and score every evaluation split."""
    model = tr.train_model(task["train"], task["val"], task["gnn_config"],
                           task["pooling"], task["train_config"],
                           feature_config=task["feature_config"])
    scores = {name: tr.evaluate(model, ds) if len(ds) else None
              for name, ds in task["eval_splits"].items()}
    return {"pooling": task["pooling"].kind.value, "repeat": task["repeat"],
            "scores": scores, "history": model.history}


def _run_cells(tasks: list[dict], jobs: int):
    """Yield per-cell results in task order so partially completed
    experiments can still be flushed when a later cell fails."""
    if jobs <= 1:
        for task in tasks:
            yield _run_one(task)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        yield from pool.map(_run_one, tasks)


def _experiment(experiment: str, config: dict, poolings: list[PoolingKind],
                gnn_config_for, feature_config: M.FeatureConfig,
                internal: tr.Dataset, eval_splits_for, fingerprint: dict,
                split_keys: list[tuple[str, str]]) -> dict:
    """Shared driver: split per repeat, train per pooling, aggregate MAEs."""
    started = time.monotonic()
    tasks = []
    for repeat in range(config["repeats"]):
        seed_r = config["seed"] + repeat
        train_ds, val_ds, test_ds = tr.split_random(internal, seed=seed_r)
        train_config = tr.TrainConfig(epochs=config["epochs"],
                                      batch_size=config["batch_size"],
                                      seed=seed_r)
        for pooling in poolings:
            tasks.append({
                "train": train_ds, "val": val_ds,
                "eval_splits": eval_splits_for(test_ds),
                "gnn_config": gnn_config_for(pooling), "pooling": pooling,
                "train_config": train_config,
                "feature_config": feature_config, "repeat": repeat,
            })

    per_pooling: dict[str, dict] = {
        p.kind.value: {key: [] for key, _ in split_keys} for p in poolings}
    report = {
        "experiment": experiment,
        "config": config,
        "dataset": fingerprint,
        "per_pooling": per_pooling,
    }
    try:
        for cell in _run_cells(tasks, config["jobs"]):
            for key, split_name in split_keys:
                per_pooling[cell["pooling"]][key].append(
                    cell["scores"][split_name])
            tr.write_history_csv(
                _history_path(config, experiment, cell["pooling"],
                              cell["repeat"]),
                cell["history"])
    except Exception:
        # flush whatever finished before propagating the failure
        partial = dict(report)
        partial["per_pooling"] = {
            p: {k: _aggregate(v) if v and None not in v else None
                for k, v in blocks.items()}
            for p, blocks in per_pooling.items()}
        partial["wall_time_seconds"] = time.monotonic() - started
        partial["incomplete"] = True
        _write_report(partial, config)
        raise

    report["per_pooling"] = {
        p: {k: _aggregate(v) if None not in v else None
            for k, v in blocks.items()}
        for p, blocks in per_pooling.items()}
    report["wall_time_seconds"] = time.monotonic() - started
    _write_report(report, config)
    return report


def run_alkane_weight(args: argparse.Namespace) -> dict:
    """Molecular-weight study on generated alkanes: train within C<=30,
    report random-split test MAE and the C>30 extrapolation MAE."""
    config = resolve_config(ALKANE_DEFAULTS, args)
    poolings = _pooling_list(config)
    if config["dataset"]:
        full = tr.read_dataset_csv(config["dataset"], name="alkanes")
    else:
        graphs = M.generate_alkanes(config["min_c"], config["max_c"],
                                    config["cap"], config["seed"])
        full = tr.Dataset([(g, M.molecular_weight(g)) for g in graphs],
                          "alkanes")
    internal, external = tr.split_by_predicate(full,
                                               lambda g: len(g.atoms) <= 30)
    far_external = tr.Dataset(
        [e for e in external.entries if len(e[0].atoms) >= 35],
        "alkanes/ge35")

    def eval_splits_for(test_ds):
        return {"interpolation": test_ds, "extrapolation": far_external,
                "extrapolation_from_31": external}

    gnn_config = G.GnnConfig(hidden_dim=config["hidden_dim"],
                             num_layers=config["num_layers"],
                             edge_mode=G.EdgeMode.SHARED_MATRIX)
    config["edge_mode"] = G.EdgeMode.SHARED_MATRIX.value
    config["features"] = "h_count_only"
    config["readout"] = "mlp"
    config["learning_rate"] = tr.TrainConfig().learning_rate
    return _experiment(
        "alkane-weight", config, poolings, lambda _: gnn_config,
        M.FeatureConfig.h_count_only(), internal, eval_splits_for,
        dataset_fingerprint(full),
        [("interpolation_mae", "interpolation"),
         ("extrapolation_mae", "extrapolation"),
         ("extrapolation_mae_from_31", "extrapolation_from_31")])


def _synthetic_molecules(config: dict) -> tr.Dataset:
    graphs = M.generate_molecules(QM9_SIZE_PLAN, seed=config["seed"])
    if config["synthetic"] == "additive":
        target = tr.synthetic_additive_target
    elif config["synthetic"] == "size-independent":
        target = tr.synthetic_size_independent_target
    else:
        raise UsageError(
            f"--synthetic must be additive or size-independent,"
            f" got {config['synthetic']!r}")
    return tr.Dataset([(g, target(g)) for g in graphs],
                      f"synthetic/{config['synthetic']}")


def run_qm9_split(args: argparse.Namespace) -> dict:
    """Size-split study: train on molecules with <=8 heavy atoms, report
    internal test MAE and the MAE on exactly-9-heavy-atom molecules."""
    config = resolve_config(QM9_DEFAULTS, args)
    poolings = _pooling_list(config)
    if config["data"]:
        loaded = tr.read_dataset_csv(config["data"], name="qm9")
    else:
        loaded = _synthetic_molecules(config)
    kept = [e for e in loaded.entries if len(e[0].atoms) <= 9]
    full = tr.Dataset(kept, loaded.name)
    internal, external = tr.split_by_predicate(full,
                                               lambda g: len(g.atoms) <= 8)

    def eval_splits_for(test_ds):
        return {"interpolation": test_ds, "extrapolation": external}

    base = G.GnnConfig(hidden_dim=config["hidden_dim"],
                       num_layers=config["num_layers"],
                       edge_mode=G.EdgeMode.EDGE_NETWORK,
                       edge_net_hidden=config["edge_net_hidden"])

    def gnn_config_for(pooling: PoolingKind) -> G.GnnConfig:
        # linear readout: extrapolation differences then reflect pooling
        # physics, not leftover curvature in a hidden readout layer
        width = pooling.fingerprint_width(base.hidden_dim)
        return dataclasses.replace(base, mlp_layers=(width, 1))

    config["edge_mode"] = G.EdgeMode.EDGE_NETWORK.value
    config["features"] = "full"
    config["readout"] = "linear"
    config["learning_rate"] = tr.TrainConfig().learning_rate
    config["dropped_over_9"] = len(loaded) - len(full)
    return _experiment(
        "qm9-split", config, poolings, gnn_config_for, M.FeatureConfig.full(),
        internal, eval_splits_for, dataset_fingerprint(full),
        [("interpolation_mae", "interpolation"),
         ("extrapolation_mae", "extrapolation")])


# ---------------------------------------------------------------------------
# subcommand entry points
# ---------------------------------------------------------------------------

def _cmd_alkane_weight(args) -> int:
    run_alkane_weight(args)
    return 0


def _cmd_qm9_split(args) -> int:
    run_qm9_split(args)
    return 0


def _cmd_gen_alkanes(args) -> int:
    seed = args.seed if args.seed is not None else int(
        os.environ.get("MOLPOOL_SEED", 0))
    graphs = M.generate_alkanes(args.min_c, args.max_c, args.cap, seed)
    rows = [(M.tree_to_smiles(g), M.molecular_weight(g)) for g in graphs]
    tr.write_dataset_csv(args.out, rows)
    print(f"wrote {len(rows)} alkanes to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(trials=args.trials, seed=args.seed or 0)
    for result in results:
        print(result.line())
    return 0 if all(r.ok for r in results) else NUMERIC_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="molpool",
        description="Graph-network pooling studies on molecular property "
                    "regression.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--poolings", help="comma-separated pooling kinds")
        p.add_argument("--repeats", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
        p.add_argument("--num-layers", type=int, dest="num_layers")
        p.add_argument("--t-steps", type=int, dest="t_steps")
        p.add_argument("--out")
        p.add_argument("--plot-out", dest="plot_out")
        p.add_argument("--history-dir", dest="history_dir")
        p.add_argument("--config", help="key=value config file")

    alkane = sub.add_parser("alkane-weight",
                            help="molecular weight study on alkanes")
    common(alkane)
    alkane.add_argument("--dataset", help="CSV overriding generation")
    alkane.add_argument("--min-c", type=int, dest="min_c")
    alkane.add_argument("--max-c", type=int, dest="max_c")
    alkane.add_argument("--cap", type=int, help="per-size isomer cap")
    alkane.set_defaults(func=_cmd_alkane_weight)

    qm9 = sub.add_parser("qm9-split",
                         help="heavy-atom-count extrapolation study")
    common(qm9)
    qm9.add_argument("--data", help="CSV of smiles,target rows")
    qm9.add_argument("--synthetic",
                     choices=["additive", "size-independent"])
    qm9.add_argument("--edge-net-hidden", type=int, dest="edge_net_hidden")
    qm9.set_defaults(func=_cmd_qm9_split)

    gen = sub.add_parser("gen-alkanes", help="emit an alkane dataset CSV")
    gen.add_argument("--min-c", type=int, dest="min_c", default=1)
    gen.add_argument("--max-c", type=int, dest="max_c", default=60)
    gen.add_argument("--cap", type=int, default=44)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", default="alkanes.csv")
    gen.set_defaults(func=_cmd_gen_alkanes)

    grad = sub.add_parser("gradcheck", help="run the numeric test battery")
    grad.add_argument("--trials", type=int, default=100)
    grad.add_argument("--seed", type=int)
    grad.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DATA_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return DATA_ERROR
    except T.NonFiniteError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return NUMERIC_ERROR
    except (UsageError, G.ConfigError, ValueError) as err:
        print(f"usage error: {err}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
