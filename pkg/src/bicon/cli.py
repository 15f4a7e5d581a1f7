"""Command-line entry point: gradient checking, experiment runs with
config sweeps, and checkpoint evaluation.

Exit codes are a stable contract: 0 success, 1 gradient-check failure,
2 config or usage error, 3 numerical abort. Stderr verbosity follows
BICON_LOG={error|info|debug}; results go to stdout and to CSV files in
the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from itertools import product
from pathlib import Path

import numpy as np

from .data import DatasetSpec, emit_report_csv, emit_scatter_svg, generate
from .errors import ConfigError, DimensionError, DomainError, NumericalError, ParseError
from .evaluation import holdout_split, hungarian_accuracy, knn_accuracy, linear_probe, silhouette
from .gradcheck import SCOPES, TOL, run_scope
from .model import forward, head_forward, load_checkpoint, save_checkpoint
from .trainers import CONFIG_KEYS, TASKS, resolve_config, run_cluster, run_sne, run_supcon

LOG = logging.getLogger("bicon")

EXIT_OK = 0
EXIT_GRADCHECK = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

EVAL_METRICS = ("hungarian", "knn", "probe", "silhouette")

# config keys addressed to dataset generation rather than the trainer
_DATA_KEYS = {
    "data_generator": "generator",
    "data_n": "n",
    "data_d": "d",
    "data_classes": "classes",
    "data_separation": "separation",
    "data_seed": "seed",
    "data_path": "path",
}


def fnv1a64(data):
    """64-bit FNV-1a hash of a byte string."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def config_hash(obj):
    """Hex FNV-1a digest of an object's canonical JSON form."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return f"{fnv1a64(text.encode('utf-8')):016x}"


def split_config(raw):
    """Split a flat config dict into trainer keys and dataset keys."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a flat JSON object")
    loss, data = {}, {}
    for key, value in raw.items():
        if key in _DATA_KEYS:
            data[_DATA_KEYS[key]] = value
        else:
            # unknown trainer keys are rejected downstream by resolve_config
            loss[key] = value
    return loss, data


def _load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config {path} is not valid JSON: {exc}") from exc


def _parse_token(token):
    try:
        return json.loads(token)
    except json.JSONDecodeError:
        return token


def parse_sweep(flags):
    """--sweep key=v1,v2 flags to (key, tokens, parsed values) axes."""
    axes = []
    for flag in flags:
        key, sep, rest = flag.partition("=")
        key = key.strip()
        tokens = rest.split(",") if rest else []
        if not sep or not key or not tokens or any(t == "" for t in tokens):
            raise ConfigError(f"malformed --sweep {flag!r}; expected key=v1,v2,...")
        axes.append((key, tokens, [_parse_token(t) for t in tokens]))
    return axes


def sweep_cells(axes):
    """Cross product of sweep axes in declaration order.

    Yields (index, subdir name, override dict)."""
    pairs_per_axis = [list(zip(tokens, values)) for _, tokens, values in axes]
    keys = [key for key, _, _ in axes]
    cells = []
    for index, combo in enumerate(product(*pairs_per_axis)):
        name = "_".join(f"{key}={token}" for key, (token, _) in zip(keys, combo))
        overrides = {key: value for key, (_, value) in zip(keys, combo)}
        cells.append((index, name, overrides))
    return cells


def _merge_cell(loss, data, overrides):
    cell_loss, cell_data = dict(loss), dict(data)
    for key, value in overrides.items():
        if key in _DATA_KEYS:
            cell_data[_DATA_KEYS[key]] = value
        else:
            cell_loss[key] = value
    return cell_loss, cell_data


def _write_metrics_csv(path, rows, digest, seed):
    lines = ["metric,value,hash,seed"]
    lines += [f"{name},{value:.17g},{digest},{seed}" for name, value in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _execute_run(task, loss, data, out_dir, config_path):
    """One trainer invocation: resolve, train, and emit all output files.

    Returns (manifest dict, final metric rows)."""
    declared = loss.get("task")
    if declared is not None and declared != task:
        raise ConfigError(f"config task {declared!r} does not match command {task!r}")
    cfg = resolve_config({**loss, "task": task})
    spec = DatasetSpec(**data)
    dataset = generate(spec)
    x, labels = dataset.features, dataset.labels

    manifest = {"config": asdict(cfg), "data": asdict(spec)}
    digest = config_hash(manifest)
    manifest["hash"] = digest
    manifest["config_path"] = str(config_path)
    manifest["out"] = str(out_dir)

    LOG.info("run %s -> %s (hash %s)", task, out_dir, digest)
    if task == "sne":
        report, output = run_sne(cfg, x, labels=labels)
    elif task == "cluster":
        report, output = run_cluster(cfg, x, labels=labels)
    else:
        report, output = run_supcon(cfg, x, labels)
        output = forward(report.model, x)

    rows = [("loss", report.losses[-1])]
    rows += sorted(report.snapshots[-1][1].items())
    if task == "supcon":
        rows.append(("collapsed", float(report.collapsed)))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    emit_report_csv(report, out_dir / "report.csv")
    _write_metrics_csv(out_dir / "metrics.csv", rows, digest, cfg.seed)
    save_checkpoint(out_dir / "checkpoint.bicn", report.model)
    if output.ndim == 2 and output.shape[1] == 2:
        emit_scatter_svg(output, labels, out_dir / "scatter.svg")
    return manifest, rows


def cmd_run(args):
    raw = _load_config(args.config)
    loss, data = split_config(raw)
    if args.seed is not None:
        loss["seed"] = args.seed
    axes = parse_sweep(args.sweep)
    if not axes:
        _, rows = _execute_run(args.task, loss, data, args.out, args.config)
        for name, value in rows:
            print(f"{name}={value:.17g}")
        return EXIT_OK

    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    swept = {key for key, _, _ in axes}
    unknown = sorted(k for k in swept if k not in _DATA_KEYS and k not in CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown sweep keys: {', '.join(unknown)}")

    cells = []
    for index, name, overrides in sweep_cells(axes):
        cell_loss, cell_data = _merge_cell(loss, data, overrides)
        if "seed" not in swept:
            # isolate each cell's RNG streams behind its own derived seed
            cell_loss["seed"] = int(loss.get("seed", 0)) + index
        resolve_config({**cell_loss, "task": args.task})
        cells.append((name, cell_loss, cell_data))

    out_root = Path(args.out)

    def _worker(cell):
        name, cell_loss, cell_data = cell
        try:
            manifest, rows = _execute_run(args.task, cell_loss, cell_data, out_root / name, args.config)
            return name, rows, manifest["hash"], manifest["config"]["seed"], None
        except NumericalError as exc:
            return name, None, None, None, exc

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(_worker, cells))

    aborted = False
    lines = ["cell,metric,value,hash,seed"]
    for name, rows, digest, seed, exc in results:
        if exc is not None:
            aborted = True
            print(f"{name}: numerical abort: {exc}", file=sys.stderr)
            continue
        for metric, value in rows:
            lines.append(f"{name},{metric},{value:.17g},{digest},{seed}")
            print(f"{name} {metric}={value:.17g}")
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_NUMERICAL if aborted else EXIT_OK


def cmd_gradcheck(args):
    results = run_scope(args.scope, args.seed)
    failures = [component for component, err in results if not err <= TOL]
    for component, err in results:
        print(f"{component} worst_rel_err={err:.3e} {'FAIL' if not err <= TOL else 'PASS'}")
    print(f"gradcheck {args.scope}: {len(results) - len(failures)}/{len(results)} within {TOL:g}")
    if failures:
        print(f"failing components: {', '.join(failures)}")
        return EXIT_GRADCHECK
    return EXIT_OK


def _eval_features(model, x):
    if model.kind == "free":
        if model.table.shape[0] != x.shape[0]:
            raise DimensionError(
                f"checkpoint embeds {model.table.shape[0]} points but dataset has {x.shape[0]}"
            )
        return model.table
    in_dim = model.W1.shape[0] if model.kind in ("linear", "mlp1") else model.W.shape[0]
    if x.shape[1] != in_dim:
        raise DimensionError(f"checkpoint expects {in_dim} features but dataset has {x.shape[1]}")
    if model.kind == "head":
        return head_forward(model, x)
    return forward(model, x)


def cmd_eval(args):
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = sorted(set(metrics) - set(EVAL_METRICS))
    if unknown or not metrics:
        raise ConfigError(
            f"unknown metrics: {', '.join(unknown) or '(none given)'}; valid names: {', '.join(EVAL_METRICS)}"
        )
    model = load_checkpoint(args.checkpoint)
    dataset = generate(DatasetSpec(generator="file", path=args.data))
    x, labels = dataset.features, dataset.labels

    manifest_path = Path(args.checkpoint).parent / "manifest.json"
    digest, seed = None, args.seed
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        digest = manifest.get("hash")
        if seed is None:
            seed = manifest.get("config", {}).get("seed")
    seed = 0 if seed is None else int(seed)
    if digest is None:
        digest = config_hash({"checkpoint": Path(args.checkpoint).name, "metrics": metrics, "seed": seed})

    if "hungarian" in metrics and model.kind != "head":
        raise ConfigError("metric 'hungarian' needs a cluster-head checkpoint")
    features = _eval_features(model, x)
    train_idx, test_idx = holdout_split(x.shape[0], 0.25, seed)

    rows = []
    for name in metrics:
        if name == "hungarian":
            value = hungarian_accuracy(features.argmax(axis=1), labels)
        elif name == "knn":
            value = knn_accuracy(
                features[train_idx], labels[train_idx], features[test_idx], labels[test_idx], k=7
            )
        elif name == "probe":
            value = linear_probe(
                features[train_idx], labels[train_idx], features[test_idx], labels[test_idx], seed=seed
            )
        else:
            value = silhouette(features, labels)
        rows.append((name, float(value)))
        print(f"{name}={float(value):.17g}")

    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "metrics.csv"
    body = "".join(f"{name},{value:.17g},{digest},{seed}\n" for name, value in rows)
    if csv_path.exists():
        with open(csv_path, "a", encoding="utf-8") as fh:
            fh.write(body)
    else:
        csv_path.write_text("metric,value,hash,seed\n" + body, encoding="utf-8")
    return EXIT_OK


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("BICON_LOG", "error").strip().lower(), logging.ERROR
    )
    logger = logging.getLogger("bicon")
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        logger.addHandler(handler)
        logger.propagate = False
    logger.setLevel(level)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bicon",
        description="Divergence-over-kernel training experiments: gradcheck, run, eval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    g.add_argument("scope", choices=SCOPES)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("run", help="train one configuration or a sweep grid")
    r.add_argument("task", choices=TASKS)
    r.add_argument("--config", required=True, help="flat JSON config file")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--sweep", action="append", default=[], metavar="KEY=V1,V2",
                   help="sweep axis; repeat for a grid (declaration order)")
    r.add_argument("--jobs", type=int, default=1, help="parallel sweep cells")
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="CSV or binary matrix file")
    e.add_argument("--metrics", required=True, help=f"comma-separated from {', '.join(EVAL_METRICS)}")
    e.add_argument("--out", default=None, help="directory for metrics.csv (default: checkpoint dir)")
    e.add_argument("--seed", type=int, default=None, help="holdout/probe seed (default: run manifest)")
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, DimensionError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        detail = ""
        if getattr(exc, "divergence", None) is not None:
            detail = f" [divergence={exc.divergence} step={exc.step}]"
        print(f"numerical abort: {exc}{detail}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
