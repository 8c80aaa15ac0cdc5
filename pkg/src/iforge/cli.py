"""Command-line front end: ``iforge simulate | benchmark | predict | rerun``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (
    BENCH_METHODS,
    HUGE_DATASETS,
    BenchmarkConfig,
    DatasetError,
    dataset_key,
    load_csv,
    load_table,
    run_benchmark,
    tier_for,
)
from .dgp import GENERATORS, fit_standardizer
from .intervals import DEFAULT_ALPHAS, DegenerateJacobianError
from .models import MODEL_METHODS, USES_P, ArchiveError, fit_model, load_model, model_intervals, save_model
from .network import NetworkSpec, NumericalError, TrainConfig
from .simulation import SETTINGS, coverage_label, run_grid

log = logging.getLogger("iforge")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# formatting helpers


def fmt(v) -> str:
    """Round-trip decimal text for numbers; empty for missing values."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def name_list(choices):
    def parse(text: str) -> list[str]:
        names = [t.strip() for t in text.split(",") if t.strip()]
        bad = [n for n in names if n not in choices]
        if bad or not names:
            raise argparse.ArgumentTypeError(f"invalid choice(s) {bad or text!r}; pick from {', '.join(choices)}")
        return names
    return parse


# ---------------------------------------------------------------------------
# manifests


def manifest_hash(command: str, config: dict) -> str:
    blob = json.dumps({"command": command, "config": config, "version": __version__}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Run:
    """Output directory named by the manifest hash plus the manifest itself."""

    def __init__(self, command: str, config: dict, out: str):
        self.command = command
        self.config = config
        self.hash = manifest_hash(command, config)
        self.dir = Path(out) / self.hash
        self.dir.mkdir(parents=True, exist_ok=True)
        self.started = datetime.now(timezone.utc).isoformat()
        self.outputs: list[str] = []

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.dir / name

    def finish(self) -> Path:
        manifest = {
            "command": self.command, "config": self.config, "seed": self.config.get("seed"),
            "version": __version__, "manifest_hash": self.hash, "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(), "outputs": sorted(self.outputs),
        }
        path = self.dir / "manifest.json"
        write_json(path, manifest)
        return path


# ---------------------------------------------------------------------------
# simulate


def simulate_config(args) -> dict:
    if args.replications < 1:
        raise UsageError("--replications must be at least 1")
    if any(T < 2 for T in args.T):
        raise UsageError("--T values must be at least 2")
    if any(not 0 < p <= 1 for p in args.p):
        raise UsageError("--p values must lie in (0, 1]")
    if any(not 0 < a < 1 for a in args.alpha):
        raise UsageError("--alpha values must lie in (0, 1)")
    if args.n_train < 2 or args.n_test < 1:
        raise UsageError("--n-train must be >= 2 and --n-test >= 1")
    base = SETTINGS[args.dgp]
    if args.n_train < base.batch_size:
        raise UsageError(f"--n-train must be at least the batch size {base.batch_size}")
    return {
        "dgp": args.dgp, "methods": list(args.method), "T": list(args.T), "p": list(args.p),
        "alpha": list(args.alpha), "n_train": args.n_train, "n_test": args.n_test,
        "seed": args.seed, "replications": args.replications,
        "hidden_widths": list(base.hidden_widths), "learning_rate": base.learning_rate,
        "epochs": base.epochs, "batch_size": base.batch_size, "scale_y": base.scale_y,
    }


def run_simulate(config: dict, out: str) -> int:
    settings = replace(SETTINGS[config["dgp"]], n_train=config["n_train"], n_test=config["n_test"])
    run = Run("simulate", config, out)
    rows = run_grid(config["dgp"], config["methods"], config["T"], config["p"], config["replications"],
                    config["seed"], config["alpha"], settings)
    alphas = config["alpha"]
    header = ["method", "T", "p", "MAPE", "MSPE", *[coverage_label(a) for a in alphas], "replications",
              "manifest_hash"]
    records = [[r.method, r.T, r.p, r.mape, r.mspe, *[r.miss_rates[float(a)] for a in alphas], r.replications,
                run.hash] for r in rows]
    write_csv(run.path("results.csv"), header, records)
    run.finish()
    print(f"simulate {config['dgp']}: {len(rows)} grid point(s), {config['replications']} replication(s)")
    print("  ".join(header[:-2]))
    for rec in records:
        print("  ".join("-" if v is None else (f"{v:.4f}" if isinstance(v, float) else str(v)) for v in rec[:-2]))
    print(f"output: {run.dir}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    return run_simulate(simulate_config(args), args.out)


# ---------------------------------------------------------------------------
# benchmark


def benchmark_config(args) -> dict:
    if not Path(args.data).exists():
        raise UsageError(f"data file not found: {args.data}")
    if dataset_key(args.data) in HUGE_DATASETS and not args.allow_huge:
        raise UsageError(f"{args.data} is a very large dataset; pass --allow-huge to run it")
    method = args.method[0] if isinstance(args.method, list) else args.method
    if len(args.T) != 1:
        raise UsageError("benchmark takes a single --T value")
    if len(args.p) != 1:
        raise UsageError("benchmark takes a single --p value")
    splits, width = tier_for(args.data)
    try:
        cfg = BenchmarkConfig(data=str(args.data), target=args.target, method=method, T=args.T[0],
                              n_splits=args.splits if args.splits is not None else splits,
                              hidden_width=args.width if args.width is not None else width, epochs=args.epochs,
                              p=args.p[0], learning_rate=args.learning_rate, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg.to_dict()


def run_benchmark_cmd(config: dict, out: str) -> int:
    cfg = BenchmarkConfig(**config)
    data = load_csv(cfg.data, cfg.target)
    run = Run("benchmark", config, out)
    result = run_benchmark(cfg, data)
    record = {**result.to_dict(), "manifest_hash": run.hash}
    write_json(run.path("result.json"), record)
    write_csv(run.path("splits.csv"), ["split", "rmspe", "manifest_hash"],
              [[i, v, run.hash] for i, v in enumerate(result.per_split)])
    run.finish()
    se = "NA" if result.se is None else f"{result.se:.4f}"
    print(f"benchmark {result.dataset} {result.method}: RMSPE {result.mean_rmspe:.4f} +/- {se} "
          f"over {len(result.per_split)} split(s)")
    print(f"output: {run.dir}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    return run_benchmark_cmd(benchmark_config(args), args.out)


# ---------------------------------------------------------------------------
# predict


def predict_config(args) -> dict:
    if args.archive is None and args.data is None:
        raise UsageError("predict needs --data (training CSV) or --archive")
    for name in ("data", "test", "archive"):
        path = getattr(args, name)
        if path is not None and not Path(path).exists():
            raise UsageError(f"{name} file not found: {path}")
    if args.test is None and args.archive is not None:
        raise UsageError("--archive needs --test")
    if len(args.method) != 1 or len(args.T) != 1 or len(args.p) != 1:
        raise UsageError("predict takes a single --method, --T and --p")
    if any(not 0 < a < 1 for a in args.alpha):
        raise UsageError("--alpha values must lie in (0, 1)")
    return {
        "data": args.data, "test": args.test, "archive": args.archive, "target": args.target,
        "method": args.method[0], "T": args.T[0], "p": args.p[0], "alpha": sorted(args.alpha, reverse=True),
        "hidden_widths": list(args.hidden), "epochs": args.epochs, "learning_rate": args.learning_rate,
        "batch_size": args.batch_size, "seed": args.seed, "plot": bool(args.plot),
        "save_archive": bool(args.save_archive),
    }


def load_points(path, target: str):
    """Features and (when the column is present) targets of the rows to predict."""
    header, values = load_table(path)
    if target in header:
        j = header.index(target)
        return np.delete(values, j, axis=1), values[:, j]
    return values, None


def run_predict(config: dict, out: str) -> int:
    alphas = config["alpha"]
    if config["archive"]:
        model = load_model(config["archive"])
        if model.x_mean is None:
            raise ArchiveError("archive has no feature standardization")
    else:
        train_set = load_csv(config["data"], config["target"])
        stats = fit_standardizer(train_set)
        Xtr = stats.transform_x(train_set.X)
        spec = NetworkSpec(train_set.d, tuple(config["hidden_widths"]))
        tc = TrainConfig(epochs=config["epochs"], batch_size=min(config["batch_size"], train_set.n),
                         learning_rate=config["learning_rate"], seed=config["seed"])
        model = fit_model(config["method"], Xtr, train_set.y, spec, tc, T=config["T"],
                          p=config["p"] if config["method"] in USES_P else None)
        model = model.with_feature_stats(stats.x_mean, stats.x_std)
    if config["test"]:
        X_test, targets = load_points(config["test"], config["target"])
        if X_test.shape[1] != model.spec.input_dim:
            raise DatasetError(f"test file has {X_test.shape[1]} features, the model expects {model.spec.input_dim}")
        X_eval = (X_test - model.x_mean) / model.x_std
    else:
        X_eval, targets = model.X_train, model.y_train
    center, pis = model_intervals(model, X_eval, alphas, targets=targets)
    run = Run("predict", config, out)
    if config["save_archive"] and not config["archive"]:
        save_model(model, run.path("model.npz"))
    header = ["index", "center", "epistemic_var", "aleatoric_var"]
    for a in alphas:
        header += [f"lower_{fmt(a)}", f"upper_{fmt(a)}"]
    header.append("manifest_hash")
    first = pis[alphas[0]]
    epi = np.broadcast_to(np.asarray(first.epistemic_var, dtype=float), center.shape)
    rows = []
    for i in range(center.size):
        row = [i, float(center[i]), float(epi[i]), float(first.aleatoric_var)]
        for a in alphas:
            row += [float(np.atleast_1d(pis[a].lower)[i]), float(np.atleast_1d(pis[a].upper)[i])]
        rows.append(row + [run.hash])
    write_csv(run.path("intervals.csv"), header, rows)
    if config["plot"]:
        plot_intervals(run.path("intervals.svg"), center, pis, alphas, targets)
    run.finish()
    print(f"predict {model.method}: {center.size} interval row(s) at alpha {', '.join(fmt(a) for a in alphas)}")
    print(f"output: {run.dir}")
    return EXIT_OK


def plot_intervals(path: Path, center, pis, alphas, targets=None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "iforge"
    order = np.argsort(center, kind="stable")
    idx = np.arange(center.size)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for k, a in enumerate(sorted(alphas)):
        pi = pis[a]
        ax.fill_between(idx, np.atleast_1d(pi.lower)[order], np.atleast_1d(pi.upper)[order],
                        alpha=0.2 + 0.15 * k, color="tab:blue", linewidth=0, label=f"{100 * (1 - a):g}% interval")
    ax.plot(idx, center[order], color="black", linewidth=1, label="prediction")
    if targets is not None:
        ax.plot(idx, np.asarray(targets)[order], ".", color="tab:red", markersize=3, label="observed")
    ax.set_xlabel("test point (sorted by prediction)")
    ax.set_ylabel("response")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_predict(args) -> int:
    return run_predict(predict_config(args), args.out)


# ---------------------------------------------------------------------------
# rerun


RUNNERS = {"simulate": run_simulate, "benchmark": run_benchmark_cmd, "predict": run_predict}


def cmd_rerun(args) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        command, config = manifest["command"], manifest["config"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read manifest {args.manifest}: {exc}") from None
    if command not in RUNNERS:
        raise UsageError(f"manifest has unknown command {command!r}")
    return RUNNERS[command](config, args.out)


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iforge", description="Prediction intervals for ReLU networks.")
    parser.add_argument("--version", action="version", version=f"iforge {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_method, methods):
        p.add_argument("--method", type=name_list(methods), default=[default_method],
                       help=f"one of {', '.join(methods)}")
        p.add_argument("--T", type=int_list, default=[30], help="ensemble members or forward passes")
        p.add_argument("--p", type=float_list, default=[0.995], help="retention probability")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="runs", help="parent directory for run outputs")

    s = sub.add_parser("simulate", help="coverage study on a simulated process")
    s.add_argument("--dgp", choices=sorted(GENERATORS), required=True)
    common(s, "extra_nn", MODEL_METHODS)
    s.add_argument("--alpha", type=float_list, default=list(DEFAULT_ALPHAS))
    s.add_argument("--n-train", type=int, default=1200)
    s.add_argument("--n-test", type=int, default=300)
    s.add_argument("--replications", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("benchmark", help="repeated random-split RMSPE on a CSV dataset")
    b.add_argument("--data", required=True)
    b.add_argument("--target", required=True)
    common(b, "extra_nn", BENCH_METHODS)
    b.set_defaults(T=[70], p=[0.95])
    b.add_argument("--splits", type=int, help="random splits (default 20; 5 for protein, 1 for msd)")
    b.add_argument("--width", type=int, help="hidden width (default 50; 100 for protein and msd)")
    b.add_argument("--epochs", type=int, default=40)
    b.add_argument("--learning-rate", type=float, default=0.01)
    b.add_argument("--allow-huge", action="store_true", help="permit very large datasets")
    b.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("predict", help="per-point intervals from a training CSV or saved model")
    p.add_argument("--data", help="training CSV")
    p.add_argument("--test", help="CSV of points to predict (default: the training rows)")
    p.add_argument("--target", default="y")
    p.add_argument("--archive", help="model archive written by --save-archive")
    p.add_argument("--save-archive", action="store_true")
    common(p, "extra_nn", MODEL_METHODS)
    p.add_argument("--alpha", type=float_list, default=list(DEFAULT_ALPHAS))
    p.add_argument("--hidden", type=int_list, default=[50], help="hidden layer widths")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--learning-rate", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--plot", action="store_true", help="also write an SVG interval plot")
    p.set_defaults(func=cmd_predict)

    r = sub.add_parser("rerun", help="re-execute a run from its manifest.json")
    r.add_argument("manifest")
    r.add_argument("--out", default="runs")
    r.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"iforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, DegenerateJacobianError, ArchiveError, DatasetError, ValueError,
            np.linalg.LinAlgError) as exc:
        print(f"iforge: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
