"""Command-line entry point for reproducible experiments.

Subcommands: ``train`` (SGD or sEM), ``eval`` (losses, responsibility
peaking and cluster metrics), ``visualize`` (centroid tile image),
``gridsearch`` (sEM step-size grid) and ``rerun`` (replay a run from
its manifest). Every run directory receives a ``manifest.json`` that
alone suffices to reproduce the run; all outputs except the recorded
wall-clock timing are byte-stable across reruns.

Structured outputs are JSON (one object per line for logs and tables)
with stable field names, so experiments stay scriptable and diffable.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import SyntheticSpec, class_filter, load_csv, load_idx, synthetic_stream
from .errors import ConfigurationError, GmmError, ShapeError
from .metrics import assign, davies_bouldin, dunn_index
from .model import GmmModel, TrainConfig, init_model, load_model, save_model
from .sem import SemConfig, minibatch_kmeans, sem_grid_search, sem_train
from .sgd import evaluate, train


def build_id() -> str:
    """git describe of the working tree when available, else version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except OSError:
        pass
    return f"gmmstream-{__version__}"


class OutputTracker:
    """Remembers files/dirs created by a command so a failed run can
    remove its partial outputs."""

    def __init__(self):
        self.files = []
        self.dirs = []

    def mkdir(self, path: Path) -> Path:
        path = Path(path)
        missing = []
        probe = path
        while not probe.exists():
            missing.append(probe)
            probe = probe.parent
        path.mkdir(parents=True, exist_ok=True)
        self.dirs.extend(reversed(missing))
        return path

    def register(self, path: Path) -> Path:
        self.files.append(Path(path))
        return Path(path)

    def cleanup(self):
        for f in self.files:
            try:
                f.unlink(missing_ok=True)
            except OSError:
                pass
        for d in reversed(self.dirs):
            try:
                d.rmdir()
            except OSError:
                pass


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def parse_classes(text):
    """Parse '1-9' or '0,2,5' (mixes allowed) into a sorted label list."""
    if text is None:
        return None
    out = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.update(range(int(lo), int(hi) + 1))
        else:
            out.add(int(part))
    if not out:
        raise ConfigurationError(f"empty class filter: {text!r}")
    return sorted(out)


def open_stream(data, fmt, labels=None, classes=None, shuffle_seed=None, label_column=None):
    if fmt == "idx":
        stream = load_idx(data, labels, shuffle_seed=shuffle_seed)
    elif fmt == "csv":
        stream = load_csv(data, label_column=label_column)
    elif fmt == "synthetic":
        stream = synthetic_stream(SyntheticSpec.from_json(data))
    else:
        raise ConfigurationError(f"unknown data format {fmt!r}")
    if classes is not None:
        stream = class_filter(stream, classes)
    return stream


def _train_config(args, seed) -> TrainConfig:
    return TrainConfig(
        batch_size=args["batch_size"],
        epochs=args["epochs"],
        eps0=args["lr"],
        eps_inf=args["lr_floor"],
        sigma0=args["sigma0"],
        sigma_inf=args["sigma_inf"],
        delta=args["delta"],
        d_max=args["dmax"],
        mu_i=args["mui"],
        seed=seed,
    )


def _sem_config(args) -> SemConfig:
    return SemConfig(
        rho0=args["rho0"],
        alpha_sem=args["rho_alpha"],
        rho_inf=args["rho_inf"],
        batch_size=args["batch_size"],
        burnin_fraction=args["burnin"],
        epochs=args["epochs"],
        d_max=args["dmax"],
    )


def _open_train_streams(args):
    stream = open_stream(
        args["data"],
        args["format"],
        labels=args.get("labels"),
        classes=args.get("classes"),
        shuffle_seed=args.get("shuffle_seed"),
        label_column=args.get("label_column"),
    )
    eval_stream = None
    if args.get("test_data"):
        eval_stream = open_stream(
            args["test_data"],
            args["format"],
            labels=args.get("test_labels"),
            classes=args.get("classes"),
            label_column=args.get("label_column"),
        )
    return stream, eval_stream


def _run_one_training(args, seed, out_dir: Path, tracker: OutputTracker):
    stream, eval_stream = _open_train_streams(args)
    config = _train_config(args, seed)
    model = init_model(args["k"], stream.dim, config)
    if args.get("init") == "kmeans":
        model.mu = minibatch_kmeans(stream, args["k"], seed)

    log_path = tracker.register(out_dir / "train_log.jsonl")
    with open(log_path, "w") as log_fh:

        def on_check(record):
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")

        if args["algo"] == "sgd":
            model, report = train(
                model, stream, config, eval_stream=eval_stream, on_check=on_check
            )
            state = report.annealing_state
        else:
            model, report = sem_train(
                model, stream, _sem_config(args), eval_stream=eval_stream, on_log=on_check
            )
            state = None

    model_path = tracker.register(out_dir / "model.gmm")
    save_model(model, state, model_path)

    payload = report.to_dict()
    wall = payload.pop("wall_time")
    payload["timing"] = {"wall_time": wall}
    payload["seed"] = seed
    report_path = tracker.register(out_dir / "report.json")
    _write_json(report_path, payload)
    return report


def cmd_train(args: dict, tracker: OutputTracker) -> int:
    out_dir = tracker.mkdir(Path(args["out_dir"]))
    _write_manifest(out_dir, "train", args, tracker)
    repeats = args.get("repeats", 1)
    if repeats == 1:
        report = _run_one_training(args, args["seed"], out_dir, tracker)
        print(
            json.dumps(
                {
                    "final_max_component_loss": report.final_max_component_loss,
                    "final_full_log_likelihood": report.final_full_log_likelihood,
                    "mean_max_responsibility": report.mean_max_responsibility,
                    "iterations": report.iterations,
                },
                sort_keys=True,
            )
        )
        return 0
    finals = {"final_max_component_loss": [], "final_full_log_likelihood": [], "mean_max_responsibility": []}
    for i in range(repeats):
        seed = args["seed"] + i
        run_dir = tracker.mkdir(out_dir / f"run-{seed}")
        report = _run_one_training(args, seed, run_dir, tracker)
        finals["final_max_component_loss"].append(report.final_max_component_loss)
        finals["final_full_log_likelihood"].append(report.final_full_log_likelihood)
        finals["mean_max_responsibility"].append(report.mean_max_responsibility)
    summary = {}
    for key, vals in finals.items():
        arr = np.asarray(vals)
        summary[key] = {"mean": float(arr.mean()), "std": float(arr.std(ddof=1)), "values": vals}
    summary["repeats"] = repeats
    summary["seeds"] = [args["seed"] + i for i in range(repeats)]
    _write_json(tracker.register(out_dir / "summary.json"), summary)
    print(json.dumps({k: v["mean"] for k, v in summary.items() if isinstance(v, dict)}, sort_keys=True))
    return 0


def cmd_eval(args: dict, tracker: OutputTracker) -> int:
    model, _state = load_model(args["model"])
    stream = open_stream(
        args["data"],
        args["format"],
        labels=args.get("labels"),
        classes=args.get("classes"),
        label_column=args.get("label_column"),
    )
    summary = evaluate(model, stream)
    record = {
        "command": "eval",
        "model": str(args["model"]),
        "data": str(args["data"]),
        "n_samples": summary.n_samples,
        "max_component_loss": summary.max_component_loss,
        "full_log_likelihood": summary.full_log_likelihood,
        "mean_max_responsibility": summary.mean_max_responsibility,
        "davies_bouldin": None,
        "dunn": None,
        "dunn_cap": args.get("dunn_cap"),
        "dunn_seed": args.get("dunn_seed", 0),
        "metrics_error": None,
    }
    X, _ = stream.to_array(limit=args.get("max_metric_samples"))
    assignment = assign(model, X)
    try:
        record["davies_bouldin"] = davies_bouldin(X, assignment, model.mu)
        record["dunn"] = dunn_index(
            X, assignment, cap=args.get("dunn_cap"), seed=args.get("dunn_seed", 0)
        )
    except GmmError as exc:
        record["metrics_error"] = f"{exc.category}: {exc}"
    line = json.dumps(record, sort_keys=True)
    print(line)
    if args.get("out"):
        out = tracker.register(Path(args["out"]))
        with open(out, "w") as fh:
            fh.write(line + "\n")
    return 0


def _tile_image(model: GmmModel, shape) -> np.ndarray:
    channels = shape[2] if len(shape) == 3 else 1
    rows, cols = shape[0], shape[1]
    if rows * cols * channels != model.dim:
        raise ShapeError(
            f"--shape {'x'.join(map(str, shape))} does not factor model dim {model.dim}"
        )
    side = model.grid_side
    if side * side != model.k:
        raise ConfigurationError("model k is not a perfect square; cannot tile")
    canvas = np.zeros((side * rows, side * cols, channels))
    for k in range(model.k):
        r, c = divmod(k, side)
        tile = model.mu[k].reshape(rows, cols, channels)
        canvas[r * rows : (r + 1) * rows, c * cols : (c + 1) * cols, :] = tile
    # documented rounding: floor(v * 255), clamped to [0, 255]
    return np.clip(np.floor(canvas * 255.0), 0, 255).astype(np.uint8)


def write_pnm(path, pixels: np.ndarray) -> None:
    """Write (h, w, 1) as binary PGM (P5) or (h, w, 3) as PPM (P6)."""
    h, w, ch = pixels.shape
    if ch == 1:
        header = f"P5\n{w} {h}\n255\n"
    elif ch == 3:
        header = f"P6\n{w} {h}\n255\n"
    else:
        raise ShapeError(f"cannot write {ch}-channel image as PGM/PPM")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pixels.tobytes())


def cmd_visualize(args: dict, tracker: OutputTracker) -> int:
    model, _ = load_model(args["model"])
    shape = tuple(args["shape"])
    if len(shape) not in (2, 3):
        raise ConfigurationError("--shape takes ROWS COLS or ROWS COLS CHANNELS")
    pixels = _tile_image(model, shape)
    out = tracker.register(Path(args["out"]))
    write_pnm(out, pixels)
    print(json.dumps({"command": "visualize", "out": str(out), "size": list(pixels.shape)}))
    return 0


def cmd_gridsearch(args: dict, tracker: OutputTracker) -> int:
    out_dir = tracker.mkdir(Path(args["out_dir"]))
    _write_manifest(out_dir, "gridsearch", args, tracker)
    stream, eval_stream = _open_train_streams(args)
    grids = {
        "rho0": args["rho0"],
        "alpha_sem": args["rho_alpha"],
        "rho_inf": args["rho_inf"],
    }
    init_config = _train_config(args, args["seed"])
    base = SemConfig(
        batch_size=args["batch_size"],
        burnin_fraction=args["burnin"],
        epochs=args["epochs"],
        d_max=args["dmax"],
    )
    init_mu = None
    if args.get("init") == "kmeans":
        init_mu = minibatch_kmeans(stream, args["k"], args["seed"])
    best, rows = sem_grid_search(
        stream,
        grids,
        k=args["k"],
        init_config=init_config,
        base=base,
        eval_stream=eval_stream,
        init_mu=init_mu,
    )
    table = tracker.register(out_dir / "results.jsonl")
    with open(table, "w") as fh:
        for rank, row in enumerate(rows, start=1):
            fh.write(json.dumps({"rank": rank, **row}, sort_keys=True) + "\n")
    best_payload = {
        "rho0": best.rho0,
        "alpha_sem": best.alpha_sem,
        "rho_inf": best.rho_inf,
        "rows": len(rows),
    }
    _write_json(tracker.register(out_dir / "best.json"), best_payload)
    print(json.dumps({"command": "gridsearch", **best_payload}, sort_keys=True))
    return 0


def _write_manifest(out_dir: Path, command: str, args: dict, tracker: OutputTracker):
    manifest = {
        "command": command,
        "args": {k: v for k, v in sorted(args.items())},
        "build": build_id(),
        "package_version": __version__,
    }
    _write_json(tracker.register(out_dir / "manifest.json"), manifest)


def cmd_rerun(args: dict, tracker: OutputTracker) -> int:
    with open(args["manifest"]) as fh:
        manifest = json.load(fh)
    command = manifest["command"]
    replay = dict(manifest["args"])
    if args.get("out_dir"):
        replay["out_dir"] = args["out_dir"]
    handler = {"train": cmd_train, "gridsearch": cmd_gridsearch}.get(command)
    if handler is None:
        raise ConfigurationError(f"manifest command {command!r} cannot be rerun")
    return handler(replay, tracker)


def _add_data_flags(p, with_test=True):
    p.add_argument("--data", required=True, help="dataset path (IDX images, CSV, or synthetic spec JSON)")
    p.add_argument("--format", required=True, choices=["idx", "csv", "synthetic"])
    p.add_argument("--labels", help="IDX label file accompanying --data")
    p.add_argument("--label-column", type=int, help="CSV column holding integer labels")
    p.add_argument("--classes", help="keep only these labels, e.g. '1-9' or '0,2,5'")
    if with_test:
        p.add_argument("--test-data", help="held-out data for final evaluation")
        p.add_argument("--test-labels", help="IDX label file for --test-data")


def _add_train_flags(p):
    p.add_argument("--k", type=int, default=64, help="component count (perfect square)")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.001, help="initial learning rate")
    p.add_argument("--lr-floor", type=float, default=0.0001)
    p.add_argument("--sigma0", type=float, default=2.0)
    p.add_argument("--sigma-inf", type=float, default=0.01)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--dmax", type=float, default=20.0)
    p.add_argument("--mui", type=float, default=0.1, help="centroid init range")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shuffle-seed", type=int, help="seeded shuffle for file-backed streams")
    p.add_argument("--init", choices=["random", "kmeans"], default="random")
    p.add_argument("--burnin", type=float, default=0.10, help="sEM burn-in fraction")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmmstream",
        description="Streaming Gaussian mixture training experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a mixture by SGD or stochastic EM")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--algo", choices=["sgd", "sem"], default="sgd")
    p.add_argument("--rho0", type=float, default=0.05, help="sEM initial step size")
    p.add_argument("--rho-alpha", type=float, default=0.25, help="sEM step exponent offset")
    p.add_argument("--rho-inf", type=float, default=0.001, help="sEM step-size floor")
    p.add_argument("--repeats", type=int, default=1, help="run this many seeds, report mean/std")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("eval", help="score a saved model on a dataset")
    _add_data_flags(p, with_test=False)
    p.add_argument("--model", required=True)
    p.add_argument("--dunn-cap", type=int, default=2000)
    p.add_argument("--dunn-seed", type=int, default=0)
    p.add_argument("--max-metric-samples", type=int, help="cap on samples materialized for metrics")
    p.add_argument("--out", help="also write the record to this file")

    p = sub.add_parser("visualize", help="tile centroids into a PGM/PPM image")
    p.add_argument("--model", required=True)
    p.add_argument("--shape", type=int, nargs="+", required=True, help="ROWS COLS [CHANNELS]")
    p.add_argument("--out", required=True)

    p = sub.add_parser("gridsearch", help="sEM step-size grid search")
    _add_data_flags(p)
    _add_train_flags(p)
    p.add_argument("--rho0", type=float, nargs="*", default=[0.01, 0.05, 0.1])
    p.add_argument("--rho-alpha", type=float, nargs="*", default=[0.01, 0.25, 0.5])
    p.add_argument("--rho-inf", type=float, nargs="*", default=[0.01, 0.001, 0.0001])
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", help="write outputs here instead of the recorded directory")
    return parser


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "visualize": cmd_visualize,
    "gridsearch": cmd_gridsearch,
    "rerun": cmd_rerun,
}


def main(argv=None) -> int:
    parser = make_parser()
    ns = parser.parse_args(argv)
    args = {k: v for k, v in vars(ns).items() if k != "command"}
    if "classes" in args and isinstance(args.get("classes"), str):
        args["classes"] = parse_classes(args["classes"])
    tracker = OutputTracker()
    try:
        return HANDLERS[ns.command](args, tracker)
    except GmmError as exc:
        tracker.cleanup()
        print(f'error category={exc.category} message="{exc}"', file=sys.stderr)
        return 1
    except OSError as exc:
        tracker.cleanup()
        print(f'error category=io message="{exc}"', file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
