"""Command-line entry point: ``npkit {train,eval,complete,bo,bandit}``.

Every subcommand writes its artifacts plus a ``manifest.json`` into ``--out``
and exits non-zero with the name of the failing stage on error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("npkit")


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage} failed: {exc}")
        self.stage = stage


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def _version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_json(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    data = json.loads(path.read_text())
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top-level JSON value must be an object")
    return data


def _check_keys(section: str, data: dict, allowed) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ValueError(f"unknown keys in {section}: {sorted(unknown)}")


def write_csv(path, rows, fields) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def write_manifest(out: Path, args, started: float, config: dict, inputs: dict) -> Path:
    manifest = {
        "subcommand": args.command,
        "config_path": str(args.config) if getattr(args, "config", None) else None,
        "config": config,
        "seed": args.seed,
        "output_dir": str(out),
        "version": _version(),
        "argv": sys.argv[1:] if args.argv is None else args.argv,
        "inputs": inputs,
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


# --- subcommands -------------------------------------------------------------------

def cmd_train(args, out: Path) -> tuple[dict, dict]:
    from . import training
    from .model import NPConfig

    with _Stage("load-config"):
        raw = _read_json(args.config)
        _check_keys("train config", raw, ("train", "model"))
        train_cfg = dict(raw.get("train", {}))
        if args.seed is not None:
            train_cfg["seed"] = args.seed
        tc = training.TrainConfig.from_dict(train_cfg)
        np_cfg = NPConfig.from_dict(raw.get("model", {}))
        args.seed = tc.seed
    with _Stage("train"):
        model, history = training.train(tc, np_cfg)
    with _Stage("write-outputs"):
        ckpt = out / "model.npk"
        training.save(model, ckpt)
        training.write_loss_csv(history, out / "loss.csv")
        if args.plots:
            from . import plotting
            plotting.loss_curve(history, out / "loss.png")
    config = {"train": tc.to_dict(), "model": np_cfg.to_dict()}
    return config, {"checkpoint": {"path": str(ckpt), "sha256": _sha256(ckpt)}}


def _load_checkpoint(path):
    from . import training

    with _Stage("load-checkpoint"):
        if path is None:
            raise ValueError("--checkpoint is required")
        if not Path(path).exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        return training.load(path)


def cmd_eval(args, out: Path) -> tuple[dict, dict]:
    from . import training

    with _Stage("load-config"):
        cfg = {"n_tasks": 64, "n_points": 200, "context_sizes": [1, 10, 100], "n_samples": 16,
               "seed": 1, "task_source": {"kind": "gp"}}
        user = _read_json(args.config)
        _check_keys("eval config", user, cfg)
        cfg.update(user)
        if args.seed is not None:
            cfg["seed"] = args.seed
        args.seed = cfg["seed"]
    model = _load_checkpoint(args.checkpoint)
    with _Stage("evaluate"):
        source = cfg["task_source"]
        if source.get("kind", "gp") == "image":
            from .images import image_to_xy, load_idx
            from .gp import FunctionTask
            images = load_idx(source["path"])
            start = int(source.get("eval_start", images.count - cfg["n_tasks"]))
            rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], 0xE7A1]))
            tasks = []
            for i in range(start, start + cfg["n_tasks"]):
                xs, ys = image_to_xy(images[i])
                perm = rng.permutation(len(xs))
                tasks.append(FunctionTask(xs[perm], ys[perm], np.arange(1)))
        else:
            spec = {k: v for k, v in source.items() if k != "kind"}
            tasks = training.heldout_gp_tasks(cfg["n_tasks"], cfg["n_points"], cfg["seed"], spec)
        sweep = training.context_sweep(model, tasks, cfg["context_sizes"], cfg["n_samples"],
                                       np.random.default_rng(cfg["seed"]))
    with _Stage("write-outputs"):
        report = {str(n): r.to_dict() for n, r in sweep.items()}
        (out / "eval_report.json").write_text(json.dumps(report, indent=2) + "\n")
        rows = [{"context_size": n, **r.to_dict()} for n, r in sweep.items()]
        write_csv(out / "context_sweep.csv", rows,
                  ["context_size", "std_all", "curve_std", "std_context", "std_away", "mse", "log_likelihood", "n_tasks"])
        if args.plots:
            from . import plotting
            sizes = list(sweep)
            plotting.context_sweep(sizes, [sweep[n].std_all for n in sizes],
                                   [sweep[n].mse for n in sizes], out / "context_sweep.png")
            if model.config.x_dim == 1:
                plotting.regression_samples(model, tasks[0], sizes, out / "samples.png",
                                            rng=np.random.default_rng(cfg["seed"]))
    return cfg, {"checkpoint": {"path": str(args.checkpoint), "sha256": _sha256(args.checkpoint)}}


def cmd_complete(args, out: Path) -> tuple[dict, dict]:
    from .images import image_to_xy, load_idx, render

    with _Stage("load-inputs"):
        if args.idx is None:
            raise ValueError("--idx is required")
        images = load_idx(args.idx)
        if not 0 <= args.image_index < images.count:
            raise IndexError(f"image index {args.image_index} outside 0..{images.count - 1}")
        counts = [int(c) for c in args.context_counts.split(",")]
        seed = 0 if args.seed is None else args.seed
        args.seed = seed
    model = _load_checkpoint(args.checkpoint)
    with _Stage("complete"):
        img = images[args.image_index]
        xs, ys = image_to_xy(img)
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(xs))
        results, masks = {}, {}
        for count in counts:
            if not 1 <= count <= len(xs):
                raise ValueError(f"context count {count} outside 1..{len(xs)}")
            ctx = order[:count]
            preds = model.predict(np.hstack([xs[ctx], ys[ctx]]), xs, args.samples, rng)
            results[count] = [p.mean[:, 0] for p in preds]
            mask = np.zeros(len(xs), dtype=bool)
            mask[ctx] = True
            masks[count] = mask.reshape(images.rows, images.cols)
    with _Stage("write-outputs"):
        files = []
        for count, samples in results.items():
            for s, pred in enumerate(samples):
                files.append(render(pred, images.rows, images.cols,
                                    out / f"completion_c{count:04d}_s{s:02d}.pgm").name)
        render(ys[:, 0], images.rows, images.cols, out / "target.pgm")
        if args.plots:
            from . import plotting
            plotting.completion_grid(
                ys.reshape(images.rows, images.cols), masks,
                {c: [p.reshape(images.rows, images.cols) for p in v] for c, v in results.items()},
                out / "completions.png")
    cfg = {"idx": str(args.idx), "image_index": args.image_index, "context_counts": counts,
           "samples": args.samples, "seed": seed}
    return cfg, {"checkpoint": {"path": str(args.checkpoint), "sha256": _sha256(args.checkpoint)},
                 "idx_sha256": _sha256(args.idx), "files": files}


def cmd_bo(args, out: Path) -> tuple[dict, dict]:
    from . import bayesopt, gp

    with _Stage("load-config"):
        cfg = {"n_trials": 100, "methods": ["np", "gp_oracle", "random"], "grid_size": 256,
               "seed": 0, "lengthscale": [0.4, 2.4], "signal_variance": [0.1, 1.0],
               "noise_variance": 1e-4}
        user = _read_json(args.config)
        _check_keys("bo config", user, cfg)
        cfg.update(user)
        if args.seed is not None:
            cfg["seed"] = args.seed
        args.seed = cfg["seed"]
        unknown = set(cfg["methods"]) - set(bayesopt.METHODS)
        if unknown:
            raise ValueError(f"unknown BO methods {sorted(unknown)}")
        krange = gp.KernelRange(tuple(cfg["lengthscale"]), tuple(cfg["signal_variance"]),
                                cfg["noise_variance"])
    model = _load_checkpoint(args.checkpoint) if "np" in cfg["methods"] else None
    with _Stage("optimise"):
        trials, summary = bayesopt.compare(cfg["methods"], cfg["n_trials"],
                                           np.random.default_rng(cfg["seed"]), model, krange,
                                           cfg["grid_size"])
        wanted = list(dict.fromkeys(cfg["methods"]))
        summary = [r for r in summary if r["method"] in wanted or r["method"] == "random"]
    with _Stage("write-outputs"):
        write_csv(out / "bo_trials.csv", trials, ["trial", "method", "steps_to_min"])
        write_csv(out / "bo_summary.csv", summary,
                  ["method", "normalized_steps", "stderr", "mean_steps", "n_trials"])
        if args.plots:
            from . import plotting
            plotting.bo_summary(summary, out / "bo_summary.png")
    inputs = {}
    if model is not None:
        inputs["checkpoint"] = {"path": str(args.checkpoint), "sha256": _sha256(args.checkpoint)}
    return cfg, inputs


def cmd_bandit(args, out: Path) -> tuple[dict, dict]:
    from . import bandit

    with _Stage("load-config"):
        cfg = {"deltas": list(bandit.DELTAS), "n_trials": 20, "horizon": 500, "seed": 0}
        user = _read_json(args.config)
        _check_keys("bandit config", user, cfg)
        cfg.update(user)
        if args.seed is not None:
            cfg["seed"] = args.seed
        args.seed = cfg["seed"]
    model = _load_checkpoint(args.checkpoint)
    with _Stage("simulate"):
        rows = bandit.evaluate_bandit(model, cfg["deltas"], cfg["n_trials"], cfg["horizon"],
                                      np.random.default_rng(cfg["seed"]))
    with _Stage("write-outputs"):
        write_csv(out / "bandit_results.csv", rows,
                  ["delta", "agent", "metric", "mean", "stderr", "n_trials"])
        if args.plots:
            from . import plotting
            plotting.bandit_regret(rows, out / "bandit_regret.png")
    return cfg, {"checkpoint": {"path": str(args.checkpoint), "sha256": _sha256(args.checkpoint)}}


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "complete": cmd_complete, "bo": cmd_bo,
            "bandit": cmd_bandit}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"npkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=True, config=True):
        if config:
            p.add_argument("--config", type=Path, help="JSON configuration file")
        if checkpoint:
            p.add_argument("--checkpoint", type=Path, help="NPK1 checkpoint (JSON sidecar alongside)")
        p.add_argument("--seed", type=int, help="overrides the seed in the config")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--no-plots", dest="plots", action="store_false",
                       help="skip the matplotlib figures")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("train", help="meta-train a neural process"), checkpoint=False)
    common(sub.add_parser("eval", help="context-size sweep on held-out tasks"))
    p = sub.add_parser("complete", help="image completion from IDX images")
    common(p, config=False)
    p.add_argument("--idx", type=Path, help="IDX image file (optionally gzipped)")
    p.add_argument("--image-index", type=int, default=0)
    p.add_argument("--context-counts", default="10,100,300,784")
    p.add_argument("--samples", type=int, default=5)
    common(sub.add_parser("bo", help="Thompson-sampling optimisation benchmark"))
    common(sub.add_parser("bandit", help="wheel bandit regret table"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = list(argv) if argv is not None else None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    started = time.perf_counter()
    try:
        with _Stage("prepare-output"):
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
        config, inputs = COMMANDS[args.command](args, out)
        write_manifest(out, args, started, config, inputs)
    except StageError as exc:
        print(f"npkit {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
