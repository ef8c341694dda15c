"""Command line entry point: ``capsroute <command> [options]``.

Exit codes: 0 success, 1 other failure, 2 usage error (unknown flag or bad
value), 3 data not found, 4 training diverged.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, RunConfig, load_config, parse_config_text
from .data import (
    DataFormatError,
    DataNotFoundError,
    Dataset,
    default_data_dir,
    load_dataset,
    load_mnist,
    multimnist_plan,
    render_multimnist,
    write_idx,
)
from .gradcheck import format_table, run_gradcheck
from .layers import CapsNet, RoutingError, load_checkpoint
from .training import DivergenceError, eval_checkpoint_averaged, train

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_NO_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4

log = logging.getLogger("capsroute")

# flag -> config key; every one of these can also be set in a config file
_CONFIG_FLAGS = {
    "preset": str, "dataset": str, "activation": str, "pa_n": int, "ci_bar": float, "ci_power": int,
    "prim_channels": int, "routing_iters": int, "weight_decay": float, "dropout_keep": float,
    "dropout_mode": str, "seed": int, "top": int, "coeff_top": int, "threshold": float,
    "map_reduce": str, "max_steps": int, "batch_size": int, "learning_rate": float,
    "train_subset": int, "test_subset": int, "checkpoint_every": int, "log_every": int,
    "eval_every": int, "eval_checkpoints": int, "checkpoint_average": str, "data_dir": str,
    "run_root": str,
}
_CHOICES = {
    "activation": ["squash", "ci", "pa"],
    "prim_channels": [8, 64, 2],
    "dropout_mode": ["capsule", "element"],
    "map_reduce": ["max", "mean"],
    "checkpoint_average": ["metric", "weights"],
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    for key, kind in _CONFIG_FLAGS.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=kind, choices=_CHOICES.get(key),
                       default=None, help=f"config key '{key}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capsroute", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network; writes checkpoints and train_log.csv")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="checkpoint-averaged test error")
    _add_config_flags(p)
    p.add_argument("--checkpoint", nargs="+", required=True,
                   help="checkpoint files or a run directory (its last eval_checkpoints checkpoints are used)")

    p = sub.add_parser("analyze", help="write analysis CSVs")
    p.add_argument("kind", choices=["curve", "coeff", "influence", "actmap"])
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", type=int, default=0, help="image index for actmap")
    p.add_argument("--iterations", type=int, default=None, help="routing iterations for coeff")

    p = sub.add_parser("synth-multimnist", help="write MultiMNIST IDX files from MNIST")
    p.add_argument("--data-dir", default=None, help="MNIST root (default $CAPSROUTE_DATA_DIR)")
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--per-image", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None, help="output directory (default <data-dir>/multimnist)")
    p.add_argument("--chunk", type=int, default=10000)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--only", nargs="*", default=None, help="restrict to these primitives")
    return parser


def _overrides(args) -> dict:
    return {k: getattr(args, k) for k in _CONFIG_FLAGS if getattr(args, k, None) is not None}


def _config_from_args(args, base: RunConfig | None = None) -> RunConfig:
    """Config file then flags; with ``base`` (a checkpoint's config) both apply on top of it."""
    overrides = _overrides(args)
    if base is None:
        return load_config(args.config, **overrides)
    values = base.to_dict()
    if args.config:
        values.update(parse_config_text(Path(args.config).read_text()))
    values.update(overrides)
    return RunConfig.from_mapping(values)


def make_run_dir(config: RunConfig, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    root = Path(config.run_root)
    run_dir = root / f"{config.config_hash()}-{stamp}"
    k = 1
    while run_dir.exists():
        run_dir = root / f"{config.config_hash()}-{stamp}-{k}"
        k += 1
    run_dir.mkdir(parents=True)
    (run_dir / "config.txt").write_text(f"# capsroute {command}\n" + config.to_text())
    return run_dir


def _load_split(config: RunConfig, split: str) -> Dataset:
    data = load_dataset(config.dataset, split, config.data_dir or None)
    subset = config.train_subset if split == "train" else config.test_subset
    return data.stratified_subset(subset) if subset else data


def _eval_set(config: RunConfig) -> Dataset:
    name = config.dataset if config.dataset.endswith(("-train", "-test")) else config.dataset + "-test"
    data = load_dataset(name, "test", config.data_dir or None)
    return data.stratified_subset(config.test_subset) if config.test_subset else data


def _model_for_analysis(path: str, args) -> CapsNet:
    model, _ = load_checkpoint(path)
    cfg = _config_from_args(args, model.config)
    if cfg == model.config:
        return model
    rebuilt = CapsNet(cfg)
    rebuilt.load_state_dict(model.state_dict())
    return rebuilt


def cmd_train(args) -> int:
    config = _config_from_args(args)
    train_set = _load_split(config, "train")
    try:
        test_set = _load_split(config, "test")
    except DataNotFoundError:
        test_set = None
    run_dir = make_run_dir(config, "train")
    result = train(config, train_set, run_dir, test_set)
    print(run_dir)
    print(f"checkpoints: {len(result.checkpoints)}  final loss: {result.losses[-1]:.6f}")
    return EXIT_OK


def _expand_checkpoints(items: list[str], keep: int) -> list[Path]:
    paths: list[Path] = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            found = sorted(p.glob("ckpt-*.bin"))
            paths.extend(found[-keep:] if keep else found)
        elif p.is_file():
            paths.append(p)
        else:
            raise FileNotFoundError(f"checkpoint {item} not found")
    if not paths:
        raise FileNotFoundError("no checkpoints found")
    return paths


def cmd_eval(args) -> int:
    ckpts = [str(p) for p in _expand_checkpoints(args.checkpoint, 0)]
    first, _ = load_checkpoint(ckpts[0])
    config = _config_from_args(args, first.config)
    ckpts = [str(p) for p in _expand_checkpoints(args.checkpoint, config.eval_checkpoints)]
    test_set = _eval_set(config)
    err = eval_checkpoint_averaged(ckpts, test_set, mode=config.checkpoint_average)
    run_dir = make_run_dir(config, "eval")
    with open(run_dir / "eval.csv", "w") as fh:
        fh.write("checkpoints,mode,num_images,error_rate\n")
        fh.write(f"{len(ckpts)},{config.checkpoint_average},{len(test_set)},{err!r}\n")
    print(run_dir)
    print(f"error rate over {len(ckpts)} checkpoint(s) ({config.checkpoint_average}): {err:.6f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    model = _model_for_analysis(args.checkpoint, args)
    config = model.config
    run_dir = make_run_dir(config, f"analyze {args.kind}")
    if args.kind == "actmap":
        data = _eval_set(config)
        if not 0 <= args.index < len(data):
            raise IndexError(f"image index {args.index} out of range [0, {len(data)})")
        grid = analysis.activation_map(model, data.images[args.index], reduce=config.map_reduce)
        out = analysis.write_map_csv(run_dir / "actmap.csv", grid)
    elif args.kind == "curve":
        curve = analysis.ordered_activation_curve(model, _eval_set(config))
        out = analysis.write_curve_csv(run_dir / "curve.csv", {config.activation: curve.values}, top=config.top)
    elif args.kind == "coeff":
        stat = analysis.routing_coeff_stat(model, _eval_set(config), config.threshold, args.iterations)
        out = analysis.write_coeff_csv(run_dir / "coeff.csv", stat, top=config.coeff_top)
        print(f"mean capsules per image with max coefficient > {config.threshold}: {stat.count:.3f}"
              f" of {stat.sorted_max.shape[1]}")
    else:
        report = analysis.influence_report(model, _eval_set(config))
        out = analysis.write_influence_csv(run_dir / "influence.csv", report)
        print(f"correlation(influence, |u|): {report.correlation:.4f}")
    print(out)
    return EXIT_OK


def cmd_synth(args) -> int:
    root = Path(args.data_dir) if args.data_dir else default_data_dir()
    mnist = load_mnist(root, args.split)
    raw = (mnist.images[:, 0] * 255.0).round().astype(np.uint8)
    plan = multimnist_plan(mnist.labels, args.per_image, args.seed)
    out_images = np.empty((len(plan), 36, 36), dtype=np.uint8)
    for start in range(0, len(plan), args.chunk):
        out_images[start : start + args.chunk] = render_multimnist(raw, plan[start : start + args.chunk])
    labels = np.column_stack([mnist.labels[plan[:, 0]], mnist.labels[plan[:, 1]]]).astype(np.uint8)
    out = Path(args.output) if args.output else root / "multimnist"
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / f"multimnist-{args.split}-images-idx3-ubyte", out_images)
    write_idx(out / f"multimnist-{args.split}-labels-idx2-ubyte", labels)
    print(f"{len(plan)} images written to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(args.seed, args.cases, args.only)
    if not results:
        print("no primitives selected", file=sys.stderr)
        return EXIT_USAGE
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


_COMMANDS = {"train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze,
             "synth-multimnist": cmd_synth, "gradcheck": cmd_gradcheck}


def _error(kind: str, exc: BaseException) -> None:
    print(f"capsroute: error: {kind}: {exc}", file=sys.stderr)


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        _error("config", exc)
        return EXIT_USAGE
    except DataNotFoundError as exc:
        _error("data not found", exc)
        return EXIT_NO_DATA
    except (DivergenceError, RoutingError) as exc:
        _error("diverged", exc)
        return EXIT_DIVERGED
    except (DataFormatError, FileNotFoundError, ValueError, IndexError, OSError) as exc:
        _error(type(exc).__name__, exc)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
