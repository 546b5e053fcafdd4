"""Command-line entry point ``metaiot``.

Exit codes: 0 success, 2 configuration error, 3 numerical or stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .channel import derive_seed
from .config import RunConfig, load_config
from .errors import ConfigError, MetaIoTError, StageError
from .pipeline import (STREAM_TEST, STREAM_TRAIN, dataset, evaluate_run, fit, optimize_structure, run_codesign,
                       run_sweep, write_history, write_trace)
from .sensefn import Dataset, SensingModel, forward, rmse

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration (default: packaged toy config)")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--mode", choices=("paper", "ml"), help="error-probability form used by I_EN")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="metaiot", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"metaiot {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("codesign", parents=[common], help="structure search, data synthesis, training, evaluation")
    sub.add_parser("optimize-structure", parents=[common], help="search the structure minimising I_EN")

    g = sub.add_parser("gen-dataset", parents=[common], help="simulate received-power records for a structure")
    g.add_argument("--structure", help="comma-separated gap widths in mm (default: <out>/structure.json)")
    g.add_argument("--split", choices=("train", "test"), default="train")

    t = sub.add_parser("train", parents=[common], help="train the sensing function on a dataset")
    t.add_argument("--dataset", type=Path, help="dataset CSV (default: <out>/train.csv)")

    e = sub.add_parser("evaluate", parents=[common], help="RMSE of a model on a dataset or a finished run")
    e.add_argument("--model", type=Path)
    e.add_argument("--dataset", type=Path)

    s = sub.add_parser("sweep", parents=[common], help="RMSE of the three structure cases versus P or D")
    s.add_argument("--axis", choices=("power", "distance"), required=True)
    s.add_argument("--retrain-per-point", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--no-plot", action="store_true", help="skip the gnuplot script")

    i = sub.add_parser("infer", parents=[common], help="estimate conditions from one measured spectrum")
    i.add_argument("--model", type=Path, required=True)
    src = i.add_mutually_exclusive_group(required=True)
    src.add_argument("--power", help="comma-separated received powers in dBm")
    src.add_argument("--input", type=Path, help="dataset CSV; every record is inferred")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    over = {"seed": args.seed, "mode": args.mode, "workers": args.workers,
            "output_dir": str(args.out) if args.out else None}
    if getattr(args, "retrain_per_point", None) is not None:
        over["sweep.retrain_per_point"] = args.retrain_per_point
    return cfg.with_overrides(**over)


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _structure(args, cfg: RunConfig) -> np.ndarray:
    if args.structure:
        return _floats(args.structure)
    path = cfg.output_dir / "structure.json"
    if not path.is_file():
        raise ConfigError(f"no --structure given and {path} does not exist (run optimize-structure first)")
    return np.array(json.loads(path.read_text())["d_star_mm"])


def _print_json(doc: dict) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _cmd(args) -> int:
    cfg = _config(args)
    out = cfg.output_dir
    cmd = args.command

    if cmd == "codesign":
        m = run_codesign(cfg, out)
        _print_json({k: m[k] for k in ("d_star_mm", "i_en_d_star", "train_rmse", "test_rmse", "config_hash")})
    elif cmd == "optimize-structure":
        out.mkdir(parents=True, exist_ok=True)
        st = optimize_structure(cfg)
        write_trace(st.surrogate.trace, out / "trace.csv")
        (out / "structure.json").write_text(json.dumps(st.to_json(), indent=2, sort_keys=True) + "\n")
        _print_json(st.to_json())
    elif cmd == "gen-dataset":
        d = _structure(args, cfg)
        if d.shape != (cfg.design.dim,) or not cfg.design.feasible(d):
            raise ConfigError(f"structure {d.tolist()} is not feasible in the design space")
        out.mkdir(parents=True, exist_ok=True)
        stream = STREAM_TRAIN if args.split == "train" else STREAM_TEST
        ds = dataset(cfg, d, cfg.channel, derive_seed(cfg.seed, stream))
        ds.to_csv(out / f"{args.split}.csv")
        print(f"wrote {len(ds)} records to {out / f'{args.split}.csv'}")
    elif cmd == "train":
        path = args.dataset or out / "train.csv"
        if not path.is_file():
            raise ConfigError(f"dataset {path} does not exist")
        res = fit(cfg, Dataset.from_csv(path))
        out.mkdir(parents=True, exist_ok=True)
        res.model.save(out / "model.json")
        write_history(res.history, out / "history.csv")
        _print_json({"best_epoch": res.best_epoch, "train_rmse": res.history[res.best_epoch]["train_rmse"]})
    elif cmd == "evaluate":
        if args.model or args.dataset:
            if not (args.model and args.dataset):
                raise ConfigError("--model and --dataset go together")
            _print_json({"rmse": rmse(SensingModel.load(args.model), Dataset.from_csv(args.dataset))})
        else:
            _print_json(evaluate_run(out))
    elif cmd == "sweep":
        m = run_sweep(cfg, args.axis, out, plot=not args.no_plot)
        print(f"wrote {out / ('sweep_' + args.axis + '.csv')}")
        _print_json({"d_star_mm": m["d_star_mm"], "d_star_grid_mm": m["d_star_grid_mm"]})
    elif cmd == "infer":
        model = SensingModel.load(args.model)
        spectra = [_floats(args.power)] if args.power else list(Dataset.from_csv(args.input).powers)
        names = model.target_names or tuple(f"cond_{k + 1}" for k in range(model.sizes[2]))
        units = model.target_units or ("",) * len(names)
        for p in spectra:
            est = forward(model, p)
            print("  ".join(f"{n}={v:.4f} {u}".rstrip() for n, v, u in zip(names, est, units)))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _cmd(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except MetaIoTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
