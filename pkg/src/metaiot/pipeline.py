"""End-to-end runs: structure search, data synthesis, training, evaluation, sweeps.

Every random quantity is drawn from a stream derived from the master seed,
so results do not depend on job scheduling or on the worker count:

==========  ==================================================
stream      use
==========  ==================================================
0           surrogate optimiser
1, ...      training data (extra keys: axis, sweep point)
2, ...      test data (extra keys: axis, sweep point)
3           network initialisation and batch order
==========  ==================================================

All structures in one comparison share these streams (matched seeds).
"""

from __future__ import annotations

import contextlib
import csv
import datetime as _dt
import functools
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .channel import ChannelParams, derive_seed, substream
from .config import RunConfig, as_plain, build_config
from .discernibility import indiscernibility_en
from .errors import ConfigError, DomainError, StageError
from .sensefn import Dataset, SensingModel, TrainResult, forward, generate_dataset, rmse, train
from .structopt import SurrogateResult, grid_average, grid_search, surrogate_optimize

log = logging.getLogger(__name__)

STREAM_OPT, STREAM_TRAIN, STREAM_TEST, STREAM_INIT = 0, 1, 2, 3
AXES = {"power": ("P_watt", "power_w", 1), "distance": ("D_m", "distance_m", 2)}
CASES = ("d_star", "d_star_grid", "grid_average")

MANIFEST = "manifest.json"
CONFIG_COPY = "config.yaml"


# ---------------------------------------------------------------- helpers

@contextlib.contextmanager
def stage(name: str):
    """Re-raise any failure other than a configuration error as :class:`StageError`."""
    try:
        yield
    except (ConfigError, StageError):
        raise
    except Exception as exc:  # noqa: BLE001 - wrapped with the stage name
        raise StageError(name, exc) from exc


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Ordered map; a process pool when ``workers > 1``."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


@functools.lru_cache(maxsize=4)
def _config_from_json(raw_json: str) -> RunConfig:
    return build_config(json.loads(raw_json))


def _raw_json(cfg: RunConfig) -> str:
    return json.dumps(cfg.raw, sort_keys=True)


def objective(cfg: RunConfig) -> Callable[[np.ndarray], float]:
    """``d -> I_EN(d)`` at the nominal channel."""
    return lambda d: indiscernibility_en(d, cfg.conditions, cfg.channel, cfg.frequency, cfg.circuit, cfg.mode)


def train_config(cfg: RunConfig):
    return replace(cfg.training, seed=derive_seed(cfg.seed, STREAM_INIT))


def fit(cfg: RunConfig, ds: Dataset) -> TrainResult:
    res = train(ds, train_config(cfg), out_range=(cfg.conditions.lower, cfg.conditions.upper))
    res.model.target_names, res.model.target_units = cfg.conditions.names, cfg.conditions.units
    return res


def dataset(cfg: RunConfig, d, cp: ChannelParams, seed: int) -> Dataset:
    return generate_dataset(np.asarray(d, dtype=float), cfg.conditions, cp, cfg.frequency, cfg.circuit,
                            cfg.n_meas, seed)


def write_trace(trace, path: Path) -> None:
    dim = len(trace.points[0]) if len(trace) else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eval_idx", *[f"d_{k + 1}_mm" for k in range(dim)], "objective"])
        for i, *rest in trace.rows():
            w.writerow([i, *map(repr, rest)])


# ---------------------------------------------------------------- structure search

@dataclass
class StructureResult:
    d_star: np.ndarray
    i_en: float
    d_grid: np.ndarray
    i_en_grid: float
    i_en_grid_average: float
    surrogate: SurrogateResult

    def to_json(self) -> dict:
        return {"d_star_mm": as_plain(self.d_star), "i_en_d_star": self.i_en, "d_star_grid_mm": as_plain(self.d_grid),
                "i_en_d_star_grid": self.i_en_grid, "i_en_grid_average": self.i_en_grid_average}


def optimize_structure(cfg: RunConfig) -> StructureResult:
    """Surrogate search for d* plus the integer-grid baselines of the same objective."""
    obj = objective(cfg)
    res = surrogate_optimize(obj, cfg.design, cfg.surrogate, substream(cfg.seed, STREAM_OPT))
    grid = cfg.design.integer_grid()
    if grid:
        d_grid, v_grid = grid_search(obj, grid)
        v_avg = grid_average(obj, grid)
    else:
        d_grid, v_grid, v_avg = res.x, res.value, res.value
    return StructureResult(res.x, res.value, d_grid, v_grid, v_avg, res)


def average_grid(cfg: RunConfig) -> list[np.ndarray]:
    """Integer-grid structures for the grid-average case, thinned evenly to the configured cap."""
    grid = cfg.design.integer_grid()
    cap = cfg.sweep.grid_average_cap
    if len(grid) <= cap:
        return grid
    idx = np.unique(np.linspace(0, len(grid) - 1, cap).round().astype(int))
    return [grid[i] for i in idx]


# ---------------------------------------------------------------- codesign

def run_codesign(cfg: RunConfig, out_dir: str | Path | None = None) -> dict:
    """Structure search, then data synthesis, training and held-out evaluation.

    Writes ``trace.csv``, ``train.csv``, ``test.csv``, ``model.json``,
    ``config.yaml`` and ``manifest.json`` into ``out_dir``. A failing stage
    raises :class:`StageError`; files written before it are kept.
    """
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    (out / CONFIG_COPY).write_text(cfg.to_yaml())

    with stage("optimize"):
        st = optimize_structure(cfg)
        write_trace(st.surrogate.trace, out / "trace.csv")
    log.info("d* = %s, I_EN = %.6g", st.d_star.tolist(), st.i_en)

    with stage("dataset"):
        train_ds = dataset(cfg, st.d_star, cfg.channel, derive_seed(cfg.seed, STREAM_TRAIN))
        test_ds = dataset(cfg, st.d_star, cfg.channel, derive_seed(cfg.seed, STREAM_TEST))
        train_ds.to_csv(out / "train.csv")
        test_ds.to_csv(out / "test.csv")

    with stage("train"):
        result = fit(cfg, train_ds)
        result.model.save(out / "model.json")
        write_history(result.history, out / "history.csv")

    with stage("evaluate"):
        # scored on the persisted artifacts so that `evaluate` reproduces it exactly
        model = SensingModel.load(out / "model.json")
        train_rmse = rmse(model, Dataset.from_csv(out / "train.csv"))
        test_rmse = rmse(model, Dataset.from_csv(out / "test.csv"))

    files = [CONFIG_COPY, "trace.csv", "train.csv", "test.csv", "model.json", "history.csv"]
    manifest = {
        "tool": "metaiot",
        "version": __version__,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "mode": cfg.mode,
        **st.to_json(),
        "best_epoch": result.best_epoch,
        "train_rmse": train_rmse,
        "test_rmse": test_rmse,
        "artifacts": {f: {"path": f, "sha256": sha256_file(out / f)} for f in files},
        "timestamps": {"started": started, "finished": _now()},
    }
    write_manifest(manifest, out / MANIFEST)
    return manifest


def write_history(history: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_rmse", "val_rmse"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_rmse"]), "" if h["val_rmse"] is None else repr(h["val_rmse"])])


def write_manifest(manifest: dict, path: Path) -> None:
    Path(path).write_text(json.dumps(as_plain(manifest), indent=2, sort_keys=True) + "\n")


def read_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / MANIFEST
    try:
        return json.loads(path.read_text())
    except OSError:
        raise ConfigError(f"no run manifest at {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None


def verify_artifacts(run_dir: str | Path, manifest: dict) -> None:
    """Raise :class:`DomainError` when an artifact is missing or its checksum differs."""
    for name, entry in manifest.get("artifacts", {}).items():
        path = Path(run_dir) / entry["path"]
        if not path.is_file():
            raise DomainError(f"artifact {name} missing at {path}")
        if sha256_file(path) != entry["sha256"]:
            raise DomainError(f"artifact {name} does not match its recorded checksum")


def evaluate_run(run_dir: str | Path) -> dict:
    """Re-score a finished run from its persisted model and datasets."""
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    verify_artifacts(run_dir, manifest)
    model = SensingModel.load(run_dir / "model.json")
    return {"train_rmse": rmse(model, Dataset.from_csv(run_dir / "train.csv")),
            "test_rmse": rmse(model, Dataset.from_csv(run_dir / "test.csv")),
            "manifest_test_rmse": manifest["test_rmse"]}


def infer(model_path: str | Path, p) -> np.ndarray:
    """Condition estimate from one received-power spectrum (dBm)."""
    return forward(SensingModel.load(model_path), np.asarray(p, dtype=float))


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class _Job:
    raw_json: str
    structure: tuple[float, ...]
    train_key: tuple[int, ...]
    train_channel: tuple[tuple[str, float], ...]
    tests: tuple[tuple[tuple[int, ...], tuple[tuple[str, float], ...]], ...]


def _run_job(job: _Job) -> list[float]:
    """Train once for ``job.structure`` and score it on every test channel."""
    cfg = _config_from_json(job.raw_json)
    cp_train = replace(cfg.channel, **dict(job.train_channel))
    model = fit(cfg, dataset(cfg, job.structure, cp_train, derive_seed(cfg.seed, *job.train_key))).model
    out = []
    for key, overrides in job.tests:
        cp = replace(cfg.channel, **dict(overrides))
        out.append(rmse(model, dataset(cfg, job.structure, cp, derive_seed(cfg.seed, *key))))
    return out


def sweep(cfg: RunConfig, axis: str, values: Sequence[float] | None = None,
          structures: StructureResult | None = None, retrain_per_point: bool | None = None) -> list[tuple]:
    """RMSE of the three structure cases across one channel axis.

    Returns rows ``(value, case, rmse)`` ordered by value, then case. With
    ``retrain_per_point`` a fresh model is trained at every sweep value;
    otherwise each structure is trained once at the nominal channel.
    Test data are always regenerated at the sweep value with a derived seed.
    """
    if axis not in AXES:
        raise ConfigError(f"sweep axis must be one of {sorted(AXES)}")
    _, field_name, axis_id = AXES[axis]
    if values is None:
        values = getattr(cfg.sweep, field_name)
    values = [float(v) for v in values]
    if not values:
        raise ConfigError(f"no {axis} values to sweep")
    retrain = cfg.sweep.retrain_per_point if retrain_per_point is None else retrain_per_point
    # fail fast on geometry/config errors before any training
    for v in values:
        replace(cfg.channel, **{field_name: v})
    st = structures if structures is not None else optimize_structure(cfg)

    members = {"d_star": [st.d_star], "d_star_grid": [st.d_grid], "grid_average": average_grid(cfg)}
    raw_json = _raw_json(cfg)
    tests = [((STREAM_TEST, axis_id, i), ((field_name, v),)) for i, v in enumerate(values)]

    jobs: list[_Job] = []
    owners: list[tuple[str, list[int]]] = []  # (case, sweep indices) per job
    for case in CASES:
        for d in members[case]:
            d = tuple(float(x) for x in d)
            if retrain:
                for i, t in enumerate(tests):
                    jobs.append(_Job(raw_json, d, (STREAM_TRAIN, axis_id, i), t[1], (t,)))
                    owners.append((case, [i]))
            else:
                jobs.append(_Job(raw_json, d, (STREAM_TRAIN,), (), tuple(tests)))
                owners.append((case, list(range(len(values)))))

    results = parallel_map(_run_job, jobs, cfg.workers)
    acc: dict[tuple[str, int], list[float]] = {}
    for (case, idx), scores in zip(owners, results):
        for i, s in zip(idx, scores):
            acc.setdefault((case, i), []).append(s)
    return [(v, case, math.fsum(acc[case, i]) / len(acc[case, i])) for i, v in enumerate(values) for case in CASES]


def sweep_power(cfg: RunConfig, values=None, **kw) -> list[tuple]:
    return sweep(cfg, "power", values, **kw)


def sweep_distance(cfg: RunConfig, values=None, **kw) -> list[tuple]:
    return sweep(cfg, "distance", values, **kw)


def write_sweep(rows: Iterable[tuple], axis: str, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([AXES[axis][0], "case", "rmse"])
        for v, case, r in rows:
            w.writerow([repr(v), case, repr(r)])


def gnuplot_script(axis: str, csv_name: str) -> str:
    col, _, _ = AXES[axis]
    xlabel = "transmit power P (W)" if axis == "power" else "distance D (m)"
    logx = "set logscale x\n" if axis == "power" else ""
    plots = ", \\\n     ".join(
        f"'{csv_name}' using 1:(strcol(2) eq '{c}' ? $3 : 1/0) with linespoints title '{c}'" for c in CASES)
    return (f"# {col} sweep; run with: gnuplot -p {Path(csv_name).stem}.gp\n"
            "set datafile separator ','\nset key autotitle columnhead\n"
            f"{logx}set xlabel '{xlabel}'\nset ylabel 'RMSE'\nplot {plots}\n")


def run_sweep(cfg: RunConfig, axis: str, out_dir: str | Path | None = None, retrain_per_point: bool | None = None,
              plot: bool = True) -> dict:
    """Sweep one axis and persist ``sweep_<axis>.csv`` (plus a gnuplot script and a manifest)."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    with stage("optimize"):
        st = optimize_structure(cfg)
    with stage(f"sweep-{axis}"):
        rows = sweep(cfg, axis, structures=st, retrain_per_point=retrain_per_point)
    name = f"sweep_{axis}"
    write_sweep(rows, axis, out / f"{name}.csv")
    files = [f"{name}.csv"]
    if plot:
        (out / f"{name}.gp").write_text(gnuplot_script(axis, f"{name}.csv"))
        files.append(f"{name}.gp")
    retrain = cfg.sweep.retrain_per_point if retrain_per_point is None else retrain_per_point
    manifest = {
        "tool": "metaiot", "version": __version__, "config_hash": cfg.config_hash, "seed": cfg.seed,
        "mode": cfg.mode, "axis": axis, "retrain_per_point": retrain, **st.to_json(),
        "artifacts": {f: {"path": f, "sha256": sha256_file(out / f)} for f in files},
        "timestamps": {"started": started, "finished": _now()},
    }
    write_manifest(manifest, out / f"{name}_manifest.json")
    return manifest
