"""Run configuration: one YAML file with unit-suffixed keys.

:func:`load_config` validates the document, builds the typed parameter
objects, and keeps the merged raw mapping so that runs can be hashed and
the exact configuration written next to their artifacts.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .channel import ChannelParams, FrequencyGrid
from .circuit import MaterialModel, SensorCircuitParams, UnitCircuitParams, load_correction_table
from .discernibility import MODES, ConditionGrid
from .errors import ConfigError, MetaIoTError
from .sensefn import TrainConfig
from .structopt import DesignSpace, SurrogateConfig

DEFAULT_CONFIG = "toy.yaml"

# keys that change where or how fast a run executes, never what it computes
_UNHASHED = ("output_dir", "workers")


@dataclass(frozen=True)
class SweepSpec:
    power_w: tuple[float, ...] = ()
    distance_m: tuple[float, ...] = ()
    grid_average_cap: int = 20
    retrain_per_point: bool = False


@dataclass(frozen=True)
class RunConfig:
    circuit: SensorCircuitParams
    channel: ChannelParams
    frequency: FrequencyGrid
    conditions: ConditionGrid
    design: DesignSpace
    surrogate: SurrogateConfig
    training: TrainConfig
    n_meas: int
    sweep: SweepSpec
    seed: int
    mode: str
    output_dir: Path
    workers: int = 1
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    def with_overrides(self, **kw) -> "RunConfig":
        """Re-validate with top-level or ``section.key`` overrides; ``None`` values are ignored."""
        raw = copy.deepcopy(self.raw)
        for key, value in kw.items():
            if value is None:
                continue
            *path, leaf = key.split(".")
            node = raw
            for p in path:
                node = node.setdefault(p, {})
            node[leaf] = value
        return build_config(raw)

    def to_yaml(self) -> str:
        """The configuration minus run-location keys, so identical runs persist identical files."""
        return yaml.safe_dump({k: v for k, v in self.raw.items() if k not in _UNHASHED}, sort_keys=True)


def config_hash(raw: dict) -> str:
    doc = {k: v for k, v in raw.items() if k not in _UNHASHED}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def default_config_text() -> str:
    return resources.files("metaiot").joinpath("data", DEFAULT_CONFIG).read_text()


def load_config(path: str | Path | None = None) -> RunConfig:
    """Read ``path`` (the packaged toy configuration when ``None``)."""
    if path is None:
        text, base = default_config_text(), Path.cwd()
    else:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        base = path.resolve().parent
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    table = raw.get("circuit", {}).get("correction_table") if isinstance(raw.get("circuit"), dict) else None
    if table is not None:
        raw["circuit"]["correction_table"] = str((base / table).resolve())
    return build_config(raw)


def _section(raw: dict, name: str, allowed: set[str], required: set[str] = frozenset()) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    missing = required - set(sec)
    if missing:
        raise ConfigError(f"missing keys in '{name}': {sorted(missing)}")
    return sec


def _material(doc: dict) -> MaterialModel:
    allowed = {"kind", "sigma_ref_s_per_m", "c_ref", "coeff", "index", "c_range", "cross", "table_c",
               "table_sigma_s_per_m"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown material keys: {sorted(unknown)}")
    return MaterialModel(
        kind=doc.get("kind", ""),
        sigma_ref=float(doc.get("sigma_ref_s_per_m", 1.0)),
        c_ref=float(doc.get("c_ref", 0.0)),
        coeff=float(doc.get("coeff", 0.0)),
        index=int(doc.get("index", 0)),
        c_range=tuple(float(x) for x in doc.get("c_range", (-np.inf, np.inf))),
        cross=tuple((int(a), float(b), float(c)) for a, b, c in doc.get("cross", ())),
        table_c=tuple(float(x) for x in doc.get("table_c", ())),
        table_sigma=tuple(float(x) for x in doc.get("table_sigma_s_per_m", ())),
    )


def _axis(spec) -> np.ndarray:
    if isinstance(spec, dict):
        lo, hi, step = (float(spec[k]) for k in ("lower", "upper", "step"))
        if not step > 0 or hi < lo:
            raise ConfigError(f"bad condition axis {spec}")
        n = int(round((hi - lo) / step)) + 1
        return lo + step * np.arange(n)
    return np.asarray(spec, dtype=float)


def build_config(raw: dict) -> RunConfig:
    """Typed configuration from a raw mapping; every inconsistency is a :class:`ConfigError`."""
    raw = copy.deepcopy(raw)
    top = {"seed", "mode", "circuit", "channel", "frequency", "conditions", "design", "surrogate", "training",
           "sweep", "output_dir", "workers"}
    unknown = set(raw) - top
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    try:
        return _build(raw)
    except ConfigError:
        raise
    except MetaIoTError as exc:
        raise ConfigError(str(exc)) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed config: {exc!r}") from None


def _build(raw: dict) -> RunConfig:
    circ = _section(raw, "circuit", {"topology", "c_cp_f", "z0_ohm", "correction_table", "units"},
                    {"c_cp_f", "units"})
    units = []
    for u in circ["units"]:
        extra = set(u) - {"name", "l_para_h", "c_para_f", "c_gap_unit_f_mm", "w_srr_mm", "h_srr_mm", "material"}
        if extra:
            raise ConfigError(f"unknown unit keys: {sorted(extra)}")
        units.append(UnitCircuitParams(float(u["l_para_h"]), float(u["c_para_f"]), float(u["c_gap_unit_f_mm"]),
                                       float(u["w_srr_mm"]), float(u["h_srr_mm"]), _material(u["material"])))
    table_path = circ.get("correction_table")
    if table_path is not None and not Path(table_path).is_file():
        raise ConfigError(f"correction table {table_path} does not exist")
    circuit = SensorCircuitParams(tuple(units), float(circ["c_cp_f"]), float(circ.get("z0_ohm", 377.0)),
                                  load_correction_table(table_path), circ.get("topology", "parallel"))
    n_t = circuit.n_units

    ch = _section(raw, "channel", {"power_w", "distance_m", "alpha", "wall_reflection", "wall_table", "bias_w",
                                   "noise_db", "speed_m_per_s", "s0_m2", "d0_m", "n_x", "n_y", "side_m"},
                  {"power_w", "distance_m"})
    ch = dict(ch)
    ch["wall_table"] = tuple((float(f), float(r)) for f, r in ch.get("wall_table", ()))
    channel = ChannelParams(n_units=n_t, **ch)

    fr = _section(raw, "frequency", {"f_lb_hz", "f_ub_hz", "n_points"}, {"f_lb_hz", "f_ub_hz", "n_points"})
    frequency = FrequencyGrid(float(fr["f_lb_hz"]), float(fr["f_ub_hz"]), int(fr["n_points"]))

    co = _section(raw, "conditions", {"names", "units", "axes", "points"})
    if ("axes" in co) == ("points" in co):
        raise ConfigError("conditions need exactly one of 'axes' or 'points'")
    names, cunits = tuple(co.get("names", ())), tuple(co.get("units", ()))
    if "axes" in co:
        grid = ConditionGrid.regular([_axis(a) for a in co["axes"]], names, cunits)
    else:
        grid = ConditionGrid(np.asarray(co["points"], dtype=float), names, cunits)
    if grid.n_targets != n_t:
        raise ConfigError(f"conditions have {grid.n_targets} dimensions but the circuit has {n_t} units")
    for label, seq in (("names", grid.names), ("units", grid.units)):
        if len(seq) != n_t:
            raise ConfigError(f"conditions.{label} needs {n_t} entries")
    for u in units:
        m = u.material
        if m.index >= n_t:
            raise ConfigError(f"material index {m.index} exceeds the {n_t} condition dimensions")
        col = grid.points[:, m.index]
        if col.min() < m.c_range[0] or col.max() > m.c_range[1]:
            raise ConfigError(f"condition grid leaves the material range {m.c_range} on dimension {m.index}")

    de = _section(raw, "design", {"lower_mm", "upper_mm", "eps_mm", "integer_step_mm"}, {"lower_mm", "upper_mm"})
    design = DesignSpace(tuple(de["lower_mm"]), tuple(de["upper_mm"]), float(de.get("eps_mm", 0.05)),
                         float(de.get("integer_step_mm", 1.0)))
    if design.dim != n_t:
        raise ConfigError(f"design space has {design.dim} dimensions but the circuit has {n_t} units")

    su = _section(raw, "surrogate", {"budget", "initial_points", "kernel", "n_candidates", "radius_init",
                                     "radius_min", "fail_tolerance", "success_tolerance", "weights", "seed_grid",
                                     "ridge"})
    su = dict(su)
    if "weights" in su:
        su["weights"] = tuple(float(w) for w in su["weights"])
    surrogate = SurrogateConfig(**su)
    surrogate.validate(design.dim)
    if surrogate.seed_grid and len(design.integer_grid()) + surrogate.n_initial(design.dim) > surrogate.budget:
        raise ConfigError("surrogate budget is smaller than the seeded initial design")

    tr = dict(_section(raw, "training", {"n_meas", "hidden", "epochs", "learning_rate", "activation", "batch_size",
                                         "validation_fraction", "loss", "whiten"}))
    n_meas = int(tr.pop("n_meas", 10))
    if n_meas < 1:
        raise ConfigError("training.n_meas must be >= 1")
    training = TrainConfig(**tr)

    sw = _section(raw, "sweep", {"power_w", "distance_m", "grid_average_cap", "retrain_per_point"})
    sweep = SweepSpec(tuple(float(x) for x in sw.get("power_w", ())), tuple(float(x) for x in sw.get("distance_m", ())),
                      int(sw.get("grid_average_cap", 20)), bool(sw.get("retrain_per_point", False)))
    if sweep.grid_average_cap < 1:
        raise ConfigError("sweep.grid_average_cap must be >= 1")

    mode = raw.get("mode", "paper")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    seed = int(raw.get("seed", 0))
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    workers = int(raw.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    return RunConfig(circuit, channel, frequency, grid, design, surrogate, training, n_meas, sweep, seed, mode,
                     Path(raw.get("output_dir", "run")), workers, raw)


def as_plain(value: Any) -> Any:
    """JSON-friendly copy of numpy scalars and arrays."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {k: as_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [as_plain(v) for v in value]
    return value
