"""Configuration, CSV file formats and subcommand orchestration.

One YAML config file drives every run. Parsing is strict: unknown keys
are rejected and every error names the offending key path, because a
silently ignored tolerance is the worst failure mode a numerical tool
can have. All artifacts are plain CSV (17 significant digits, exact
float round trip) plus a JSON manifest carrying the seed, the config
hash and the package version, which together reproduce any run
bit-identically. File writes go through a temp-file rename so partial
artifacts never appear.

Subcommands::

    jise simulate --config cfg.yaml --out dir [--seed N]
    jise estimate --config cfg.yaml --out dir [--estimator uf|us|akf]
    jise tune     --config cfg.yaml --out dir [--estimator uf|us|akf]
    jise compare  --config cfg.yaml --out dir

``simulate`` writes truth + measurement channel files; the other
commands read them back from the same directory.
"""

import argparse
import hashlib
import json
import os
import re
import sys
import tempfile
from dataclasses import asdict, dataclass

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, InvalidParameterError
from .evaluate import compare_report
from .model import SensorLayout, assemble_system, build_shear_frame
from .pipeline import run_akf, run_tuned, run_uf, run_us
from .sim import (
    MeasurementSet,
    add_measurement_noise,
    clean_outputs,
    generate_ground_motion,
    generate_impulse_train,
    load_ground_motion_csv,
    simulate_truth,
)
from .tuner import build_candidate_grid

_CHANNEL_RE = re.compile(r"^(ag|[dvap][1-9][0-9]*)$")
_SENSOR_KINDS = {"d": "displacement", "v": "velocity", "a": "acceleration"}
_COMPARE_CHOICES = ("uf", "us", "akf", "uf_tuned", "us_tuned", "akf_tuned")


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    masses: tuple
    stiffnesses: tuple
    damping_ratios: tuple
    rayleigh: tuple
    n_r: int
    dt: float
    input_kind: str      # 'ground' | 'points'
    input_floors: tuple  # 1-based floors for point forces


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    duration: float
    seed: int
    gm_file: str
    band_hz: tuple
    rms: float
    schedule: tuple      # of (floor, start, count, interval)
    pulse_width: float
    pulse_peak: float
    noise_snr: float
    noise_std: tuple


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str
    n_window: int
    p0: float
    pinv_tol: float
    q: float
    qp: float
    r_floor: float


@dataclass(frozen=True)
class TunerConfig:
    q_min: float
    q_max: float
    spacing: float
    window: int
    qp_min: float
    qp_max: float


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    scenario: ScenarioConfig
    channels: tuple
    estimator: EstimatorConfig
    tuner: TunerConfig
    eval_skip: float
    compare_estimators: tuple


def _expect_mapping(node, path):
    if not isinstance(node, dict):
        raise ConfigError(path, f"expected a mapping, got {type(node).__name__}")
    return node


def _reject_unknown(node: dict, allowed, path):
    for key in node:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown key")


def _number(node, key, path, default=None, required=False, minimum=None, strict_min=None):
    if key not in node or node[key] is None:
        if required:
            raise ConfigError(f"{path}.{key}", "required key missing")
        return default
    value = node[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {value!r}")
    value = float(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}.{key}", f"must be >= {minimum}")
    if strict_min is not None and value <= strict_min:
        raise ConfigError(f"{path}.{key}", f"must be > {strict_min}")
    return value


def _integer(node, key, path, default=None, required=False, minimum=None):
    if key not in node or node[key] is None:
        if required:
            raise ConfigError(f"{path}.{key}", "required key missing")
        return default
    value = node[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}.{key}", f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}.{key}", f"must be >= {minimum}")
    return int(value)


def _number_list(node, key, path, required=False, strict_min=None, minimum=None):
    if key not in node or node[key] is None:
        if required:
            raise ConfigError(f"{path}.{key}", "required key missing")
        return None
    raw = node[key]
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{path}.{key}", "expected a non-empty list of numbers")
    out = []
    for i, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{path}.{key}[{i}]", f"expected a number, got {v!r}")
        v = float(v)
        if strict_min is not None and v <= strict_min:
            raise ConfigError(f"{path}.{key}[{i}]", f"must be > {strict_min}")
        if minimum is not None and v < minimum:
            raise ConfigError(f"{path}.{key}[{i}]", f"must be >= {minimum}")
        out.append(v)
    return tuple(out)


def _parse_model(node, path="model") -> ModelConfig:
    node = _expect_mapping(node, path)
    _reject_unknown(
        node,
        {"masses", "stiffnesses", "damping_ratios", "rayleigh", "n_r", "dt", "input"},
        path,
    )
    masses = _number_list(node, "masses", path, required=True, strict_min=0.0)
    stiff = _number_list(node, "stiffnesses", path, required=True, strict_min=0.0)
    if len(masses) != len(stiff):
        raise ConfigError(f"{path}.stiffnesses", "length differs from masses")
    n_s = len(masses)

    ratios = _number_list(node, "damping_ratios", path, minimum=0.0)
    rayleigh = None
    if "rayleigh" in node and node["rayleigh"] is not None:
        sub = _expect_mapping(node["rayleigh"], f"{path}.rayleigh")
        _reject_unknown(sub, {"alpha", "beta"}, f"{path}.rayleigh")
        rayleigh = (
            _number(sub, "alpha", f"{path}.rayleigh", required=True),
            _number(sub, "beta", f"{path}.rayleigh", required=True),
        )
    if ratios is not None and rayleigh is not None:
        raise ConfigError(f"{path}.rayleigh", "exclusive with damping_ratios")
    if ratios is None and rayleigh is None:
        raise ConfigError(path, "need damping_ratios or rayleigh")
    if ratios is not None and len(ratios) != n_s:
        raise ConfigError(f"{path}.damping_ratios", f"need one ratio per mode ({n_s})")

    n_r = _integer(node, "n_r", path, default=n_s, minimum=1)
    if n_r > n_s:
        raise ConfigError(f"{path}.n_r", f"exceeds model order {n_s}")
    dt = _number(node, "dt", path, required=True, strict_min=0.0)

    if "input" not in node:
        raise ConfigError(f"{path}.input", "required key missing")
    raw_input = node["input"]
    if raw_input == "ground":
        input_kind, floors = "ground", ()
    elif isinstance(raw_input, dict):
        _reject_unknown(raw_input, {"floors"}, f"{path}.input")
        raw_floors = raw_input.get("floors")
        if not isinstance(raw_floors, list) or not raw_floors:
            raise ConfigError(f"{path}.input.floors", "expected a non-empty list")
        floors = []
        for i, f in enumerate(raw_floors):
            if isinstance(f, bool) or not isinstance(f, int) or not 1 <= f <= n_s:
                raise ConfigError(f"{path}.input.floors[{i}]", f"floor must be in 1..{n_s}")
            floors.append(f)
        if len(set(floors)) != len(floors):
            raise ConfigError(f"{path}.input.floors", "duplicate floors")
        input_kind, floors = "points", tuple(floors)
    else:
        raise ConfigError(f"{path}.input", "expected 'ground' or {floors: [...]}")

    return ModelConfig(
        masses=masses,
        stiffnesses=stiff,
        damping_ratios=ratios,
        rayleigh=rayleigh,
        n_r=n_r,
        dt=dt,
        input_kind=input_kind,
        input_floors=floors,
    )


def _parse_scenario(node, model: ModelConfig, path="scenario") -> ScenarioConfig:
    node = _expect_mapping(node, path)
    _reject_unknown(node, {"kind", "duration", "seed", "ground_motion", "impacts", "noise"}, path)
    kind = node.get("kind")
    if kind not in ("ground_motion", "multi_impact"):
        raise ConfigError(f"{path}.kind", "must be 'ground_motion' or 'multi_impact'")
    duration = _number(node, "duration", path, required=True, strict_min=0.0)
    seed = _integer(node, "seed", path, required=True, minimum=0)

    gm_file, band_hz, rms = None, (0.3, 8.0), 1.0
    schedule, pulse_width, pulse_peak = (), 0.05, 50.0
    if kind == "ground_motion":
        if model.input_kind != "ground":
            raise ConfigError("model.input", "ground_motion scenarios need input: ground")
        if "impacts" in node:
            raise ConfigError(f"{path}.impacts", "not allowed for ground_motion")
        sub = _expect_mapping(node.get("ground_motion", {}) or {}, f"{path}.ground_motion")
        _reject_unknown(sub, {"file", "band_hz", "rms"}, f"{path}.ground_motion")
        gm_file = sub.get("file")
        if gm_file is not None and not isinstance(gm_file, str):
            raise ConfigError(f"{path}.ground_motion.file", "expected a path string")
        band = _number_list(sub, "band_hz", f"{path}.ground_motion", strict_min=0.0)
        if band is not None:
            if len(band) != 2 or band[0] >= band[1]:
                raise ConfigError(f"{path}.ground_motion.band_hz", "expected [low, high]")
            band_hz = band
        rms = _number(sub, "rms", f"{path}.ground_motion", default=1.0, strict_min=0.0)
    else:
        if model.input_kind != "points":
            raise ConfigError("model.input", "multi_impact scenarios need input floors")
        if "ground_motion" in node:
            raise ConfigError(f"{path}.ground_motion", "not allowed for multi_impact")
        sub = _expect_mapping(node.get("impacts"), f"{path}.impacts")
        _reject_unknown(sub, {"schedule", "pulse_width", "pulse_peak"}, f"{path}.impacts")
        raw_sched = sub.get("schedule")
        if not isinstance(raw_sched, list) or not raw_sched:
            raise ConfigError(f"{path}.impacts.schedule", "expected a non-empty list")
        schedule = []
        seen_floors = []
        for i, entry in enumerate(raw_sched):
            epath = f"{path}.impacts.schedule[{i}]"
            entry = _expect_mapping(entry, epath)
            _reject_unknown(entry, {"floor", "start", "count", "interval"}, epath)
            floor = _integer(entry, "floor", epath, required=True, minimum=1)
            if floor > len(model.masses):
                raise ConfigError(f"{epath}.floor", f"exceeds {len(model.masses)} floors")
            if floor not in model.input_floors:
                raise ConfigError(f"{epath}.floor", "not in model.input.floors")
            schedule.append((
                floor,
                _number(entry, "start", epath, required=True, minimum=0.0),
                _integer(entry, "count", epath, required=True, minimum=1),
                _number(entry, "interval", epath, default=1.0, strict_min=0.0),
            ))
            if floor not in seen_floors:
                seen_floors.append(floor)
        if set(seen_floors) != set(model.input_floors):
            raise ConfigError(
                f"{path}.impacts.schedule", "schedule floors must cover model.input.floors"
            )
        schedule = tuple(schedule)
        pulse_width = _number(sub, "pulse_width", f"{path}.impacts", default=0.05, strict_min=0.0)
        pulse_peak = _number(sub, "pulse_peak", f"{path}.impacts", default=50.0, strict_min=0.0)

    noise = _expect_mapping(node.get("noise"), f"{path}.noise")
    _reject_unknown(noise, {"snr", "std"}, f"{path}.noise")
    snr = _number(noise, "snr", f"{path}.noise", strict_min=0.0)
    std = None
    if "std" in noise and noise["std"] is not None:
        raw_std = noise["std"]
        if isinstance(raw_std, list):
            std = _number_list(noise, "std", f"{path}.noise", minimum=0.0)
        else:
            std = (_number(noise, "std", f"{path}.noise", minimum=0.0),)
    if (snr is None) == (std is None):
        raise ConfigError(f"{path}.noise", "give exactly one of snr or std")

    return ScenarioConfig(
        kind=kind,
        duration=duration,
        seed=seed,
        gm_file=gm_file,
        band_hz=tuple(band_hz),
        rms=rms,
        schedule=schedule,
        pulse_width=pulse_width,
        pulse_peak=pulse_peak,
        noise_snr=snr,
        noise_std=std,
    )


def _parse_channels(node, n_s: int, path="sensors"):
    node = _expect_mapping(node, path)
    _reject_unknown(node, {"channels"}, path)
    raw = node.get("channels")
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{path}.channels", "expected a non-empty list")
    channels = []
    for i, name in enumerate(raw):
        cpath = f"{path}.channels[{i}]"
        if not isinstance(name, str) or not _CHANNEL_RE.match(name) or name == "ag":
            raise ConfigError(cpath, f"bad channel name {name!r}")
        kind, floor = name[0], int(name[1:])
        if kind not in _SENSOR_KINDS:
            raise ConfigError(cpath, f"sensor channels must be d/v/a, got {name!r}")
        if floor > n_s:
            raise ConfigError(cpath, f"floor {floor} exceeds {n_s}-storey model")
        if name in channels:
            raise ConfigError(cpath, f"duplicate channel {name!r}")
        channels.append(name)
    return tuple(channels)


def _parse_estimator(node, path="estimator") -> EstimatorConfig:
    node = _expect_mapping(node if node is not None else {}, path)
    _reject_unknown(node, {"kind", "n_window", "p0", "pinv_tol", "q", "qp", "r_floor"}, path)
    kind = node.get("kind", "uf")
    if kind not in ("uf", "us", "akf"):
        raise ConfigError(f"{path}.kind", "must be uf, us or akf")
    return EstimatorConfig(
        kind=kind,
        n_window=_integer(node, "n_window", path, default=20, minimum=0),
        p0=_number(node, "p0", path, default=1e-9, strict_min=0.0),
        pinv_tol=_number(node, "pinv_tol", path, default=1e-10, strict_min=0.0),
        q=_number(node, "q", path, minimum=0.0),
        qp=_number(node, "qp", path, minimum=0.0),
        r_floor=_number(node, "r_floor", path, default=1e-12, strict_min=0.0),
    )


def _parse_tuner(node, path="tuner") -> TunerConfig:
    node = _expect_mapping(node if node is not None else {}, path)
    _reject_unknown(node, {"q_min", "q_max", "spacing", "window", "qp_min", "qp_max"}, path)
    cfg = TunerConfig(
        q_min=_number(node, "q_min", path, default=1e-24, strict_min=0.0),
        q_max=_number(node, "q_max", path, default=1e3, strict_min=0.0),
        spacing=_number(node, "spacing", path, default=0.01, strict_min=0.0),
        window=_integer(node, "window", path, default=10, minimum=1),
        qp_min=_number(node, "qp_min", path, default=1e-18, strict_min=0.0),
        qp_max=_number(node, "qp_max", path, default=1e9, strict_min=0.0),
    )
    if cfg.q_min >= cfg.q_max:
        raise ConfigError(f"{path}.q_max", "must exceed q_min")
    if cfg.qp_min >= cfg.qp_max:
        raise ConfigError(f"{path}.qp_max", "must exceed qp_min")
    return cfg


def parse_config(path) -> RunConfig:
    """Load and strictly validate a run configuration file."""
    with open(path) as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(str(path), f"not valid YAML: {exc}") from exc
    return parse_config_dict(raw)


def parse_config_dict(raw) -> RunConfig:
    raw = _expect_mapping(raw, "config")
    _reject_unknown(
        raw, {"model", "scenario", "sensors", "estimator", "tuner", "eval", "compare"}, "config"
    )
    if "model" not in raw:
        raise ConfigError("config.model", "required section missing")
    if "scenario" not in raw:
        raise ConfigError("config.scenario", "required section missing")
    if "sensors" not in raw:
        raise ConfigError("config.sensors", "required section missing")
    model = _parse_model(raw["model"])
    scenario = _parse_scenario(raw["scenario"], model)
    channels = _parse_channels(raw["sensors"], len(model.masses))
    estimator = _parse_estimator(raw.get("estimator"))
    tuner = _parse_tuner(raw.get("tuner"))

    eval_node = _expect_mapping(raw.get("eval", {}) or {}, "eval")
    _reject_unknown(eval_node, {"skip"}, "eval")
    eval_skip = _number(eval_node, "skip", "eval", default=0.0, minimum=0.0)

    comp_node = _expect_mapping(raw.get("compare", {}) or {}, "compare")
    _reject_unknown(comp_node, {"estimators"}, "compare")
    comp_raw = comp_node.get("estimators", ["uf", "us"])
    if not isinstance(comp_raw, list) or not comp_raw:
        raise ConfigError("compare.estimators", "expected a non-empty list")
    for i, name in enumerate(comp_raw):
        if name not in _COMPARE_CHOICES:
            raise ConfigError(f"compare.estimators[{i}]", f"unknown estimator {name!r}")

    return RunConfig(
        model=model,
        scenario=scenario,
        channels=channels,
        estimator=estimator,
        tuner=tuner,
        eval_skip=eval_skip,
        compare_estimators=tuple(comp_raw),
    )


def normalize_config(cfg: RunConfig) -> str:
    """Canonical YAML form of a parsed config (defaults resolved).

    parse -> normalize is idempotent, and the sha256 of this text is the
    config hash recorded in run manifests.
    """
    model = {
        "masses": list(cfg.model.masses),
        "stiffnesses": list(cfg.model.stiffnesses),
        "n_r": cfg.model.n_r,
        "dt": cfg.model.dt,
        "input": "ground" if cfg.model.input_kind == "ground"
        else {"floors": list(cfg.model.input_floors)},
    }
    if cfg.model.damping_ratios is not None:
        model["damping_ratios"] = list(cfg.model.damping_ratios)
    else:
        model["rayleigh"] = {"alpha": cfg.model.rayleigh[0], "beta": cfg.model.rayleigh[1]}

    scenario = {
        "kind": cfg.scenario.kind,
        "duration": cfg.scenario.duration,
        "seed": cfg.scenario.seed,
    }
    if cfg.scenario.kind == "ground_motion":
        gm = {"band_hz": list(cfg.scenario.band_hz), "rms": cfg.scenario.rms}
        if cfg.scenario.gm_file is not None:
            gm["file"] = cfg.scenario.gm_file
        scenario["ground_motion"] = gm
    else:
        scenario["impacts"] = {
            "schedule": [
                {"floor": f, "start": s, "count": c, "interval": i}
                for f, s, c, i in cfg.scenario.schedule
            ],
            "pulse_width": cfg.scenario.pulse_width,
            "pulse_peak": cfg.scenario.pulse_peak,
        }
    if cfg.scenario.noise_snr is not None:
        scenario["noise"] = {"snr": cfg.scenario.noise_snr}
    else:
        std = list(cfg.scenario.noise_std)
        scenario["noise"] = {"std": std[0] if len(std) == 1 else std}

    est = {k: v for k, v in asdict(cfg.estimator).items() if v is not None}
    data = {
        "model": model,
        "scenario": scenario,
        "sensors": {"channels": list(cfg.channels)},
        "estimator": est,
        "tuner": asdict(cfg.tuner),
        "eval": {"skip": cfg.eval_skip},
        "compare": {"estimators": list(cfg.compare_estimators)},
    }
    return yaml.safe_dump(data, sort_keys=False)


# ---------------------------------------------------------------------------
# Channel files
# ---------------------------------------------------------------------------

def _atomic_write(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _format_csv(names, times, matrix) -> str:
    lines = [",".join(["t"] + list(names))]
    for i in range(times.size):
        cells = [f"{times[i]:.17g}"] + [f"{matrix[i, j]:.17g}" for j in range(matrix.shape[1])]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_channel_file(path, times, columns) -> None:
    """Write a time-indexed channel CSV (17 significant digits, atomic).

    ``columns`` maps channel names (grammar: d/v/a/p + 1-based floor, or
    'ag') to equal-length series; dict order fixes column order.
    """
    names = list(columns.keys())
    for name in names:
        if not _CHANNEL_RE.match(name):
            raise InvalidParameterError(f"bad channel column name {name!r}")
    times = np.asarray(times, dtype=float)
    matrix = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    if matrix.shape[0] != times.size:
        raise InvalidParameterError("column lengths differ from time vector")
    _atomic_write(path, _format_csv(names, times, matrix))


def read_channel_file(path):
    """Read a channel CSV back into (times, {name: series}).

    Validates the header grammar, name uniqueness, numeric cells and a
    strictly increasing uniform time grid (within 1e-9 of the step).
    """
    with open(path, newline="") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() != ""]
    if not lines:
        raise InvalidParameterError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[0] != "t":
        raise InvalidParameterError(f"{path}: first column must be 't'")
    names = header[1:]
    seen = set()
    for name in names:
        if not _CHANNEL_RE.match(name):
            raise InvalidParameterError(f"{path}: bad column name {name!r}")
        if name in seen:
            raise InvalidParameterError(f"{path}: duplicate column {name!r}")
        seen.add(name)

    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != len(header):
            raise InvalidParameterError(f"{path}: ragged row {ln!r}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise InvalidParameterError(f"{path}: non-numeric cell in {ln!r}") from exc
    data = np.array(rows, dtype=float) if rows else np.zeros((0, len(header)))
    times = data[:, 0] if rows else np.zeros(0)
    if times.size >= 2:
        steps = np.diff(times)
        dt = steps[0]
        if dt <= 0 or np.any(np.abs(steps - dt) > 1e-9 * dt):
            raise InvalidParameterError(f"{path}: time grid not uniform/increasing")
    columns = {name: data[:, j + 1] if rows else np.zeros(0) for j, name in enumerate(names)}
    return times, columns


# ---------------------------------------------------------------------------
# Run assembly
# ---------------------------------------------------------------------------

def _input_labels(cfg: RunConfig):
    if cfg.model.input_kind == "ground":
        return ["ag"]
    return [f"p{f}" for f in cfg.model.input_floors]


def _build_scenario(cfg: RunConfig, seed: int):
    sc = cfg.scenario
    if sc.kind == "ground_motion":
        if sc.gm_file is not None:
            return load_ground_motion_csv(sc.gm_file, cfg.model.dt, sc.duration)
        return generate_ground_motion(
            sc.duration, cfg.model.dt, seed=seed, band_hz=sc.band_hz, rms=sc.rms
        )
    schedule = [(f - 1, start, count, interval) for f, start, count, interval in sc.schedule]
    scenario = generate_impulse_train(
        schedule, pulse_width=sc.pulse_width, pulse_peak=sc.pulse_peak,
        dt=cfg.model.dt, duration=sc.duration,
    )
    # reorder columns to the model's input order
    want = tuple(f - 1 for f in cfg.model.input_floors)
    if scenario.input_dofs != want:
        perm = [scenario.input_dofs.index(d) for d in want]
        scenario = type(scenario)(
            scenario.kind, scenario.input_series[:, perm], scenario.dt,
            scenario.duration, input_dofs=want,
        )
    return scenario


def _build_structure(cfg: RunConfig):
    inputs = "ground" if cfg.model.input_kind == "ground" else [
        f - 1 for f in cfg.model.input_floors
    ]
    return build_shear_frame(
        cfg.model.masses,
        cfg.model.stiffnesses,
        damping_ratios=cfg.model.damping_ratios,
        rayleigh=cfg.model.rayleigh,
        inputs=inputs,
    )


def _layout(cfg: RunConfig) -> SensorLayout:
    return SensorLayout(tuple((_SENSOR_KINDS[c[0]], int(c[1:]) - 1) for c in cfg.channels))


def _estimator_system(cfg: RunConfig, noise_std, q_value):
    structure = _build_structure(cfg)
    r_diag = np.maximum(np.asarray(noise_std, dtype=float) ** 2, cfg.estimator.r_floor)
    return assemble_system(
        structure,
        _layout(cfg),
        n_r=cfg.model.n_r,
        dt=cfg.model.dt,
        process_noise=0.0 if q_value is None else q_value,
        measurement_noise=np.diag(r_diag),
    )


def _write_manifest(out_dir, command, cfg, seed, noise_std, outputs):
    manifest = {
        "command": command,
        "config_sha256": hashlib.sha256(normalize_config(cfg).encode()).hexdigest(),
        "seed": seed,
        "noise_std": [float(s) for s in noise_std],
        "outputs": sorted(outputs),
        "version": __version__,
    }
    _atomic_write(
        os.path.join(out_dir, "manifest.json"),
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
    )


def _read_manifest(out_dir):
    path = os.path.join(out_dir, "manifest.json")
    if not os.path.exists(path):
        raise InvalidParameterError(f"{path} missing; run 'simulate' into this directory first")
    with open(path) as fh:
        return json.load(fh)


def _load_measurements(cfg, out_dir):
    manifest = _read_manifest(out_dir)
    times, columns = read_channel_file(os.path.join(out_dir, "measurements.csv"))
    try:
        values = np.column_stack([columns[name] for name in cfg.channels])
    except KeyError as exc:
        raise InvalidParameterError(f"measurements.csv lacks channel {exc}") from exc
    noise_std = np.asarray(manifest["noise_std"], dtype=float)
    seed = int(manifest["seed"])
    return MeasurementSet(times, values, noise_std, seed)


def _load_truth(cfg, out_dir):
    times, columns = read_channel_file(os.path.join(out_dir, "truth.csv"))
    n_s = len(cfg.model.masses)
    labels = _input_labels(cfg)

    class _TruthView:
        pass

    view = _TruthView()
    view.times = times
    view.physical_disp = np.column_stack([columns[f"d{i+1}"] for i in range(n_s)])
    view.physical_vel = np.column_stack([columns[f"v{i+1}"] for i in range(n_s)])
    view.physical_acc = np.column_stack([columns[f"a{i+1}"] for i in range(n_s)])
    view.inputs = np.column_stack([columns[lbl] for lbl in labels])
    return view


def _write_trace(path, trace, labels, n_s):
    matrix = [trace.input_estimates[:, j] for j in range(len(labels))]
    names = list(labels)
    for i in range(n_s):
        names.append(f"d{i+1}")
        matrix.append(trace.physical_disp[:, i])
    for i in range(n_s):
        names.append(f"v{i+1}")
        matrix.append(trace.physical_vel[:, i])
    for i in range(n_s):
        names.append(f"a{i+1}")
        matrix.append(trace.physical_acc[:, i])
    for j, lbl in enumerate(labels):
        names.append(f"var_{lbl}")
        matrix.append(trace.input_variances[:, j])
    names.append("trP")
    matrix.append(trace.state_cov_trace)
    if trace.selected_q is not None:
        names.append("q_sel")
        matrix.append(np.asarray(trace.selected_q, dtype=float))
    _atomic_write(path, _format_csv(names, trace.times, np.column_stack(matrix)))


def _write_selections(path, records):
    lines = ["step,selected_q,selected_error"]
    two_axis = records and len(records[0].selected_q) == 2
    if two_axis:
        lines = ["step,selected_qx,selected_qp,selected_error"]
    for rec in records:
        qs = ",".join(f"{v:.17g}" for v in rec.selected_q)
        lines.append(f"{rec.step_index},{qs},{rec.selected_error:.17g}")
    _atomic_write(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_simulate(cfg: RunConfig, out_dir, seed):
    seed = cfg.scenario.seed if seed is None else int(seed)
    scenario = _build_scenario(cfg, seed)
    structure = _build_structure(cfg)
    n_s = structure.n_dof
    truth_system = assemble_system(
        structure, _layout(cfg), n_r=n_s, dt=cfg.model.dt,
        process_noise=0.0, measurement_noise=1.0,
    )
    truth = simulate_truth(truth_system, scenario)
    clean = clean_outputs(truth_system, truth)
    sc = cfg.scenario
    # the motion generator consumes `seed` itself; derive an independent
    # stream for the measurement noise
    noise_seed = int(np.random.SeedSequence(seed).generate_state(1)[0])
    measurements = add_measurement_noise(
        clean,
        seed=noise_seed,
        snr=sc.noise_snr,
        std=sc.noise_std,
        times=truth.times,
    )

    labels = _input_labels(cfg)
    truth_cols = {}
    for i in range(n_s):
        truth_cols[f"d{i+1}"] = truth.physical_disp[:, i]
    for i in range(n_s):
        truth_cols[f"v{i+1}"] = truth.physical_vel[:, i]
    for i in range(n_s):
        truth_cols[f"a{i+1}"] = truth.physical_acc[:, i]
    for j, lbl in enumerate(labels):
        truth_cols[lbl] = truth.inputs[:, j]
    write_channel_file(os.path.join(out_dir, "truth.csv"), truth.times, truth_cols)

    meas_cols = {name: measurements.values[:, j] for j, name in enumerate(cfg.channels)}
    write_channel_file(os.path.join(out_dir, "measurements.csv"), truth.times, meas_cols)
    _write_manifest(
        out_dir, "simulate", cfg, seed, measurements.noise_std,
        ["truth.csv", "measurements.csv", "config_normalized.yaml"],
    )
    return 0


def _run_single(cfg, system, measurements, kind):
    est = cfg.estimator
    if kind == "uf":
        return run_uf(system, measurements, p0=est.p0, pinv_tol=est.pinv_tol)
    if kind == "us":
        return run_us(system, measurements, window=est.n_window, p0=est.p0,
                      pinv_tol=est.pinv_tol)
    if est.q is None or est.qp is None:
        raise ConfigError("estimator.qp", "akf runs need both q and qp")
    return run_akf(system, measurements, q_state=est.q, q_input=est.qp, p0=est.p0)


def _run_tuned(cfg, system, measurements, kind):
    tun = cfg.tuner
    grid = build_candidate_grid(tun.q_min, tun.q_max, tun.spacing)
    input_grid = None
    if kind == "akf":
        input_grid = build_candidate_grid(tun.qp_min, tun.qp_max, tun.spacing)
    return run_tuned(
        system, measurements, grid,
        error_window=tun.window,
        kind=kind,
        smoothing_window=cfg.estimator.n_window if kind == "us" else None,
        input_grid=input_grid,
        p0=cfg.estimator.p0,
        pinv_tol=cfg.estimator.pinv_tol,
    )


def _cmd_estimate(cfg: RunConfig, out_dir, estimator=None):
    kind = estimator or cfg.estimator.kind
    if kind != "akf" and cfg.estimator.q is None:
        raise ConfigError("estimator.q", "estimate needs a fixed process-noise value")
    measurements = _load_measurements(cfg, out_dir)
    system = _estimator_system(cfg, measurements.noise_std, cfg.estimator.q)
    trace = _run_single(cfg, system, measurements, kind)
    name = f"estimate_{kind}.csv"
    _write_trace(os.path.join(out_dir, name), trace, _input_labels(cfg),
                 len(cfg.model.masses))
    _write_manifest(out_dir, f"estimate:{kind}", cfg, measurements.seed,
                    measurements.noise_std, [name, "config_normalized.yaml"])
    return 0


def _cmd_tune(cfg: RunConfig, out_dir, estimator=None):
    kind = estimator or cfg.estimator.kind
    measurements = _load_measurements(cfg, out_dir)
    system = _estimator_system(cfg, measurements.noise_std, None)
    trace, records = _run_tuned(cfg, system, measurements, kind)
    trace_name = f"estimate_{kind}_tuned.csv"
    sel_name = f"selections_{kind}.csv"
    _write_trace(os.path.join(out_dir, trace_name), trace, _input_labels(cfg),
                 len(cfg.model.masses))
    _write_selections(os.path.join(out_dir, sel_name), records)
    _write_manifest(out_dir, f"tune:{kind}", cfg, measurements.seed,
                    measurements.noise_std, [trace_name, sel_name, "config_normalized.yaml"])
    return 0


def _cmd_compare(cfg: RunConfig, out_dir):
    measurements = _load_measurements(cfg, out_dir)
    truth = _load_truth(cfg, out_dir)
    traces = {}
    for name in cfg.compare_estimators:
        kind = name.replace("_tuned", "")
        if name.endswith("_tuned"):
            system = _estimator_system(cfg, measurements.noise_std, None)
            trace, _ = _run_tuned(cfg, system, measurements, kind)
        else:
            q = cfg.estimator.q
            if kind != "akf" and q is None:
                raise ConfigError("estimator.q", f"compare entry {name!r} needs a fixed q")
            system = _estimator_system(cfg, measurements.noise_std, q)
            trace = _run_single(cfg, system, measurements, kind)
        traces[name] = trace
    n_s = len(cfg.model.masses)
    report = compare_report(
        traces, truth, skip=cfg.eval_skip,
        input_labels=_input_labels(cfg),
        dof_labels=[str(i + 1) for i in range(n_s)],
    )
    _atomic_write(os.path.join(out_dir, "report.csv"), report.to_csv())
    _atomic_write(os.path.join(out_dir, "report.txt"), report.to_text())
    _write_manifest(out_dir, "compare", cfg, measurements.seed, measurements.noise_std,
                    ["report.csv", "report.txt", "config_normalized.yaml"])
    return 0


def run_subcommand(name, config_path, out_dir, seed=None, estimator=None) -> int:
    """Execute one subcommand; returns the process exit status."""
    cfg = parse_config(config_path)
    os.makedirs(out_dir, exist_ok=True)
    _atomic_write(os.path.join(out_dir, "config_normalized.yaml"), normalize_config(cfg))
    if name == "simulate":
        return _cmd_simulate(cfg, out_dir, seed)
    if name == "estimate":
        return _cmd_estimate(cfg, out_dir, estimator)
    if name == "tune":
        return _cmd_tune(cfg, out_dir, estimator)
    if name == "compare":
        return _cmd_compare(cfg, out_dir)
    raise InvalidParameterError(f"unknown subcommand {name!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="jise",
        description="Joint input-state estimation runs on synthetic shear-frame data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "estimate", "tune", "compare"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration (YAML)")
        p.add_argument("--out", required=True, help="artifact directory")
        if name == "simulate":
            p.add_argument("--seed", type=int, default=None,
                           help="override scenario.seed")
        if name in ("estimate", "tune"):
            p.add_argument("--estimator", choices=("uf", "us", "akf"), default=None,
                           help="override estimator.kind")
    args = parser.parse_args(argv)
    try:
        return run_subcommand(
            args.command,
            args.config,
            args.out,
            seed=getattr(args, "seed", None),
            estimator=getattr(args, "estimator", None),
        )
    except (ConfigError, InvalidParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
