"""Run configuration files: a YAML tree describing plant, design and study.

A file has sections `plant`, `design`, `scenario` and `controllers`, plus
optional `tuning` and `output` sections.  Loading validates every field
and produces ready-to-use toolkit objects; saving regenerates the tree
from those objects, so a loaded config round-trips losslessly.
"""

from __future__ import annotations

from dataclasses import dataclass

import yaml

from .errors import ConfigError, RatioPidError
from .fopdt_model import ContinuousPlant
from .simulator import (
    BlendStation,
    DesignSpec,
    Disturbance,
    ParallelRatioPid,
    PredictivePid,
    Scenario,
    SetpointVariation,
    StepProfile,
)
from .tuning import TuningContext

_CONTROLLER_KINDS = ("predictive", "setpoint-variation", "parallel", "blend")

# Keys accepted in the optional `tuning` section, forwarded to TuningContext.
_TUNING_KEYS = (
    "horizon", "epsilon0", "overshoot_fraction", "integral_overshoot_fraction",
    "settle_fraction", "ratio_band_fraction", "beta_grid", "gamma_grid",
    "fallback_p_ratio", "fallback_i_ratio",
)


@dataclass(frozen=True)
class RunConfig:
    """One study as typed objects: plant, base design, scenario, controllers.

    `scenario.plant_design` holds the nominal plant and `plant_true` its
    mismatched copy; `controllers` are instantiated simulator specs whose
    designs already merge any per-entry overrides over `design`.
    """

    plant: ContinuousPlant
    design: DesignSpec
    scenario: Scenario
    controllers: tuple
    tuning: dict
    output_dir: str | None = None


def _require_mapping(node, where: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(node).__name__}")
    return node


def _reject_unknown(node: dict, allowed, where: str):
    extra = sorted(set(node) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")


def _get(node: dict, key: str, where: str):
    if key not in node:
        raise ConfigError(f"{where}: missing key '{key}'")
    return node[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return value


def _pair(value, where: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{where}: expected a pair of numbers")
    return (_number(value[0], where), _number(value[1], where))


def _matrix(value, where: str):
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or any(not isinstance(row, (list, tuple)) or len(row) != 2 for row in value)):
        raise ConfigError(f"{where}: expected a 2x2 matrix as two rows of two numbers")
    return [[_number(v, where) for v in row] for row in value]


def _parse_plant(node, where: str = "plant") -> ContinuousPlant:
    node = _require_mapping(node, where)
    _reject_unknown(node, ("gain", "tau", "dead_time", "sample_time"), where)
    try:
        return ContinuousPlant(
            gain=_matrix(_get(node, "gain", where), f"{where}.gain"),
            tau=_matrix(_get(node, "tau", where), f"{where}.tau"),
            dead_time=_pair(_get(node, "dead_time", where), f"{where}.dead_time"),
            sample_time=_number(_get(node, "sample_time", where), f"{where}.sample_time"),
        )
    except RatioPidError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_design(node, where: str, base: DesignSpec | None = None) -> DesignSpec:
    node = _require_mapping(node, where)
    allowed = ("horizon", "q1_diag", "epsilon", "beta", "gamma")
    _reject_unknown(node, allowed, where)
    merged = {
        "horizon": base.horizon if base else DesignSpec.horizon,
        "q1_diag": base.q1_diag if base else DesignSpec.q1_diag,
        "epsilon": base.epsilon if base else DesignSpec.epsilon,
        "beta": base.beta if base else DesignSpec.beta,
        "gamma": base.gamma if base else DesignSpec.gamma,
    }
    if "horizon" in node:
        merged["horizon"] = _integer(node["horizon"], f"{where}.horizon")
    if "q1_diag" in node:
        raw = node["q1_diag"]
        if not isinstance(raw, (list, tuple)) or len(raw) != 6:
            raise ConfigError(f"{where}.q1_diag: expected six numbers")
        merged["q1_diag"] = tuple(_number(v, f"{where}.q1_diag") for v in raw)
    for key in ("epsilon", "beta", "gamma"):
        if key in node:
            merged[key] = _number(node[key], f"{where}.{key}")
    if merged["horizon"] < 1:
        raise ConfigError(f"{where}.horizon: must be at least 1")
    if any(v < 0 for v in merged["q1_diag"]):
        raise ConfigError(f"{where}.q1_diag: weights must be nonnegative")
    if merged["epsilon"] <= 0:
        raise ConfigError(f"{where}.epsilon: control move weight must be positive")
    if merged["beta"] < 0 or merged["gamma"] < 0:
        raise ConfigError(f"{where}: beta and gamma must be nonnegative")
    return DesignSpec(**merged)


def _parse_profile(node, where: str) -> StepProfile:
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        return StepProfile.constant(float(node))
    if not isinstance(node, (list, tuple)) or not node:
        raise ConfigError(f"{where}: expected a number or a list of [time, value] pairs")
    try:
        return StepProfile(tuple(_pair(bp, where) for bp in node))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_disturbance(node, where: str) -> Disturbance:
    node = _require_mapping(node, where)
    _reject_unknown(node, ("onset", "magnitude", "injection", "gains"), where)
    kwargs = {
        "onset": _number(_get(node, "onset", where), f"{where}.onset"),
        "magnitude": _number(_get(node, "magnitude", where), f"{where}.magnitude"),
    }
    if "injection" in node:
        kwargs["injection"] = node["injection"]
    if "gains" in node:
        kwargs["gains"] = _pair(node["gains"], f"{where}.gains")
    try:
        return Disturbance(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _parse_scenario(node, plant: ContinuousPlant, where: str = "scenario") -> Scenario:
    node = _require_mapping(node, where)
    allowed = ("alpha", "duration", "ambient", "r1", "r2", "input_bounds",
               "mismatch", "disturbance")
    _reject_unknown(node, allowed, where)
    alpha = _number(_get(node, "alpha", where), f"{where}.alpha")
    if alpha <= 0:
        raise ConfigError(f"{where}.alpha: ratio target must be positive")
    duration = _number(_get(node, "duration", where), f"{where}.duration")
    if duration <= 0:
        raise ConfigError(f"{where}.duration: must be positive")
    mismatch = 1.0
    if "mismatch" in node:
        mismatch = _number(node["mismatch"], f"{where}.mismatch")
        if mismatch <= 0:
            raise ConfigError(f"{where}.mismatch: must be positive")
    bounds = None
    if "input_bounds" in node and node["input_bounds"] is not None:
        raw = node["input_bounds"]
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            raise ConfigError(f"{where}.input_bounds: expected two [low, high] pairs")
        bounds = tuple(_pair(b, f"{where}.input_bounds") for b in raw)
        if any(lo >= hi for lo, hi in bounds):
            raise ConfigError(f"{where}.input_bounds: low bound must be below high")
    return Scenario(
        plant_true=plant.with_mismatch(mismatch),
        plant_design=plant,
        r1=_parse_profile(_get(node, "r1", where), f"{where}.r1"),
        alpha=alpha,
        duration=duration,
        r2=_parse_profile(node["r2"], f"{where}.r2") if node.get("r2") is not None else None,
        input_bounds=bounds,
        disturbance=(_parse_disturbance(node["disturbance"], f"{where}.disturbance")
                     if node.get("disturbance") is not None else None),
        ambient=_number(node.get("ambient", 0.0), f"{where}.ambient"),
        mismatch_factor=mismatch,
    )


def _parse_controller(node, index: int, base: DesignSpec):
    where = f"controllers[{index}]"
    node = _require_mapping(node, where)
    kind = _get(node, "kind", where)
    if kind not in _CONTROLLER_KINDS:
        raise ConfigError(f"{where}.kind: expected one of {', '.join(_CONTROLLER_KINDS)}")
    label = node.get("label", kind)
    if not isinstance(label, str) or not label:
        raise ConfigError(f"{where}.label: expected a nonempty string")

    if kind in ("predictive", "setpoint-variation"):
        allowed = ("kind", "label", "design")
        if kind == "setpoint-variation":
            allowed += ("threshold", "gain", "y1_floor")
        _reject_unknown(node, allowed, where)
        design = _parse_design(node.get("design", {}), f"{where}.design", base)
        if kind == "predictive":
            return PredictivePid(design=design, label=label)
        kwargs = {"design": design, "label": label}
        for key in ("threshold", "gain", "y1_floor"):
            if key in node:
                kwargs[key] = _number(node[key], f"{where}.{key}")
        return SetpointVariation(**kwargs)

    _reject_unknown(node, ("kind", "label", "pid1", "pid2", "blend"), where)
    pid1 = _pair(_get(node, "pid1", where), f"{where}.pid1")
    pid2 = _pair(_get(node, "pid2", where), f"{where}.pid2")
    if kind == "parallel":
        return ParallelRatioPid(pid1=pid1, pid2=pid2, label=label)
    blend = _number(_get(node, "blend", where), f"{where}.blend")
    if not 0.0 <= blend <= 1.0:
        raise ConfigError(f"{where}.blend: must lie in [0, 1]")
    return BlendStation(pid1=pid1, pid2=pid2, blend=blend, label=label)


def _parse_tuning(node, where: str = "tuning") -> dict:
    node = _require_mapping(node, where)
    _reject_unknown(node, _TUNING_KEYS, where)
    out = {}
    for key, value in node.items():
        if key == "horizon":
            out[key] = _integer(value, f"{where}.horizon")
        elif key in ("beta_grid", "gamma_grid"):
            if not isinstance(value, (list, tuple)) or not value:
                raise ConfigError(f"{where}.{key}: expected a nonempty list of numbers")
            out[key] = tuple(_number(v, f"{where}.{key}") for v in value)
        else:
            out[key] = _number(value, f"{where}.{key}")
    return out


def parse_config(tree) -> RunConfig:
    """Validate a parsed YAML tree and build the typed RunConfig."""
    tree = _require_mapping(tree, "config")
    _reject_unknown(tree, ("plant", "design", "scenario", "controllers",
                           "tuning", "output"), "config")
    plant = _parse_plant(_get(tree, "plant", "config"))
    design = _parse_design(_get(tree, "design", "config"), "design")
    scenario = _parse_scenario(_get(tree, "scenario", "config"), plant)

    raw_controllers = _get(tree, "controllers", "config")
    if not isinstance(raw_controllers, (list, tuple)) or not raw_controllers:
        raise ConfigError("controllers: expected a nonempty list")
    controllers = tuple(_parse_controller(entry, i, design)
                        for i, entry in enumerate(raw_controllers))
    labels = [c.label for c in controllers]
    if len(set(labels)) != len(labels):
        raise ConfigError("controllers: labels must be unique (they name output files)")

    tuning = _parse_tuning(tree["tuning"]) if tree.get("tuning") is not None else {}
    output_dir = None
    if tree.get("output") is not None:
        out_node = _require_mapping(tree["output"], "output")
        _reject_unknown(out_node, ("directory",), "output")
        output_dir = _get(out_node, "directory", "output")
        if not isinstance(output_dir, str) or not output_dir:
            raise ConfigError("output.directory: expected a nonempty string")

    return RunConfig(plant=plant, design=design, scenario=scenario,
                     controllers=controllers, tuning=tuning, output_dir=output_dir)


def load_config(path) -> RunConfig:
    """Read and validate a config file, raising ConfigError with location info."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            tree = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        place = f"{path}:{mark.line + 1}" if mark else str(path)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"{place}: {problem}") from exc
    try:
        return parse_config(tree)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _design_mapping(design: DesignSpec) -> dict:
    return {
        "horizon": design.horizon,
        "q1_diag": [float(v) for v in design.q1_diag],
        "epsilon": float(design.epsilon),
        "beta": float(design.beta),
        "gamma": float(design.gamma),
    }


def _profile_mapping(profile: StepProfile):
    if len(profile.breakpoints) == 1 and profile.breakpoints[0][0] == 0.0:
        return profile.breakpoints[0][1]
    return [[t, v] for t, v in profile.breakpoints]


def _controller_mapping(spec) -> dict:
    if isinstance(spec, PredictivePid):
        return {"kind": "predictive", "label": spec.label,
                "design": _design_mapping(spec.design)}
    if isinstance(spec, SetpointVariation):
        return {"kind": "setpoint-variation", "label": spec.label,
                "threshold": float(spec.threshold), "gain": float(spec.gain),
                "y1_floor": float(spec.y1_floor),
                "design": _design_mapping(spec.design)}
    if isinstance(spec, ParallelRatioPid):
        return {"kind": "parallel", "label": spec.label,
                "pid1": list(spec.pid1), "pid2": list(spec.pid2)}
    return {"kind": "blend", "label": spec.label,
            "pid1": list(spec.pid1), "pid2": list(spec.pid2),
            "blend": float(spec.blend)}


def config_to_mapping(cfg: RunConfig) -> dict:
    """Plain data tree for serialization; the inverse of parse_config."""
    scenario = cfg.scenario
    sc = {
        "alpha": float(scenario.alpha),
        "duration": float(scenario.duration),
        "ambient": float(scenario.ambient),
        "mismatch": float(scenario.mismatch_factor),
        "r1": _profile_mapping(scenario.r1),
    }
    if scenario.r2 is not None:
        sc["r2"] = _profile_mapping(scenario.r2)
    if scenario.input_bounds is not None:
        sc["input_bounds"] = [list(b) for b in scenario.input_bounds]
    if scenario.disturbance is not None:
        d = scenario.disturbance
        sc["disturbance"] = {"onset": float(d.onset), "magnitude": float(d.magnitude),
                             "injection": d.injection, "gains": list(d.gains)}
    tree = {
        "plant": {
            "gain": cfg.plant.gain.tolist(),
            "tau": cfg.plant.tau.tolist(),
            "dead_time": list(cfg.plant.dead_time),
            "sample_time": float(cfg.plant.sample_time),
        },
        "design": _design_mapping(cfg.design),
        "scenario": sc,
        "controllers": [_controller_mapping(c) for c in cfg.controllers],
    }
    if cfg.tuning:
        tree["tuning"] = {k: (list(v) if isinstance(v, tuple) else v)
                          for k, v in cfg.tuning.items()}
    if cfg.output_dir is not None:
        tree["output"] = {"directory": cfg.output_dir}
    return tree


def save_config(cfg: RunConfig, path):
    """Write the config back as YAML, preserving every value exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_mapping(cfg), fh, sort_keys=False,
                       default_flow_style=None)


def tuning_context(cfg: RunConfig) -> TuningContext:
    """TuningContext for the config's scenario with the `tuning` knobs applied."""
    return TuningContext(scenario=cfg.scenario, **cfg.tuning)
