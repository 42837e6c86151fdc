"""JSON experiment configuration: schema validation with defaults, plus run manifests."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .core import (
    DomainError,
    Drift,
    ElectrodeSystem,
    Environment,
    Particle,
    TrapField,
    TrapShape,
    denormalize_inverse,
    epstein_damping,
    KB,
)
from .dynamics import DetectorModel, FeedbackAxis, FeedbackConfig, SimConfig, SupplyNoise, stationary_feedback_gains


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


def load_schema(name: str) -> dict:
    return json.loads(resources.files("levisim").joinpath("schemas", name).read_text())


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


DEFAULTS = {
    "particle": {"diameter": 156e-9, "density": 2000.0, "charge_q": 45},
    "trap": {"frequencies_hz": [302e3, 268e3, 92e3], "depth_U0": 1e-19, "shape": "HARMONIC"},
    "electrodes": {
        "normalized_inverse": [[1.0, 0.32, -37.0], [0.36, 1.0, 4.4], [0.0011, -0.0012, 1.0]],
        "diagonal_force_per_volt": [1e-18, 1e-18, 1e-16],
    },
    "environment": {
        "pressure_mbar": 1e-7,
        "gas_temperature": 300.0,
        "stray_field_E": [0.0, 0.0, 0.0],
        "nonelectrostatic_force": [0.0, 0.0, 0.0],
        "gravity": [-9.80665, 0.0, 0.0],
    },
    "detector": {},
    "feedback": {},
    "supply": {},
    "integration": {"dt": 5e-9, "initial_nbar": [1000.0, 1000.0, 117.0], "loss_factor": 5.0},
    "timing": {"trap_rise_fall": 170e-9, "trap_trigger_delay": 380e-9, "feedback_switch_delay": 50e-9},
    "protocol": {},
    "seed": 0,
}


@dataclass
class ExperimentConfig:
    sim: SimConfig
    timing: dict
    protocol: dict
    seed: int
    repetitions: int | None
    raw: dict
    source: str | None = None
    outputs: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form; independent of key order."""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate(raw: dict) -> None:
    schema = load_schema("config.schema.json")
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (len(list(e.absolute_path)), _path(e)))
    if errors:
        e = errors[0]
        raise ConfigError(e.message, _path(e))


def _build(raw: dict) -> SimConfig:
    cur = "particle"
    try:
        p = raw["particle"]
        particle = Particle(diameter=p["diameter"], density=p["density"], charge_q=int(p["charge_q"]),
                            mass=p.get("mass"))
        cur = "trap"
        t = raw["trap"]
        trap = TrapField.from_frequencies(t["frequencies_hz"], particle.mass, t["depth_U0"], TrapShape(t["shape"]))
        cur = "electrodes"
        e = raw["electrodes"]
        if "geometry_G" in e:
            electrodes = ElectrodeSystem(np.asarray(e["geometry_G"], float), particle.charge_q)
        elif "force_matrix" in e:
            electrodes = ElectrodeSystem.from_force_matrix(e["force_matrix"], particle.charge_q)
        else:
            C = denormalize_inverse(e["normalized_inverse"], e["diagonal_force_per_volt"])
            electrodes = ElectrodeSystem.from_force_matrix(C, particle.charge_q)
        cur = "environment"
        v = raw["environment"]
        gamma = v.get("gamma")
        if gamma is None:
            gamma = epstein_damping(v["pressure_mbar"], particle.diameter, particle.mass, v["gas_temperature"])
        recoil = v.get("recoil_Dp")
        if recoil is None:
            # trap-on reheating equal to the gas rate
            recoil = [2 * particle.mass * gamma * KB * v["gas_temperature"]] * 3
        drift = Drift(**v["drift"]) if v.get("drift") else None
        env = Environment(pressure=v["pressure_mbar"], gas_temperature=v["gas_temperature"], gamma=gamma,
                          recoil_Dp=np.asarray(recoil, float), stray_field_E=np.asarray(v["stray_field_E"], float),
                          nonelectrostatic_force=np.asarray(v["nonelectrostatic_force"], float),
                          gravity=np.asarray(v["gravity"], float), drift=drift)
        cur = "detector"
        d = raw["detector"]
        det = DetectorModel()
        det = replace(det, **{k: (tuple(map(tuple, x)) if k == "weights" else tuple(x) if isinstance(x, list) else x)
                              for k, x in d.items()})
        cur = "supply"
        s = raw["supply"]
        supply = replace(SupplyNoise(), **{k: tuple(x) if isinstance(x, list) else x for k, x in s.items()})
        cur = "integration"
        g = raw["integration"]
        cfg = SimConfig(particle=particle, trap=trap, electrodes=electrodes, environment=env, detector=det,
                        supply=supply, dt=g["dt"], initial_nbar=tuple(g["initial_nbar"]),
                        loss_factor=g["loss_factor"],
                        feedback=FeedbackConfig(tuple(FeedbackAxis(enabled=False, routing_electrode=i)
                                                      for i in range(3))))
        cur = "feedback"
        f = raw["feedback"]
        axes_in = f.get("axes", [{}, {}, {}])
        auto = stationary_feedback_gains(cfg, f.get("target_nbar"))
        axes = []
        for i, a in enumerate(axes_in):
            a = dict(a)
            a.setdefault("routing_electrode", i)
            if a.get("gain") is None and a.get("voltage_gain") is None:
                a["gain"] = float(auto[i])
            a.pop("voltage_gain", None) if a.get("voltage_gain") is None else None
            axes.append(FeedbackAxis(**a))
        return replace(cfg, feedback=FeedbackConfig(tuple(axes)))
    except DomainError as exc:
        raise ConfigError(str(exc), cur) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), cur) from exc


def from_dict(user: dict, source: str | None = None) -> ExperimentConfig:
    validate(user)
    raw = _merge(DEFAULTS, user)
    validate(raw)
    sim = _build(raw)
    return ExperimentConfig(sim=sim, timing=dict(raw["timing"]), protocol=dict(raw["protocol"]),
                            seed=int(raw["seed"]), repetitions=raw.get("repetitions"), raw=raw, source=source)


def load_config(path) -> ExperimentConfig:
    """Validate a configuration file and build it; missing fields take defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        user = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(user, dict):
        raise ConfigError("top level must be an object")
    return from_dict(user, str(path))


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    tool_version: str
    subcommand: str
    start_time: str
    end_time: str = ""
    outputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)
