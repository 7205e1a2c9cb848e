"""YAML scenario files.

Every key is optional; omitted keys take the published two-UAV values. Unknown
keys are rejected. Matrices are row-major nested lists; gain matrices may also
be given as a 3-list, read as a diagonal.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import estimator as est
from . import scenario as sc
from .liegroup import exp_so3, is_rotation
from .measurement import FeatureSet, NoiseSpec


class ConfigError(ValueError):
    """Schema or value error, tagged with the dotted path of the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


SCHEMA: dict[str, Any] = {
    "duration": None,
    "dt": None,
    "seed": None,
    "features": None,
    "truth": {"R0": None, "b0": None, "profile": {"kind": None, "xi0": None, "amplitude": None,
                                                  "frequency_hz": None}},
    "noise": {"support_width": None, "velocity_support_width": None},
    "measurement": {"velocity_source": None, "filter_cutoff_hz": None},
    "gains": {"J": None, "M": None, "Dr": None, "Dt": None, "kappa": None, "W": None, "phi_eps": None},
    "estimate": {"Rhat0": None, "Rhat0_rotvec": None, "bhat0": None, "omegahat0": None, "nuhat0": None},
    "newton": {"tolerance": None, "max_iterations": None},
}


def _check_keys(data, schema, prefix=""):
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected a mapping")
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(path, "unknown key")
        if isinstance(schema[key], dict) and value is not None:
            _check_keys(value, schema[key], path + ".")


def _num(data, key, path, default, positive=False, integer=False):
    if data is None or data.get(key) is None:
        return default
    v = data[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, "expected a number")
    if integer and (not isinstance(v, int)):
        raise ConfigError(path, "expected an integer")
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if positive and not v > 0:
        raise ConfigError(path, "must be positive")
    return v


def _array(data, key, path, default, shape):
    if data is None or data.get(key) is None:
        return np.array(default, dtype=float)
    try:
        arr = np.array(data[key], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected numbers") from None
    if shape == "gain" and arr.shape == (3,):
        arr = np.diag(arr)
        shape = (3, 3)
    elif shape == "gain":
        shape = (3, 3)
    if shape is not None and arr.shape != shape:
        raise ConfigError(path, f"expected shape {shape}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ConfigError(path, "entries must be finite")
    return arr


def config_from_dict(data: dict | None) -> sc.ScenarioConfig:
    data = {} if data is None else data
    _check_keys(data, SCHEMA)
    d = sc.ScenarioConfig()  # source of defaults
    truth = data.get("truth") or {}
    prof = truth.get("profile") or {}
    noise = data.get("noise") or {}
    meas = data.get("measurement") or {}
    gains = data.get("gains") or {}
    estimate = data.get("estimate") or {}
    newton = data.get("newton") or {}

    try:
        features = FeatureSet(_array(data, "features", "features", d.features.points, None))
    except ValueError as exc:
        raise ConfigError("features", str(exc)) from None

    R0 = _array(truth, "R0", "truth.R0", d.R0, (3, 3))
    if not is_rotation(R0, 1e-9):
        raise ConfigError("truth.R0", "not a rotation matrix")
    kind = prof.get("kind", d.profile.kind)
    if kind not in ("constant", "sinusoid"):
        raise ConfigError("truth.profile.kind", "must be 'constant' or 'sinusoid'")
    profile = sc.TwistProfile(
        _array(prof, "xi0", "truth.profile.xi0", d.profile.xi0, (6,)), kind,
        _array(prof, "amplitude", "truth.profile.amplitude", d.profile.amplitude, (6,)),
        float(_num(prof, "frequency_hz", "truth.profile.frequency_hz", d.profile.frequency_hz)))

    seed = _num(data, "seed", "seed", d.seed, integer=True)
    if seed < 0:
        raise ConfigError("seed", "must be non-negative")
    widths = []
    for key in ("support_width", "velocity_support_width"):
        w = _num(noise, key, f"noise.{key}", getattr(d.noise, key))
        if w < 0:
            raise ConfigError(f"noise.{key}", "must be non-negative")
        widths.append(float(w))

    source = meas.get("velocity_source", d.velocity_source)
    if source not in ("filter", "truth"):
        raise ConfigError("measurement.velocity_source", "must be 'filter' or 'truth'")

    beta = features.points.shape[0] * (features.points.shape[0] - 1) // 2
    W = None if gains.get("W") is None else _array(gains, "W", "gains.W", None, (beta, beta))
    try:
        g = est.EstimatorGains(
            _array(gains, "J", "gains.J", d.gains.J, "gain"),
            _array(gains, "M", "gains.M", d.gains.M, "gain"),
            _array(gains, "Dr", "gains.Dr", d.gains.Dr, "gain"),
            _array(gains, "Dt", "gains.Dt", d.gains.Dt, "gain"),
            kappa=_num(gains, "kappa", "gains.kappa", d.gains.kappa),
            W=W,
            phi=est.Shaping(float(_num(gains, "phi_eps", "gains.phi_eps", 0.0))),
        )
    except est.GainValidationError as exc:
        raise ConfigError(f"gains.{exc.field}", str(exc).split(": ", 1)[1]) from None

    if estimate.get("Rhat0") is not None and estimate.get("Rhat0_rotvec") is not None:
        raise ConfigError("estimate", "give either Rhat0 or Rhat0_rotvec, not both")
    if estimate.get("Rhat0_rotvec") is not None:
        Rhat0 = exp_so3(_array(estimate, "Rhat0_rotvec", "estimate.Rhat0_rotvec", None, (3,)))
    else:
        Rhat0 = _array(estimate, "Rhat0", "estimate.Rhat0", d.Rhat0, (3, 3))
        if not is_rotation(Rhat0, 1e-9):
            raise ConfigError("estimate.Rhat0", "not a rotation matrix")
    xihat0 = np.concatenate([_array(estimate, "omegahat0", "estimate.omegahat0", d.xihat0[:3], (3,)),
                             _array(estimate, "nuhat0", "estimate.nuhat0", d.xihat0[3:], (3,))])

    max_it = _num(newton, "max_iterations", "newton.max_iterations", d.newton.max_iterations,
                  positive=True, integer=True)
    tol = _num(newton, "tolerance", "newton.tolerance", d.newton.tolerance, positive=True)
    duration = _num(data, "duration", "duration", d.duration, positive=True)
    dt = _num(data, "dt", "dt", d.dt, positive=True)
    cutoff = _num(meas, "filter_cutoff_hz", "measurement.filter_cutoff_hz", d.filter_cutoff_hz, positive=True)
    try:
        return sc.ScenarioConfig(
            duration=float(duration), dt=float(dt), features=features, R0=R0,
            b0=_array(truth, "b0", "truth.b0", d.b0, (3,)), profile=profile,
            noise=NoiseSpec(widths[0], widths[1], int(seed)), gains=g, Rhat0=Rhat0,
            bhat0=_array(estimate, "bhat0", "estimate.bhat0", d.bhat0, (3,)), xihat0=xihat0,
            seed=int(seed), velocity_source=source, filter_cutoff_hz=float(cutoff),
            newton=est.NewtonConfig(float(tol), int(max_it)),
        )
    except ValueError as exc:
        raise ConfigError("duration" if "multiple" in str(exc) else "<root>", str(exc)) from None


def _lst(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def config_to_dict(cfg: sc.ScenarioConfig) -> dict:
    """Inverse of :func:`config_from_dict`; floats are written at full precision."""
    g = cfg.gains
    return {
        "duration": float(cfg.duration),
        "dt": float(cfg.dt),
        "seed": int(cfg.seed),
        "features": _lst(cfg.features.points),
        "truth": {
            "R0": _lst(cfg.R0),
            "b0": _lst(cfg.b0),
            "profile": {"kind": cfg.profile.kind, "xi0": _lst(cfg.profile.xi0),
                        "amplitude": _lst(cfg.profile.amplitude),
                        "frequency_hz": float(cfg.profile.frequency_hz)},
        },
        "noise": {"support_width": float(cfg.noise.support_width),
                  "velocity_support_width": float(cfg.noise.velocity_support_width)},
        "measurement": {"velocity_source": cfg.velocity_source, "filter_cutoff_hz": float(cfg.filter_cutoff_hz)},
        "gains": {"J": _lst(g.J), "M": _lst(g.M), "Dr": _lst(g.Dr), "Dt": _lst(g.Dt),
                  "kappa": float(g.kappa), "W": None if g.W is None else _lst(g.W),
                  "phi_eps": float(g.phi.eps)},
        "estimate": {"Rhat0": _lst(cfg.Rhat0), "bhat0": _lst(cfg.bhat0),
                     "omegahat0": _lst(cfg.xihat0[:3]), "nuhat0": _lst(cfg.xihat0[3:])},
        "newton": {"tolerance": float(cfg.newton.tolerance), "max_iterations": int(cfg.newton.max_iterations)},
    }


def load_config(path) -> sc.ScenarioConfig:
    """Read and validate a scenario file. ``OSError`` propagates for unreadable paths."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<root>", f"invalid YAML: {exc}") from None
    return config_from_dict(data)


def dump_config(cfg: sc.ScenarioConfig, path=None) -> str:
    text = yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None)
    if path is not None:
        Path(path).write_text(text)
    return text
