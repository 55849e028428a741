"""Physical parameters of the cavity/ancilla system and derived per-interval probabilities.

All angles are radians and all rates are 1/s internally. Configuration files give
the dispersive shift as chi/2pi in Hz; :func:`params_from_mapping` converts it once.
"""
from __future__ import annotations

import dataclasses
import enum
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

TWO_PI = 2.0 * math.pi


class AncillaState(enum.IntEnum):
    G = 0
    E = 1


class ParameterError(ValueError):
    """Raised when a parameter set violates a physical or protocol constraint.

    ``violation`` names the broken rule (e.g. ``"non-positive time"``).
    """

    def __init__(self, violation: str, field: str, value: Any):
        self.violation = violation
        self.field = field
        self.value = value
        super().__init__(f"{violation}: {field}={value!r}")


class ParameterWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SystemParams:
    chi: float
    gamma: float
    gamma_up: float
    t1_cavity: float
    t_m: float
    t_g: float
    theta_0: float = 0.0
    p_e_given_g: float = 0.0
    p_g_given_e: float = 0.0
    c_ro: float = 1.0
    feedback_phase: float = 0.0

    @property
    def chi_hz(self) -> float:
        return self.chi / TWO_PI

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    def to_config(self) -> dict:
        """Mapping in configuration-file units (chi as chi/2pi in Hz)."""
        d = dataclasses.asdict(self)
        d["chi"] = self.chi_hz
        return d


@dataclass(frozen=True)
class ValidatedParams(SystemParams):
    """A :class:`SystemParams` that passed :func:`validate`; ``warnings`` lists soft issues."""

    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class DerivedRates:
    p_up: float
    p_down: float
    n_th: float


_RATES = ("chi", "gamma", "t1_cavity")  # t1_cavity may be inf (no photon loss)
_TIMES = ("t_m", "t_g")
_PROBS = ("p_e_given_g", "p_g_given_e")


def validate(params: SystemParams) -> ValidatedParams:
    """Check every parameter invariant; raise :class:`ParameterError` on the first hard violation.

    Soft issues (heating not small compared with decay, ``gamma_up * t_m`` not small)
    are attached to the returned object and emitted as :class:`ParameterWarning`.
    """
    values = dataclasses.asdict(params)
    values.pop("warnings", None)
    for name in _RATES:
        v = values[name]
        if not (v > 0):
            raise ParameterError("non-positive rate", name, v)
        if math.isinf(v) and name != "t1_cavity":
            raise ParameterError("non-finite rate", name, v)
    if not (values["gamma_up"] >= 0) or not math.isfinite(values["gamma_up"]):
        raise ParameterError("negative rate", "gamma_up", values["gamma_up"])
    for name in _TIMES:
        v = values[name]
        # t_g = 0 is the ideal-measurement limit
        if not (v > 0 or (name == "t_g" and v == 0)) or not math.isfinite(v):
            raise ParameterError("non-positive time", name, v)
    for name in _PROBS:
        v = values[name]
        if not (0.0 <= v <= 1.0):
            raise ParameterError("probability out of range", name, v)
    if not (0.0 < values["c_ro"] <= 1.0):
        raise ParameterError("coherence factor out of range", "c_ro", values["c_ro"])
    if values["t_g"] >= values["t_m"]:
        raise ParameterError("gap not shorter than measurement interval", "t_g", values["t_g"])
    if values["gamma_up"] >= values["gamma"]:
        raise ParameterError("heating rate not below decay rate", "gamma_up", values["gamma_up"])

    notes = []
    if values["gamma_up"] / values["gamma"] > 0.1:
        notes.append(f"gamma_up/gamma = {values['gamma_up'] / values['gamma']:.3g} > 0.1; "
                     "excitations are not independent")
    if values["gamma_up"] * values["t_m"] > 0.05:
        notes.append(f"gamma_up*t_m = {values['gamma_up'] * values['t_m']:.3g} is not << 1")
    for note in notes:
        warnings.warn(note, ParameterWarning, stacklevel=2)
    return ValidatedParams(**values, warnings=tuple(notes))


def derive_rates(params: SystemParams) -> DerivedRates:
    p_up = params.gamma_up * params.t_m
    p_down = -math.expm1(-params.gamma * params.t_m)
    n_th = params.gamma_up / (params.gamma_up + params.gamma)
    return DerivedRates(p_up=p_up, p_down=p_down, n_th=n_th)


def readout_factor_from_postselected(t_m: float, postselected_tphi: float, event2a_rate: float,
                                     p0a: float = 1.0) -> float:
    """C_RO such that events 0a and 2a together give the observed postselected dephasing time.

    ``1 - C_RO = t_m * (1/T_ps - rate_2a) / p0a``.
    """
    return 1.0 - t_m * (1.0 / postselected_tphi - event2a_rate) / p0a


# Device values; the repeated preset swaps in the rates seen under continuous monitoring.
_CHI = TWO_PI * 73.06e3
_COMMON = dict(chi=_CHI, t1_cavity=1.57e-3, t_m=2.6e-6, t_g=1.24e-6, theta_0=0.0,
               p_e_given_g=2.16e-4, p_g_given_e=1.4e-2)

# 1 - C_RO ~ t_m (1/182 ms - 1/1678 ms); exact value from analytics.derived_readout_factor
# on the repeated-measurement parameters
DEFAULT_C_RO = 1.0 - 1.27431e-5

PRESETS: dict[str, SystemParams] = {
    "idle": SystemParams(gamma=1.0 / 67.0e-6, gamma_up=119.0, c_ro=DEFAULT_C_RO, **_COMMON),
    "repeated": SystemParams(gamma=1.0 / 31.5e-6, gamma_up=134.0, c_ro=DEFAULT_C_RO, **_COMMON),
}

FIG2_OVERRIDES = dict(chi=TWO_PI * 82.1e3, theta_0=0.22 * math.pi)


def preset(name: str, **overrides) -> SystemParams:
    try:
        base = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return base.replace(**overrides) if overrides else base


_FIELDS = {f.name for f in dataclasses.fields(SystemParams)}


def params_from_mapping(mapping: Mapping[str, Any], base: SystemParams | None = None) -> SystemParams:
    """Build params from a config mapping; ``chi`` is chi/2pi in Hz, everything else SI."""
    unknown = set(mapping) - _FIELDS
    if unknown:
        raise ParameterError("unknown parameter", ",".join(sorted(unknown)), None)
    values = {k: float(v) for k, v in mapping.items()}
    if "chi" in values:
        values["chi"] = TWO_PI * values["chi"]
    if base is None:
        missing = _FIELDS - set(values) - {"theta_0", "p_e_given_g", "p_g_given_e", "c_ro",
                                           "feedback_phase"}
        if missing:
            raise ParameterError("missing parameter", ",".join(sorted(missing)), None)
        return SystemParams(**values)
    return base.replace(**values)


def load_config(path: str | Path) -> dict:
    """Read a YAML config: optional ``preset``, a ``params`` block, and command blocks."""
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ParameterError("config is not a mapping", str(path), type(data).__name__)
    return data


def resolve_params(config: Mapping[str, Any] | None = None, preset_name: str | None = None) -> SystemParams:
    config = config or {}
    name = preset_name or config.get("preset")
    base = preset(name) if name else None
    return params_from_mapping(config.get("params", {}), base=base)
