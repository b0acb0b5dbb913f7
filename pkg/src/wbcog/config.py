"""Experiment configuration: the :class:`Scenario` record and its text format.

The config file is a flat ``key = value`` list, one entry per line, ``#``
starts a comment.  Power-like keys may be given either in dB/dBm (suffix
``_db`` / ``_dbm``) or directly in linear units; internally every power and
ratio is linear (milliwatts for powers).  Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

__all__ = [
    "ConfigError",
    "ValidationError",
    "Scenario",
    "db_to_lin",
    "lin_to_db",
    "load_scenario",
    "parse_scenario",
    "dump_scenario",
    "apply_overrides",
    "noise_power",
    "ci_profile",
]


class ConfigError(ValueError):
    """Raised when a config file cannot be parsed."""


class ValidationError(ValueError):
    """Raised when a Scenario violates one of its invariants."""


def db_to_lin(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def lin_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


Point = tuple[float, float]


@dataclass(frozen=True)
class Scenario:
    """Full experiment configuration (defaults follow the reference setup).

    Powers (``p_max``, ``p_max_prime``, ``delta_max``) are linear mW; the
    Rician factors and ``beta_SI`` are linear ratios.
    """

    M: int = 8
    N: int = 8
    K: int = 3
    T: int = 2
    L: int = 5
    L_c: int = 3
    L_s: int = 1
    p_max: float = 1000.0
    p_max_prime: float = 1000.0
    delta_max: float = 0.1
    tau: int = 400
    tau_c: int | None = None
    tau_d: int = 100
    kappa: float = db_to_lin(3.0)
    kappa_SI: float = db_to_lin(3.0)
    beta_SI: float = db_to_lin(-70.0)
    beta_t_mag: float = 1e-2
    fc: float = 28e9
    B: float = 10e6
    N0_dBm_per_Hz: float = -174.0
    Nf_dB: float = 10.0
    primary_bs: Point = (0.0, 0.0)
    secondary_bs: Point = (70.0, 0.0)
    user_center: Point = (30.0, 0.0)
    user_radius: float = 10.0
    target_center: Point = (80.0, 0.0)
    target_radius: float = 10.0
    target_angles_deg: tuple[float, ...] = ()
    eta: float = 1.0
    csi_error_convention: str = "complement"
    delta_1: float = 1e-6
    delta_2: float = 1e-6
    epsilon: float = 1e-3
    D: int = 100_000
    seed: int = 0
    n_trials: int = 1000
    n_snapshots: int | None = None
    max_inner: int = 500
    max_outer: int = 100
    ao_max_iters: int = 20
    retraction: str = "sphere"
    sdp_tol: float = 1e-8

    def __post_init__(self):
        if self.tau_c is None:
            object.__setattr__(self, "tau_c", self.K)
        validate(self)

    @property
    def tau_s(self) -> int:
        return self.tau - self.tau_c - self.tau_d

    @property
    def sigma2(self) -> float:
        return noise_power(self)

    @property
    def snapshots(self) -> int:
        return self.tau_d if self.n_snapshots is None else self.n_snapshots

    def replace(self, **changes) -> "Scenario":
        # tau_c follows K unless it was set explicitly away from it.
        if "K" in changes and "tau_c" not in changes and self.tau_c == self.K:
            changes["tau_c"] = None
        return dataclasses.replace(self, **changes)


def _check(cond: bool, rule: str) -> None:
    if not cond:
        raise ValidationError(rule)


def validate(sc: Scenario) -> None:
    for name in ("M", "N", "K", "T", "L", "L_c", "L_s", "tau", "D", "n_trials",
                 "max_inner", "max_outer", "ao_max_iters"):
        _check(int(getattr(sc, name)) >= 1, f"{name} must be a positive integer")
    _check(sc.tau_c >= 0 and sc.tau_d >= 0, "tau_c and tau_d must be nonnegative")
    _check(sc.L_c <= sc.L, "L_c <= L violated")
    _check(sc.L_s <= sc.L, "L_s <= L violated")
    _check(sc.tau_c + sc.tau_d < sc.tau, "tau_c + tau_d < tau violated")
    for name in ("p_max", "p_max_prime", "delta_max", "fc", "B", "user_radius",
                 "target_radius", "kappa", "kappa_SI"):
        _check(getattr(sc, name) > 0, f"{name} must be strictly positive")
    _check(sc.beta_t_mag >= 0, "beta_t_mag must be nonnegative")
    _check(0.0 <= sc.eta <= 1.0, "0 <= eta <= 1 violated")
    _check(0.0 < sc.beta_SI < 1.0, "0 < beta_SI < 1 violated")
    _check(sc.delta_1 > 0 and sc.delta_2 > 0 and sc.epsilon > 0,
           "tolerances must be strictly positive")
    _check(0 <= sc.seed < 2**64, "seed must be a 64-bit unsigned integer")
    _check(sc.csi_error_convention in ("complement", "literal"),
           "csi_error_convention must be 'complement' or 'literal'")
    _check(sc.retraction in ("sphere", "elementwise"),
           "retraction must be 'sphere' or 'elementwise'")
    _check(sc.n_snapshots is None or sc.n_snapshots >= 1, "n_snapshots must be >= 1")
    if sc.target_angles_deg:
        _check(len(sc.target_angles_deg) == sc.T, "target_angles_deg needs exactly T entries")
        _check(all(-90.0 <= a <= 90.0 for a in sc.target_angles_deg),
               "target angles must lie in [-90, 90] degrees")


# key -> (scenario field, converter applied to the parsed float)
_DB_KEYS = {
    "p_max_dbm": ("p_max", db_to_lin),
    "p_max_prime_dbm": ("p_max_prime", db_to_lin),
    "delta_max_dbm": ("delta_max", db_to_lin),
    "kappa_db": ("kappa", db_to_lin),
    "kappa_si_db": ("kappa_SI", db_to_lin),
    "beta_si_db": ("beta_SI", db_to_lin),
}

_FIELDS = {f.name: f for f in dataclasses.fields(Scenario)}
_LOWER = {name.lower(): name for name in _FIELDS}


def _parse_value(name: str, text: str) -> Any:
    default = _FIELDS[name].default
    text = text.strip()
    if name in ("tau_c", "n_snapshots"):
        return None if text.lower() in ("", "none") else int(text)
    if isinstance(default, tuple):
        if not text:
            return ()
        return tuple(float(p) for p in text.split(","))
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(float(text)) if "e" in text.lower() else int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _resolve(key: str, text: str) -> tuple[str, Any]:
    k = key.strip().lower().replace("-", "_")
    if k in _DB_KEYS:
        name, conv = _DB_KEYS[k]
        return name, conv(float(text))
    if k in _LOWER:
        name = _LOWER[k]
        return name, _parse_value(name, text)
    raise KeyError(key)


def parse_scenario(text: str, source: str = "<string>",
                   base: Scenario | None = None) -> Scenario:
    """Parse config text; absent keys keep the values of ``base`` (defaults)."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        try:
            name, parsed = _resolve(key, val)
        except KeyError:
            raise ConfigError(f"{source}:{lineno}: unknown key {key.strip()!r}") from None
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key.strip()!r}: {exc}") from None
        values[name] = parsed
    base = base or Scenario()
    return base.replace(**values)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_scenario(text, source=str(path))


def apply_overrides(sc: Scenario, overrides: list[str] | Mapping[str, str]) -> Scenario:
    """Apply ``key=value`` overrides (the CLI ``--set`` flag)."""
    if isinstance(overrides, Mapping):
        items = list(overrides.items())
    else:
        items = []
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            items.append((k, v))
    text = "\n".join(f"{k} = {v}" for k, v in items)
    return parse_scenario(text, source="--set", base=sc)


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_scenario(sc: Scenario) -> str:
    """Serialize to the config format (linear units, exact float repr)."""
    return "\n".join(f"{f.name} = {_format(getattr(sc, f.name))}"
                     for f in dataclasses.fields(sc)) + "\n"


def noise_power(sc: Scenario) -> float:
    """AWGN variance in mW: N0 + 10 log10(B) + Nf, in dBm."""
    return db_to_lin(sc.N0_dBm_per_Hz + 10.0 * math.log10(sc.B) + sc.Nf_dB)


def ci_profile(sc: Scenario) -> Scenario:
    """Reduced-cost settings used by the test suite and the default CLI run."""
    return sc.replace(D=1000, n_trials=50)
