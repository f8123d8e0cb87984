"""Run configuration: a small line-based `key = value` format.

Sections [case], [solver], [numerics], [output]; unknown sections or keys
are rejected with the offending line number, which a stock INI parser would
not report.  `#` and `;` start comments.  Values never contain quotes.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float_list(text):
    parts = text.replace(",", " ").split()
    if not parts:
        raise ValueError("empty list")
    return [float(p) for p in parts]


def _parse_str_list(text):
    parts = [p for p in text.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("empty list")
    return parts


# section -> key -> converter
_SCHEMA = {
    "case": {
        "name": str,
        "h": _parse_float_list,
        "jitter": float,
        "seed": int,
        "t_end": float,
        "c_dt": float,
        "length": float,
        "re": float,
    },
    "solver": {
        "scheme": _parse_str_list,
        "penalty_A": float,
        "pressure_guess": str,
        "max_iter": int,
    },
    "numerics": {
        "tol": float,
        "alpha": float,
        "w_pde": float,
        "kronecker_delta": _parse_bool,
        "r_min": float,
        "r_max": float,
        "n_min": int,
        "dt_max": float,
        "max_steps": int,
        "manage": _parse_bool,
    },
    "output": {
        "directory": str,
        "snapshot_interval": int,
        "mode": str,
    },
}

_REQUIRED = (("case", "name"), ("case", "h"), ("solver", "scheme"))


@dataclass
class RunConfig:
    """Parsed, type-checked configuration with documented defaults."""

    case_name: str = ""
    h_list: list = field(default_factory=list)
    jitter: float = 0.0
    seed: int = 0
    case_kwargs: dict = field(default_factory=dict)
    schemes: list = field(default_factory=lambda: ["coupled_new"])
    penalty_a: float = 0.1
    pressure_guess: str = "previous"
    max_iter: int | None = None
    tol: float = 1.0e-9
    alpha: float = 6.25
    w_pde: float = 2.0
    kronecker_delta: bool = False
    r_min: float = 0.2
    r_max: float = 0.45
    n_min: int = 9
    dt_max: float | None = None
    max_steps: int = 100000
    manage: bool = True
    directory: str = "out"
    snapshot_interval: int = 0
    mode: str = "sequential"


def parse_lines(text: str):
    """Raw pass: returns {(section, key): (value_text, line_no)}."""
    out = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}",
                                  lineno)
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw.strip()!r}",
                              lineno)
        if section is None:
            raise ConfigError("key outside any [section]", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        out[(section, key)] = (value, lineno)
    return out


def apply_overrides(entries: dict, overrides):
    """--set section.key=value items, validated like file entries."""
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must be section.key=value: {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        section, key = section.strip(), key.strip()
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section {section!r} in override")
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}] override")
        entries[(section, key)] = (value.strip(), None)
    return entries


def build_config(entries: dict) -> RunConfig:
    for section, key in _REQUIRED:
        if (section, key) not in entries:
            raise ConfigError(f"missing required key {key!r} in [{section}]")
    cfg = RunConfig()
    values = {}
    for (section, key), (text, lineno) in entries.items():
        conv = _SCHEMA[section][key]
        try:
            values[(section, key)] = conv(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {exc}", lineno)

    cfg.case_name = values[("case", "name")]
    cfg.h_list = values[("case", "h")]
    for key, attr in (("jitter", "jitter"), ("seed", "seed")):
        if ("case", key) in values:
            setattr(cfg, attr, values[("case", key)])
    for key in ("t_end", "c_dt", "length", "re"):
        if ("case", key) in values:
            cfg.case_kwargs[key] = values[("case", key)]

    cfg.schemes = values[("solver", "scheme")]
    if ("solver", "penalty_A") in values:
        cfg.penalty_a = values[("solver", "penalty_A")]
    if ("solver", "pressure_guess") in values:
        cfg.pressure_guess = values[("solver", "pressure_guess")]
    if ("solver", "max_iter") in values:
        cfg.max_iter = values[("solver", "max_iter")]

    for key in _SCHEMA["numerics"]:
        if ("numerics", key) in values:
            setattr(cfg, key, values[("numerics", key)])
    for key in _SCHEMA["output"]:
        if ("output", key) in values:
            setattr(cfg, key, values[("output", key)])

    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    from .cases import CASES
    from .solvers import STEPPERS

    if cfg.case_name not in CASES:
        raise ConfigError(f"unknown case {cfg.case_name!r}; "
                          f"have {sorted(CASES)}")
    for scheme in cfg.schemes:
        if scheme not in STEPPERS:
            raise ConfigError(f"unknown scheme {scheme!r}; "
                              f"have {sorted(STEPPERS)}")
    if any(h <= 0 for h in cfg.h_list):
        raise ConfigError("h values must be positive")
    if not 0.0 < cfg.penalty_a <= 0.3:
        raise ConfigError("penalty_A must lie in (0, 0.3]")
    if cfg.pressure_guess not in ("previous", "zero"):
        raise ConfigError("pressure_guess must be 'previous' or 'zero'")
    if cfg.mode not in ("sequential", "parallel"):
        raise ConfigError("mode must be 'sequential' or 'parallel'")
    if not 0.0 <= cfg.jitter <= 0.1:
        raise ConfigError("jitter must lie in [0, 0.1]")
    if cfg.snapshot_interval < 0:
        raise ConfigError("snapshot_interval must be >= 0")
    if cfg.tol <= 0 or cfg.alpha <= 0 or cfg.w_pde <= 0:
        raise ConfigError("tol, alpha and w_pde must be positive")


def parse_config(text: str, overrides=None) -> RunConfig:
    entries = parse_lines(text)
    apply_overrides(entries, overrides)
    return build_config(entries)
