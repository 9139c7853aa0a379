"""Flat-section run configuration.

Grammar, one item per line::

    # comment
    [section]
    key = value

Values are numbers, booleans (``true``/``false``), bare words, or
comma-separated number lists. Every physical quantity is in units of the
tunneling amplitude Delta with hbar = 1. Unknown sections or keys, values of
the wrong type and cross-field inconsistencies raise :class:`ConfigError`
naming the line and the ``section.key`` involved.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .bath import BathSpec
from .drive import DriveProtocol, SystemSpec
from .engine import EngineConfig
from .errors import ConfigError, DomainError

UNIT_BANNER = "# units: hbar = 1; times in 1/Delta, energies and frequencies in Delta"


@dataclass(frozen=True)
class KernelOptions:
    """Kernel table range and accuracy; ``tau_max = 0`` means the last output time."""

    tau_max: float = 0.0
    tolerance: float = 1e-8


@dataclass(frozen=True)
class OutputOptions:
    """Output paths; an empty ``csv`` means ``<subcommand>.csv`` in the working directory."""

    csv: str = ""
    summary: str = ""
    dump: str = ""


@dataclass(frozen=True)
class FewModeOptions:
    modes: int = 0
    fock_cutoff: int = 6
    tolerance: float = 1e-4
    thermal_samples: int = 64


@dataclass(frozen=True)
class TPMOptions:
    tau: float = 2.0
    nu_max: float = 5.0
    nu_points: int = 41


@dataclass(frozen=True)
class CompareOptions:
    tolerance: float = 1e-2


@dataclass(frozen=True)
class RunConfig:
    system: SystemSpec = field(default_factory=SystemSpec)
    bath: BathSpec = field(default_factory=BathSpec)
    kernel: KernelOptions = field(default_factory=KernelOptions)
    drive: DriveProtocol = field(default_factory=DriveProtocol.none)
    engine: EngineConfig = field(default_factory=EngineConfig)
    output: OutputOptions = field(default_factory=OutputOptions)
    fewmode: FewModeOptions = field(default_factory=FewModeOptions)
    tpm: TPMOptions = field(default_factory=TPMOptions)
    compare: CompareOptions = field(default_factory=CompareOptions)

    @property
    def tau_max(self) -> float:
        return self.kernel.tau_max if self.kernel.tau_max > 0 else float(self.engine.times[-1])


# -- schema -------------------------------------------------------------------

_BOOL = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


def _float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("not finite")
    return value


def _int(text: str) -> int:
    return int(text, 0)


def _bool(text: str) -> bool:
    return _BOOL[text.lower()]


def _floats(text: str) -> tuple:
    return tuple(_float(v) for v in text.split(",") if v.strip())


def _word(text: str) -> str:
    return text


_TYPE_NAMES = {_float: "a number", _int: "an integer", _bool: "a boolean", _floats: "a list of numbers", _word: "a word"}

SCHEMA = {
    "system": {"delta": _float, "epsilon0": _float, "initial_state": _word},
    "bath": {"alpha": _float, "s": _float, "omega_c": _float, "temperature": _float,
             "tau_max": _float, "tolerance": _float},
    "drive": {"kind": _word, "amplitude": _float, "frequency": _float, "phase": _float,
              "t_on": _float, "t_off": _float, "knots_t": _floats, "knots_eps": _floats, "table_file": _word},
    "engine": {"n_max": _int, "quadrature": _word, "mc_samples": _int, "seed": _int,
               "det_points_per_dim": _int, "det_max_order": _int, "times": _floats,
               "t_stop": _float, "t_points": _int, "niba": _bool, "zero_lambda": _bool,
               "nearest_sojourn_only": _bool, "eta_sum": _word, "assembly": _word,
               "series_tol": _float, "workers": _int, "chunk_size": _int,
               "max_configurations": _int, "max_det_nodes": _int},
    "output": {"csv": _word, "summary": _word, "dump": _word},
    "fewmode": {"modes": _int, "fock_cutoff": _int, "tolerance": _float, "thermal_samples": _int},
    "tpm": {"tau": _float, "nu_max": _float, "nu_points": _int},
    "compare": {"tolerance": _float},
}


def _tokenize(text: str):
    """Yield ``(lineno, section, key, raw_value)`` for every assignment."""
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: assignment before any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        yield lineno, section, key, value


def _convert(where: str, section: str, key: str, value: str):
    if key not in SCHEMA[section]:
        raise ConfigError(f"{where}: unknown key {section}.{key}")
    conv = SCHEMA[section][key]
    try:
        return conv(value)
    except (ValueError, KeyError):
        raise ConfigError(f"{where}: {section}.{key} expects {_TYPE_NAMES[conv]}, got {value!r}") from None


def _build(values: dict, where: dict, base_dir: str) -> RunConfig:
    """Construct the typed config; ``where[(section, key)]`` locates each value."""

    def fail(exc: Exception, section: str, keys=()):
        known = [k for k in keys if (section, k) in where]
        # point at the field the message names, else at the first one given
        named = [k for k in known if k in str(exc)] or known
        prefix = f"{where[(section, named[0])]} ({section}.{named[0]})" if named else f"[{section}]"
        raise ConfigError(f"{prefix}: {exc}") from None

    def build(section, cls, drop=()):
        kw = {k: v for k, v in values.get(section, {}).items() if k not in drop}
        try:
            return cls(**kw)
        except (DomainError, ValueError, TypeError) as exc:
            fail(exc, section, list(values.get(section, {})))

    bath_vals = values.get("bath", {})
    system = build("system", SystemSpec)
    bath = build("bath", BathSpec, drop=("tau_max", "tolerance"))
    kernel = KernelOptions(bath_vals.get("tau_max", 0.0), bath_vals.get("tolerance", 1e-8))
    if kernel.tau_max < 0 or not kernel.tolerance > 0:
        fail(ValueError("tau_max must be >= 0 and tolerance > 0"), "bath", ["tau_max", "tolerance"])

    drive_vals = dict(values.get("drive", {}))
    table_file = drive_vals.pop("table_file", None)
    try:
        if table_file is not None:
            if drive_vals.get("kind", "table") != "table" or "knots_t" in drive_vals:
                raise DomainError("table_file needs kind = table and no inline knots")
            path = table_file if os.path.isabs(table_file) else os.path.join(base_dir, table_file)
            drive = DriveProtocol.from_csv(path)
        else:
            drive = DriveProtocol(**drive_vals)
    except (DomainError, OSError) as exc:
        fail(exc, "drive", ["table_file", "knots_t", "knots_eps"] + list(drive_vals))

    eng = dict(values.get("engine", {}))
    t_stop, t_points = eng.pop("t_stop", None), eng.pop("t_points", None)
    if t_stop is not None or t_points is not None:
        if "times" in eng or t_stop is None or t_points is None or t_points < 2:
            fail(ValueError("give either times, or t_stop with t_points >= 2"), "engine", ["t_stop", "t_points", "times"])
        eng["times"] = tuple(np.linspace(0.0, t_stop, t_points))
    if "times" in eng:
        eng["target_time_grid"] = eng.pop("times")
    try:
        engine = EngineConfig(**eng)
    except (DomainError, ValueError) as exc:
        fail(exc, "engine", list(values.get("engine", {})))

    output = build("output", OutputOptions)
    fewmode = build("fewmode", FewModeOptions)
    tpm = build("tpm", TPMOptions)
    compare = build("compare", CompareOptions)
    cfg = RunConfig(system, bath, kernel, drive, engine, output, fewmode, tpm, compare)
    _cross_validate(cfg, fail)
    return cfg


def _cross_validate(cfg: RunConfig, fail) -> None:
    t_last = float(cfg.engine.times[-1])
    if cfg.kernel.tau_max and cfg.kernel.tau_max < t_last:
        fail(ValueError(f"kernel range tau_max={cfg.kernel.tau_max} does not cover output time {t_last}"),
             "bath", ["tau_max"])
    if cfg.drive.kind == "table" and cfg.drive.t_end < t_last:
        fail(ValueError(f"drive table ends at {cfg.drive.t_end}, before output time {t_last}"),
             "drive", ["knots_t", "table_file"])
    if cfg.drive.kind == "table" and cfg.drive.t_end < cfg.tpm.tau:
        fail(ValueError(f"drive table ends at {cfg.drive.t_end}, before tpm.tau={cfg.tpm.tau}"), "tpm", ["tau"])
    if not 0 <= cfg.fewmode.modes <= 4 or not 2 <= cfg.fewmode.fock_cutoff <= 8:
        fail(ValueError("fewmode needs 0 <= modes <= 4 and 2 <= fock_cutoff <= 8"), "fewmode", ["modes", "fock_cutoff"])
    if not cfg.fewmode.tolerance > 0 or cfg.fewmode.thermal_samples < 1:
        fail(ValueError("fewmode needs tolerance > 0 and thermal_samples >= 1"), "fewmode", ["tolerance", "thermal_samples"])
    if not cfg.tpm.tau > 0 or not cfg.tpm.nu_max > 0 or cfg.tpm.nu_points < 2:
        fail(ValueError("tpm needs tau > 0, nu_max > 0 and nu_points >= 2"), "tpm", ["tau", "nu_max", "nu_points"])
    if not cfg.compare.tolerance > 0:
        fail(ValueError("compare.tolerance must be > 0"), "compare", ["tolerance"])


def parse_config(text: str, *, overrides=(), base_dir: str = ".") -> RunConfig:
    """Parse and validate configuration text.

    ``overrides`` are ``section.key=value`` strings applied after the file,
    as from ``--set`` on the command line. Relative ``table_file`` paths are
    resolved against ``base_dir``.
    """
    values: dict = {}
    where: dict = {}
    for lineno, section, key, raw in _tokenize(text):
        loc = f"line {lineno}"
        if key in values.get(section, {}):
            raise ConfigError(f"{loc}: {section}.{key} given twice (first at {where[(section, key)]})")
        values.setdefault(section, {})[key] = _convert(loc, section, key, raw)
        where[(section, key)] = loc
    for item in overrides:
        name, sep, raw = item.partition("=")
        section, dot, key = name.strip().partition(".")
        loc = f"override {item!r}"
        if not sep or not dot:
            raise ConfigError(f"{loc}: expected section.key=value")
        if section not in SCHEMA:
            raise ConfigError(f"{loc}: unknown section [{section}]")
        values.setdefault(section, {})[key] = _convert(loc, section, key, raw.strip())
        where[(section, key)] = loc
    return _build(values, where, base_dir)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    """Normalized text with every default written out; re-parses to ``cfg``."""
    out = [UNIT_BANNER]

    def section(name, items):
        out.append(f"\n[{name}]")
        out.extend(f"{k} = {_fmt(v)}" for k, v in items)

    section("system", [(f.name, getattr(cfg.system, f.name)) for f in fields(cfg.system)])
    bath = [(f.name, getattr(cfg.bath, f.name)) for f in fields(cfg.bath)]
    section("bath", bath + [("tau_max", cfg.kernel.tau_max), ("tolerance", cfg.kernel.tolerance)])
    d = cfg.drive
    drive = [("kind", d.kind)]
    if d.kind in ("constant", "pulse", "sinusoidal"):
        drive.append(("amplitude", d.amplitude))
    if d.kind == "pulse":
        drive += [("t_on", d.t_on), ("t_off", d.t_off)]
    if d.kind == "sinusoidal":
        drive += [("frequency", d.frequency), ("phase", d.phase)]
    if d.kind == "table":
        drive += [("knots_t", d.knots_t), ("knots_eps", d.knots_eps)]
    section("drive", drive)
    engine = [(f.name, getattr(cfg.engine, f.name)) for f in fields(cfg.engine)]
    section("engine", [("times" if k == "target_time_grid" else k, v) for k, v in engine])
    for name in ("output", "fewmode", "tpm", "compare"):
        obj = getattr(cfg, name)
        items = [(f.name, getattr(obj, f.name)) for f in fields(obj)]
        if name == "output":
            items = [(k, v) for k, v in items if v]
        section(name, items)
    return "\n".join(out) + "\n"


def with_engine(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, engine=replace(cfg.engine, **changes))
