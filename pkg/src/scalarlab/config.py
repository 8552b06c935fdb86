"""TOML experiment configuration: schema, validation, defaults and round-trip."""
from __future__ import annotations

import dataclasses
import hashlib
import re
from dataclasses import dataclass, field
from typing import Any

import tomli
import tomli_w

EXPERIMENTS = (
    "sample_field",
    "solve",
    "sweep_dissipation",
    "yaglom",
    "richardson",
    "boxdim",
    "morse_sard",
    "full_report",
)


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        self.key, self.line = key, line
        where = ""
        if key is not None:
            where += f" [key {key!r}"
            where += f", line {line}]" if line is not None else "]"
        super().__init__(message + where)


@dataclass(frozen=True)
class FieldSection:
    kind: str = "gaussian"  # gaussian | zero | constant | shear | cellular
    dimension: int = 2
    resolution: int = 32
    max_wavenumber: int | None = None
    alpha_target: float | None = None  # 0.5 when no decay_exponent is given
    decay_exponent: float | None = None
    amplitude: float = 1.0
    velocity_rms: float | None = None
    vector: list | None = None
    realizations: int = 1
    modes: list | None = None
    means: list | None = None
    stddevs: list | None = None


@dataclass(frozen=True)
class InitialSection:
    kind: str = "checkerboard"  # single_mode | checkerboard | indicator_halftorus
    mode: list | None = None
    cells: int = 2


@dataclass(frozen=True)
class SolverSection:
    epsilon: float = 0.01
    t_final: float = 1.0
    dt: Any = "auto"
    cfl_safety: float = 0.5
    dealias: bool = True
    output_cadence: int = 1


@dataclass(frozen=True)
class SweepSection:
    epsilons: list = field(default_factory=lambda: [2.0**-j for j in range(6, 14)])
    n_min: int | None = None
    max_resolution: int = 512
    fit_tail: int | None = None
    decrease_factor: float = 0.2
    plateau_tolerance: float = 0.1
    plateau_floor: float = 1e-3


@dataclass(frozen=True)
class YaglomSection:
    radii: list = field(default_factory=lambda: [1 / 64, 1 / 32, 1 / 16, 1 / 8])
    quadrature: int = 64


@dataclass(frozen=True)
class StructureSection:
    radii: list = field(default_factory=lambda: [2.0**-j for j in range(7, 2, -1)])


@dataclass(frozen=True)
class LagrangianSection:
    epsilons: list | None = None  # default: the sweep epsilons
    dt: float = 0.01
    t_final: float = 1.0
    times: list = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    noise_mode: str = "shared"
    pair_grid: int = 4
    rho0: float = 1 / 16
    realizations: int = 64
    n_particles: int = 10000
    fk_epsilon: float = 0.01
    fk_probes: int = 4


@dataclass(frozen=True)
class SardSection:
    rank_bound: int = 0
    levels: list | None = None
    bin_widths: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025, 0.0125])
    alpha_source: str = "estimated"  # "estimated" or "fixed:<value>"
    threshold_multiplier: float = 1.0
    resolution: int | None = None  # grid for the potentials (default: field resolution)


SECTIONS = {
    "field": FieldSection,
    "initial": InitialSection,
    "solver": SolverSection,
    "sweep": SweepSection,
    "yaglom": YaglomSection,
    "structure": StructureSection,
    "lagrangian": LagrangianSection,
    "sard": SardSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "sample_field"
    master_seed: int = 0
    output_dir: str | None = None
    workers: int | None = None  # None: available parallelism
    field: FieldSection = FieldSection()
    initial: InitialSection = InitialSection()
    solver: SolverSection = SolverSection()
    sweep: SweepSection = SweepSection()
    yaglom: YaglomSection = YaglomSection()
    structure: StructureSection = StructureSection()
    lagrangian: LagrangianSection = LagrangianSection()
    sard: SardSection = SardSection()


_TOP = {"experiment": "str", "master_seed": "int", "output_dir": "str|None", "workers": "int|None"}


# --- source locations ------------------------------------------------------------


def _line_of(text: str, key: str, section: str | None = None) -> int | None:
    """Best-effort 1-based line of ``key = ...`` inside ``[section]`` (or top level)."""
    current = None
    pat = re.compile(r"^\s*(?:\"([^\"]+)\"|'([^']+)'|([A-Za-z0-9_.-]+))\s*=")
    for i, raw in enumerate(text.splitlines(), 1):
        hdr = re.match(r"^\s*\[([^\[\]]+)\]\s*(#.*)?$", raw)
        if hdr:
            current = hdr.group(1).strip()
            continue
        m = pat.match(raw)
        if m:
            name = next(g for g in m.groups() if g is not None)
            if name == key and current == section:
                return i
            if section is not None and current is None and name == f"{section}.{key}":
                return i
    return None


def _section_line(text: str, section: str) -> int | None:
    for i, raw in enumerate(text.splitlines(), 1):
        if re.match(rf"^\s*\[{re.escape(section)}\]\s*(#.*)?$", raw):
            return i
    return None


def _check_duplicates(text: str) -> None:
    seen: dict[tuple, int] = {}
    current = None
    depth = 0
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0] if '"' not in raw and "'" not in raw else raw
        if depth == 0:
            hdr = re.match(r"^\s*\[([^\[\]]+)\]\s*$", line)
            if hdr:
                current = hdr.group(1).strip()
                if ("[table]", current) in seen:
                    raise ConfigError(f"duplicate table [{current}]", current, i)
                seen[("[table]", current)] = i
                continue
            m = re.match(r"^\s*([A-Za-z0-9_-]+)\s*=", line)
            if m:
                k = (current, m.group(1))
                if k in seen:
                    raise ConfigError(
                        f"duplicate key (first defined on line {seen[k]})", m.group(1), i
                    )
                seen[k] = i
        depth += line.count("[") - line.count("]") if "=" in line or depth else 0
        depth = max(depth, 0)


# --- coercion --------------------------------------------------------------------


def _coerce(value, annotation: str, key: str, line):
    ann = annotation.replace(" ", "")
    optional = "None" in ann
    base = ann.replace("|None", "").replace("None|", "")
    if value is None and optional:
        return None
    if base == "Any":
        return value
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", key, line)
        return value
    if base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key, line)
        return value
    if base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key, line)
        return float(value)
    if base == "str":
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key, line)
        return value
    if base == "list":
        if not isinstance(value, list):
            raise ConfigError(f"expected an array, got {value!r}", key, line)
        return [float(v) if isinstance(v, int) and not isinstance(v, bool) and key in _FLOAT_LISTS else v
                for v in value]
    raise ConfigError(f"unsupported type {annotation}", key, line)


_FLOAT_LISTS = {"epsilons", "radii", "bin_widths", "times", "means", "stddevs", "vector"}


def _build_section(cls, data: dict, text: str, section: str):
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown key in [{section}]", f"{section}.{key}", _line_of(text, key, section))
        kwargs[key] = _coerce(value, str(fields[key].type), f"{section}.{key}", _line_of(text, key, section))
    return cls(**kwargs)


def _validate(cfg: ExperimentConfig, text: str) -> None:
    def fail(msg, section, key):
        raise ConfigError(msg, f"{section}.{key}" if section else key,
                          _line_of(text, key, section) if text else None)

    if cfg.experiment not in EXPERIMENTS:
        fail(f"experiment must be one of {', '.join(EXPERIMENTS)}", None, "experiment")
    if not 0 <= cfg.master_seed < 2**64:
        fail("master_seed must be an unsigned 64-bit integer", None, "master_seed")
    if cfg.workers is not None and cfg.workers < 1:
        fail("workers must be >= 1", None, "workers")
    f = cfg.field
    if f.kind not in ("gaussian", "zero", "constant", "shear", "cellular"):
        fail("unknown field kind", "field", "kind")
    if f.dimension not in (2, 3):
        fail("dimension must be 2 or 3", "field", "dimension")
    if f.resolution < 2 or f.resolution & (f.resolution - 1):
        fail("resolution must be a power of two", "field", "resolution")
    if f.realizations < 1:
        fail("realizations must be >= 1", "field", "realizations")
    if f.kind == "constant" and (f.vector is None or len(f.vector) != f.dimension):
        fail("constant field needs a vector of length dimension", "field", "vector")
    if f.kind in ("shear", "cellular") and f.dimension != 2:
        fail(f"{f.kind} flow is two-dimensional", "field", "kind")
    if f.velocity_rms is not None and f.velocity_rms <= 0:
        fail("velocity_rms must be positive", "field", "velocity_rms")
    if f.modes is not None and (f.means is None and f.stddevs is None):
        fail("mode table needs means and/or stddevs", "field", "modes")
    for name in ("means", "stddevs"):
        vals = getattr(f, name)
        if vals is not None and (f.modes is None or len(vals) != len(f.modes)):
            fail(f"{name} must have one entry per mode", "field", name)
    if cfg.experiment in ("boxdim", "morse_sard") and f.kind != "gaussian":
        fail("critical-set experiments need a gaussian field", "field", "kind")
    if cfg.initial.kind not in ("single_mode", "checkerboard", "indicator_halftorus"):
        fail("unknown initial data kind", "initial", "kind")
    if cfg.initial.kind == "single_mode" and (cfg.initial.mode is None or len(cfg.initial.mode) != f.dimension):
        fail("single_mode needs a mode of length dimension", "initial", "mode")
    s = cfg.solver
    if s.epsilon < 0:
        fail("epsilon must be >= 0", "solver", "epsilon")
    if s.t_final <= 0:
        fail("t_final must be > 0", "solver", "t_final")
    if not (s.dt == "auto" or (isinstance(s.dt, (int, float)) and not isinstance(s.dt, bool) and s.dt > 0)):
        fail("dt must be 'auto' or a positive number", "solver", "dt")
    if not 0 < s.cfl_safety <= 1:
        fail("cfl_safety must lie in (0, 1]", "solver", "cfl_safety")
    eps = cfg.sweep.epsilons
    if len(eps) < 4:
        fail("at least 4 epsilons required", "sweep", "epsilons")
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        fail("epsilons must be positive and strictly decreasing", "sweep", "epsilons")
    if any(b / a > 0.5 + 1e-12 for a, b in zip(eps, eps[1:])):
        fail("consecutive epsilons must shrink by a factor of at least 2", "sweep", "epsilons")
    if any(not 0 < r < 0.5 for r in cfg.yaglom.radii):
        fail("radii must lie in (0, 1/2)", "yaglom", "radii")
    if len(cfg.structure.radii) < 4:
        fail("at least 4 radii required", "structure", "radii")
    lag = cfg.lagrangian
    if lag.noise_mode not in ("shared", "independent"):
        fail("noise_mode must be shared or independent", "lagrangian", "noise_mode")
    if lag.epsilons is not None:
        if len(lag.epsilons) < 3 or any(b >= a for a, b in zip(lag.epsilons, lag.epsilons[1:])):
            fail("at least 3 strictly decreasing epsilons required", "lagrangian", "epsilons")
    if not 0 < lag.dt <= lag.t_final:
        fail("need 0 < dt <= t_final", "lagrangian", "dt")
    if any(not 0 < t <= lag.t_final for t in lag.times) or any(b <= a for a, b in zip(lag.times, lag.times[1:])):
        fail("times must increase within (0, t_final]", "lagrangian", "times")
    src = cfg.sard.alpha_source
    if not (src == "estimated" or re.fullmatch(r"fixed:\s*[0-9.eE+-]+", src)):
        fail("alpha_source must be 'estimated' or 'fixed:<value>'", "sard", "alpha_source")
    if not 0 <= cfg.sard.rank_bound <= f.dimension - 2:
        fail("rank_bound must lie in [0, d-2]", "sard", "rank_bound")


def _to_document(data: dict) -> dict:
    """Drop None values (TOML has no null)."""
    out = {}
    for k, v in data.items():
        if isinstance(v, dict):
            out[k] = _to_document(v)
        elif v is not None:
            out[k] = v
    return out


def config_from_dict(doc: dict, text: str = "") -> ExperimentConfig:
    kwargs = {}
    for key, value in doc.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError("expected a table", key, _line_of(text, key))
            kwargs[key] = _build_section(SECTIONS[key], value, text, key)
        elif key in _TOP:
            kwargs[key] = _coerce(value, _TOP[key], key, _line_of(text, key))
        else:
            line = _line_of(text, key) or _section_line(text, key)
            raise ConfigError("unknown key", key, line)
    cfg = ExperimentConfig(**kwargs)
    _validate(cfg, text)
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a TOML document; missing keys take their defaults."""
    _check_duplicates(text)
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed document: {exc}", None, int(m.group(1)) if m else None) from exc
    return config_from_dict(doc, text)


def to_dict(cfg: ExperimentConfig) -> dict:
    return _to_document(dataclasses.asdict(cfg))


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def apply_override(doc: dict, assignment: str) -> dict:
    """Apply ``section.key=value``; the value is read as TOML, else as a bare string."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    path, raw = assignment.split("=", 1)
    path = path.strip()
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()
    parts = path.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError("override path crosses a non-table", path)
    node[parts[-1]] = value
    return doc


def derive_seed(master_seed: int, experiment: str, realization: int, role: str) -> int:
    """64-bit seed from a keyed hash of (master seed, experiment, realization, role)."""
    h = hashlib.blake2b(digest_size=8, person=b"scalarlab-seed")
    h.update(f"{master_seed}|{experiment}|{realization}|{role}".encode())
    return int.from_bytes(h.digest(), "little")
