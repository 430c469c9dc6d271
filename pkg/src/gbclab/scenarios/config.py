"""Line-oriented scenario configuration.

Format::

    # comment
    [section]
    key = value

Sections are ``[grid]``, ``[gravity]``, ``[state]``, ``[pointer]`` and
``[run]``.  Values are ints, floats, booleans (true/false), complex numbers
(``0.6``, ``0.3+0.4j``), strings, comma-separated number lists, or
semicolon-separated lists of comma-separated integer tuples (``0,0; 1,0``).
Every key has a documented default except ``run.kind`` and the branch
amplitudes of a measurement, which must be given.
"""
from __future__ import annotations

import math
import types
import typing
from dataclasses import dataclass, field, fields, replace

from ..gravity import GravityParams

KINDS = ("simulate", "measurement", "nosignaling", "relaxation", "dilute")


class ConfigError(ValueError):
    """All problems found in one configuration text, with line numbers."""

    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = errors
        super().__init__("\n".join(f"line {n}: {m}" if n else m for n, m in errors))


def _check(fn, message):
    return {"check": fn, "message": message}


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


@dataclass(frozen=True)
class GridSection:
    d: int = field(default=1, metadata=_check(lambda v: v in (1, 2, 3), "must be 1, 2 or 3"))
    particles: int = field(default=2, metadata=_check(_positive, "must be >= 1"))
    points: int = field(default=64, metadata=_check(
        lambda v: v >= 2 and not v & (v - 1), "must be a power of two"))
    extent: float = field(default=32.0, metadata=_check(_positive, "must be > 0"))


@dataclass(frozen=True)
class GravitySection:
    kappa: float = field(default=1.0, metadata=_check(_nonneg, "must be >= 0"))
    epsilon: float = field(default=0.1, metadata=_check(
        lambda v: 0 <= v <= 1, "must lie in [0, 1]"))
    softening: float = field(default=0.0, metadata=_check(
        _nonneg, "must be >= 0 (0 selects two grid spacings)"))
    hermitian: bool = False
    self_interaction: bool = True
    weights: tuple[float, ...] = ()

    def params(self, weights=None) -> GravityParams:
        w = weights if weights is not None else (self.weights or None)
        return GravityParams(kappa=self.kappa, epsilon=self.epsilon,
                             softening=self.softening or None,
                             include_hermitian_gravity=self.hermitian,
                             self_interaction=self.self_interaction,
                             coordinate_weights=None if w is None else tuple(w))


@dataclass(frozen=True)
class StateSection:
    kind: str = field(default="two_branch", metadata=_check(
        lambda v: v in ("two_branch", "entangled", "ring_modes", "gaussians", "modes"),
        "must be two_branch, entangled, ring_modes, gaussians or modes"))
    c1: complex | None = None
    c2: complex | None = None
    sigma: float = field(default=0.8, metadata=_check(_positive, "must be > 0"))
    separation: float = field(default=8.0, metadata=_check(_positive, "must be > 0"))
    well_cap: float = field(default=4.0, metadata=_check(_positive, "must be > 0"))
    system_weight: float = field(default=0.1, metadata=_check(_nonneg, "must be >= 0"))
    # ring-mode superpositions
    modes: int = field(default=16, metadata=_check(_positive, "must be >= 1"))
    mode_max: int = field(default=3, metadata=_check(_positive, "must be >= 1"))
    phase_seed: int = 3
    start: str = field(default="uniform", metadata=_check(
        lambda v: v in ("uniform", "equilibrium"), "must be uniform or equilibrium"))
    # gaussian products
    centers: tuple[float, ...] = (-2.0, 2.0)
    momenta: tuple[float, ...] = ()
    symmetry: str = field(default="boson", metadata=_check(
        lambda v: v in ("boson", "fermion", "none"), "must be boson, fermion or none"))
    # analytic mode sets
    family: str = field(default="ring", metadata=_check(
        lambda v: v in ("ring", "oscillator"), "must be ring or oscillator"))
    occupations: tuple[int, ...] = ()
    indices: tuple[tuple[int, ...], ...] = ()
    length: float = field(default=0.0, metadata=_check(
        _nonneg, "must be >= 0 (0 selects the grid extent or 1)"))
    # static potentials
    potential: str = field(default="linear", metadata=_check(
        lambda v: v in ("linear", "sine", "sources"), "must be linear, sine or sources"))
    slope: float = 0.1
    potential_scale: float = field(default=20.0, metadata=_check(_positive, "must be > 0"))
    origin: float = 0.0
    offset: float = 1.0
    alice_amplitude: float = 3.0
    alice_center: float = 2.0
    alice_width: float = field(default=1.0, metadata=_check(_positive, "must be > 0"))


@dataclass(frozen=True)
class PointerSection:
    mass: float = field(default=10.0, metadata=_check(lambda v: v >= 10, "must be >= 10"))
    amplification: float = field(default=16.0, metadata=_check(_positive, "must be > 0"))
    coupling: float = field(default=0.95, metadata=_check(_positive, "must be > 0"))
    switch_width: float = field(default=0.5, metadata=_check(_positive, "must be > 0"))
    kick_duration: float = field(default=4.0, metadata=_check(_positive, "must be > 0"))
    sigma: float = field(default=0.9, metadata=_check(_positive, "must be > 0"))
    gap: float = field(default=0.25, metadata=_check(_nonneg, "must be >= 0"))


@dataclass(frozen=True)
class RunSection:
    kind: str | None = None
    runs: int = field(default=100, metadata=_check(_positive, "must be >= 1"))
    seed: int = field(default=1, metadata=_check(_nonneg, "must be >= 0"))
    dt: float = field(default=0.0, metadata=_check(_nonneg, "must be >= 0 (0 selects auto)"))
    dt_fraction: float = field(default=0.8, metadata=_check(
        lambda v: 0 < v < 1, "must lie in (0, 1)"))
    duration: float = field(default=20.0, metadata=_check(_positive, "must be > 0"))
    snapshot_stride: int = field(default=10, metadata=_check(_positive, "must be >= 1"))
    workers: int = field(default=1, metadata=_check(_positive, "must be >= 1"))
    chunk_size: int = field(default=250, metadata=_check(_positive, "must be >= 1"))
    output: str = "out"
    threshold: float = field(default=1e-3, metadata=_check(
        lambda v: 0 < v < 1, "must lie in (0, 1)"))
    control: bool = True
    control_runs: int = field(default=20, metadata=_check(_positive, "must be >= 1"))
    sweep: tuple[float, ...] = (1.0, 4.0, 16.0, 64.0)
    sweep_runs: int = field(default=20, metadata=_check(_nonneg, "must be >= 0"))
    sweep_duration: float = field(default=24.0, metadata=_check(_positive, "must be > 0"))
    bins: int = field(default=0, metadata=_check(_nonneg, "must be >= 0 (0 selects grid)"))
    h_cell: float = field(default=0.0, metadata=_check(
        _nonneg, "must be >= 0 (0 selects the default cell)"))
    variants: bool = True
    si_epsilon: float = field(default=1e-3, metadata=_check(
        lambda v: 0 < v <= 1, "must lie in (0, 1]"))
    si_force: float = field(default=1e-25, metadata=_check(_positive, "must be > 0"))
    si_lambda: float = field(default=1e-9, metadata=_check(_positive, "must be > 0"))
    si_density: float = field(default=1e26, metadata=_check(_positive, "must be > 0"))


SECTIONS = {"grid": GridSection, "gravity": GravitySection, "state": StateSection,
            "pointer": PointerSection, "run": RunSection}


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    grid: GridSection
    gravity: GravitySection
    state: StateSection
    pointer: PointerSection
    run: RunSection
    text: str = ""

    def with_run(self, **changes) -> "ScenarioConfig":
        return replace(self, run=replace(self.run, **changes))

    def with_section(self, name: str, **changes) -> "ScenarioConfig":
        return replace(self, **{name: replace(getattr(self, name), **changes)})

    def echo(self) -> dict:
        """Every parameter, defaults included, as plain values."""
        out = {}
        for name in SECTIONS:
            sec = getattr(self, name)
            out[name] = {f.name: _plain(getattr(sec, f.name)) for f in fields(sec)}
        return out


def _plain(v):
    if isinstance(v, complex):
        return {"re": v.real, "im": v.imag}
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _base_type(tp):
    """Reduce an annotation like ``complex | None`` to the concrete type."""
    args = [a for a in typing.get_args(tp) if a is not type(None)]
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        return _base_type(args[0])
    return tp


def _convert(raw: str, tp):
    tp = _base_type(tp)
    if tp is bool:
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true or false, got {raw!r}")
    if tp is int:
        return int(raw)
    if tp is float:
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError(f"expected a finite number, got {raw!r}")
        return v
    if tp is complex:
        v = complex(raw.replace(" ", ""))
        if not (math.isfinite(v.real) and math.isfinite(v.imag)):
            raise ValueError(f"expected a finite complex number, got {raw!r}")
        return v
    if tp is str:
        return raw
    origin, args = typing.get_origin(tp), typing.get_args(tp)
    if origin is tuple and args and typing.get_origin(args[0]) is tuple:
        return tuple(tuple(int(x) for x in part.split(",") if x.strip())
                     for part in raw.split(";") if part.strip())
    if origin is tuple:
        return tuple(args[0](x) for x in raw.split(",") if x.strip())
    raise TypeError(f"unsupported field type {tp}")


_TYPE_NAMES = {int: "an integer", float: "a number", complex: "a complex number",
               bool: "a boolean", str: "a string"}


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate; raises ConfigError listing every problem found."""
    errors: list[tuple[int, str]] = []
    values: dict[str, dict[str, object]] = {name: {} for name in SECTIONS}
    where: dict[tuple[str, str], int] = {}
    hints = {name: typing.get_type_hints(cls) for name, cls in SECTIONS.items()}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                errors.append((lineno, f"unknown section [{section}]"))
                section = None
            continue
        if "=" not in line:
            errors.append((lineno, f"expected 'key = value', got {line!r}"))
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        if section is None:
            errors.append((lineno, f"key {key!r} outside a known section"))
            continue
        if key not in hints[section]:
            errors.append((lineno, f"unknown key {section}.{key}"))
            continue
        if (section, key) in where:
            errors.append((lineno, f"duplicate key {section}.{key} "
                                   f"(first set on line {where[section, key]})"))
            continue
        where[section, key] = lineno
        tp = hints[section][key]
        try:
            value = _convert(raw, tp)
        except (ValueError, TypeError):
            name = _TYPE_NAMES.get(_base_type(tp), "a list")
            errors.append((lineno, f"{section}.{key} must be {name}, got {raw!r}"))
            continue
        meta = next(f for f in fields(SECTIONS[section]) if f.name == key).metadata
        if "check" in meta and not meta["check"](value):
            errors.append((lineno, f"{section}.{key} = {raw}: {meta['message']}"))
            continue
        values[section][key] = value

    kind = values["run"].get("kind")
    if kind is None:
        errors.append((0, "missing required key run.kind"))
    elif kind not in KINDS:
        errors.append((where["run", "kind"], f"run.kind must be one of {', '.join(KINDS)}"))
    if kind == "measurement":
        state = values["state"]
        for key in ("c1", "c2"):
            if key not in state and ("state", key) not in where:
                errors.append((0, f"missing required key state.{key} for a measurement"))
        if "c1" in state and "c2" in state:
            total = abs(state["c1"]) ** 2 + abs(state["c2"]) ** 2
            if abs(total - 1) > 1e-12:
                errors.append((where["state", "c2"],
                               f"|c1|^2 + |c2|^2 = {total:.15g}, must equal 1 within 1e-12"))
        grid = values["grid"]
        if grid.get("particles", 2) != 2:
            errors.append((where.get(("grid", "particles"), 0),
                           "a measurement needs grid.particles = 2"))
    if kind == "dilute" and values["state"].get("kind") == "modes":
        for key in ("occupations", "indices"):
            if key not in values["state"]:
                errors.append((0, f"missing required key state.{key} for a mode set"))
    if errors:
        raise ConfigError(sorted(errors))
    sections = {name: cls(**values[name]) for name, cls in SECTIONS.items()}
    return ScenarioConfig(kind=kind, text=text, **sections)


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([(0, f"cannot read {path}: {exc.strerror}")]) from exc
    return parse_config(text)
