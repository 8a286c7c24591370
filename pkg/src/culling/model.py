"""Shared value types and unit conventions.

Everything inside the package is dimensionless with hbar = m = L = 1 unless a
width ``L`` is passed explicitly.  Energies are measured from the top of the
well, so a state is bound only if its energy is negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

DEFAULT_BOX_RATIO = 10.0


class CullingError(Exception):
    """Base class for errors raised by the package."""


class ConfigError(CullingError, ValueError):
    """Invalid input parameters or configuration file."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConvergenceError(CullingError, RuntimeError):
    """A numerical procedure stopped before reaching its tolerance."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


@dataclass(frozen=True)
class WellSpec:
    """Square well of depth ``V0`` and width ``L`` centred in a hard-wall box of size ``D``."""

    V0: float
    L: float = 1.0
    D: float | None = None

    def __post_init__(self):
        if self.D is None:
            object.__setattr__(self, "D", DEFAULT_BOX_RATIO * self.L)
        if not (self.V0 >= 0 and math.isfinite(self.V0)):
            raise ConfigError(f"well depth must be finite and >= 0, got {self.V0}", field="V0")
        if not self.L > 0:
            raise ConfigError(f"well width must be > 0, got {self.L}", field="L")
        if not self.D >= 4 * self.L:
            raise ConfigError(f"box size D={self.D} must be at least 4L={4 * self.L}", field="D")

    @property
    def half_width(self):
        return 0.5 * self.L

    @property
    def half_box(self):
        return 0.5 * self.D

    def with_depth(self, V0):
        return replace(self, V0=float(V0))

    def with_box(self, D):
        return replace(self, D=float(D))

    def potential(self, x):
        """-V0 inside the well, 0 outside (works on arrays)."""
        import numpy as np

        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) <= self.half_width, -self.V0, 0.0)


@dataclass(frozen=True)
class InteractionSpec:
    """Contact coupling ``g``; optionally remembers the lengths it came from."""

    g: float
    a_s: float | None = None
    a_perp: float | None = None

    def __post_init__(self):
        if not (self.g >= 0 and math.isfinite(self.g)):
            raise ConfigError(f"only repulsive couplings are supported, got g={self.g}", field="g")

    @classmethod
    def from_scattering(cls, a_s, a_perp):
        return cls(g=g_from_scattering(a_s, a_perp), a_s=a_s, a_perp=a_perp)


@dataclass(frozen=True)
class ScheduleSpec:
    """Depth ramp V(t): ``exponential`` V0*exp(-t/tau) or ``linear`` V0 - rate*t."""

    V0: float
    shape: str = "exponential"
    tau: float | None = None
    rate: float | None = None

    def __post_init__(self):
        if self.shape == "exponential":
            if self.tau is None or not self.tau > 0:
                raise ConfigError("exponential schedule needs tau > 0", field="tau")
        elif self.shape == "linear":
            if self.rate is None or not self.rate > 0:
                raise ConfigError("linear schedule needs rate > 0", field="rate")
        else:
            raise ConfigError(f"unknown schedule shape {self.shape!r}", field="shape")
        if not self.V0 > 0:
            raise ConfigError("schedule must start from a positive depth", field="V0")

    def depth(self, t):
        if self.shape == "exponential":
            return self.V0 * math.exp(-t / self.tau)
        return max(self.V0 - self.rate * t, 0.0)

    def rate_at(self, t):
        """|dV/dt| at time t."""
        if self.shape == "exponential":
            return self.depth(t) / self.tau
        return self.rate if self.depth(t) > 0 else 0.0

    def time_to_depth(self, V):
        if self.shape == "exponential":
            return self.tau * math.log(self.V0 / V)
        return (self.V0 - V) / self.rate


def g_from_scattering(a_s, a_perp):
    """1D coupling 2 a_s / a_perp**2 of a tightly confined 3D gas (hbar = m = 1).

    The reduction only holds for a_perp >> a_s; we require a_perp >= 10 a_s.
    """
    if a_s < 0 or not a_perp > 0:
        raise ConfigError("scattering length must be >= 0 and a_perp > 0")
    if a_s == 0:
        return 0.0
    if a_perp < 10 * a_s:
        raise ConfigError(
            f"a_perp={a_perp} is not >> a_s={a_s}; the 1D coupling formula needs a_perp >= 10 a_s"
        )
    return 2.0 * a_s / a_perp**2


# --- key = value configuration files -------------------------------------

@dataclass
class RunConfig:
    """Parsed contents of a configuration file."""

    well: WellSpec = field(default_factory=lambda: WellSpec(V0=10.0))
    interaction: InteractionSpec = field(default_factory=lambda: InteractionSpec(g=1.0))
    schedule: ScheduleSpec | None = None
    grids: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)


_WELL_KEYS = {"V0": "V0", "L": "L", "D": "D"}
_SCHEDULE_KEYS = {"schedule.V0": "V0", "schedule.shape": "shape",
                  "schedule.tau": "tau", "schedule.rate": "rate"}


def parse_grid(text):
    """``start:stop:num`` (inclusive linspace) or a comma-separated list."""
    import numpy as np

    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid {text!r} must be start:stop:num")
        start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
        if num < 1:
            raise ValueError("grid needs at least one point")
        return [float(v) for v in np.linspace(start, stop, num)]
    return [float(v) for v in text.split(",") if v.strip()]


def format_grid(values):
    return ",".join(repr(float(v)) for v in values)


def _coerce(value):
    low = value.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for conv in (int, float):
        try:
            return conv(value)
        except ValueError:
            pass
    return value


def loads_config(text):
    """Parse a configuration document.

    Lines look like ``key = value``; ``#`` starts a comment.  Recognised keys:
    ``V0``, ``L``, ``D`` (well), ``g`` or ``a_s`` + ``a_perp`` (interaction),
    ``schedule.*`` (ramp), ``grid.<name>`` (scan grids).  Anything else lands
    in ``options``.
    """
    well_kw, sched_kw, inter_kw = {}, {}, {}
    grids, options = {}, {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"empty key or value in {raw.strip()!r}", lineno)
        if key in lines:
            raise ConfigError(f"duplicate key {key!r} (first on line {lines[key]})", lineno)
        lines[key] = lineno
        try:
            if key in _WELL_KEYS:
                well_kw[_WELL_KEYS[key]] = float(value)
            elif key in ("g", "a_s", "a_perp"):
                inter_kw[key] = float(value)
            elif key in _SCHEDULE_KEYS:
                name = _SCHEDULE_KEYS[key]
                sched_kw[name] = value if name == "shape" else float(value)
            elif key.startswith("grid."):
                grids[key[5:]] = parse_grid(value)
            else:
                options[key] = _coerce(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None

    def build(factory, kwargs, keys, prefix=""):
        try:
            return factory(**kwargs)
        except (ConfigError, TypeError) as exc:
            key = prefix + getattr(exc, "field", None) if getattr(exc, "field", None) else None
            line = lines.get(key) or min((lines[k] for k in keys if k in lines), default=None)
            raise ConfigError(str(exc), line) from None

    cfg = RunConfig(grids=grids, options=options)
    if well_kw:
        well_kw.setdefault("V0", 10.0)
        cfg.well = build(WellSpec, well_kw, list(_WELL_KEYS))
    if "g" in inter_kw:
        if "a_s" in inter_kw or "a_perp" in inter_kw:
            raise ConfigError("give either g or a_s/a_perp, not both", lines["g"])
        cfg.interaction = build(InteractionSpec, {"g": inter_kw["g"]}, ["g"])
    elif inter_kw:
        if set(inter_kw) != {"a_s", "a_perp"}:
            raise ConfigError("a_s and a_perp must be given together",
                              min(lines[k] for k in inter_kw))
        cfg.interaction = build(lambda **kw: InteractionSpec.from_scattering(**kw),
                                inter_kw, ["a_s", "a_perp"])
    if sched_kw:
        cfg.schedule = build(ScheduleSpec, sched_kw, list(_SCHEDULE_KEYS), prefix="schedule.")
    return cfg


def load_config(path):
    with open(path) as fh:
        return loads_config(fh.read())


def dumps_config(cfg):
    """Serialise a RunConfig; ``loads_config(dumps_config(c)) == c``."""
    out = [f"V0 = {cfg.well.V0!r}", f"L = {cfg.well.L!r}", f"D = {cfg.well.D!r}"]
    inter = cfg.interaction
    if inter.a_s is not None and inter.a_perp is not None:
        out += [f"a_s = {inter.a_s!r}", f"a_perp = {inter.a_perp!r}"]
    else:
        out.append(f"g = {inter.g!r}")
    if cfg.schedule is not None:
        for f in fields(cfg.schedule):
            val = getattr(cfg.schedule, f.name)
            if val is not None:
                out.append(f"schedule.{f.name} = {val if isinstance(val, str) else repr(val)}")
    for name, values in cfg.grids.items():
        out.append(f"grid.{name} = {format_grid(values)}")
    for key, val in cfg.options.items():
        out.append(f"{key} = {val}")
    return "\n".join(out) + "\n"
