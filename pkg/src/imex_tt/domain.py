"""Grids, run configuration and the config-document parser."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Raised for malformed or invalid configuration documents."""


class Case(enum.Enum):
    HOMOGENEOUS_FP = "HomogeneousFP"
    INHOMOGENEOUS_FP = "InhomogeneousFP"
    LANDAU_DAMPING = "LandauDamping"
    TWO_STREAM = "TwoStream"
    HEAT = "Heat"

    @classmethod
    def parse(cls, name: str) -> "Case":
        key = name.strip().replace("_", "").replace("-", "").lower()
        for case in cls:
            if case.value.lower() == key:
                return case
        raise ConfigError(f"unknown case {name!r}")

    @property
    def is_homogeneous(self) -> bool:
        return self in (Case.HOMOGENEOUS_FP, Case.HEAT)

    @property
    def has_field(self) -> bool:
        return self in (Case.LANDAU_DAMPING, Case.TWO_STREAM)


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform midpoint grid on ``[v_min, v_max]``, shared by all three directions."""

    v_min: float
    v_max: float
    nv: int

    def __post_init__(self):
        if self.nv < 1:
            raise ConfigError("nv must be a positive integer")
        if not self.v_max > self.v_min:
            raise ConfigError("v_max must exceed v_min")

    @property
    def dv(self) -> float:
        return (self.v_max - self.v_min) / self.nv

    @property
    def nodes(self) -> np.ndarray:
        k = np.arange(1, self.nv + 1)
        return self.v_min + (k - 0.5) * self.dv

    @property
    def max_abs_v(self) -> float:
        # endpoints, not nodes: conservative bound for the CFL rule
        return max(abs(self.v_min), abs(self.v_max))


@dataclass(frozen=True)
class SpatialGrid:
    """Periodic midpoint grid on ``[0, l_x]``."""

    l_x: float
    nx: int
    boundary: str = "periodic"

    def __post_init__(self):
        if self.nx < 1:
            raise ConfigError("nx must be a positive integer")
        if not self.l_x > 0:
            raise ConfigError("l_x must be positive")
        if self.boundary != "periodic":
            raise ConfigError("only periodic spatial boundaries are supported")

    @property
    def dx(self) -> float:
        return self.l_x / self.nx

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(1, self.nx + 1) - 0.5) * self.dx

    def wrap(self, j):
        return np.mod(j, self.nx)


@dataclass(frozen=True)
class SimConfig:
    eta: float
    dt: float
    t_end: float
    rank: tuple[int, int]
    v_grid: VelocityGrid
    x_grid: SpatialGrid
    case: Case
    case_params: dict[str, float] = field(default_factory=dict)
    output_dir: Path = Path("out")
    snapshot_stride: int = 1
    delta: float = 1e-5
    seed: int = 0
    phase_times: tuple[float, ...] = ()

    def __post_init__(self):
        validate_config(self)

    @property
    def nsteps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))

    def param(self, name: str, default: float | None = None) -> float:
        if name in self.case_params:
            return self.case_params[name]
        if default is None:
            raise ConfigError(f"case parameter {name!r} is required for {self.case.value}")
        return default


def validate_config(cfg: SimConfig) -> None:
    r1, r2 = cfg.rank
    nv = cfg.v_grid.nv
    if r1 < 1 or r2 < 1:
        raise ConfigError("rank entries must be positive integers")
    if r1 > nv or r2 > nv:
        raise ConfigError(f"rank exceeds Nv: rank=({r1}, {r2}), Nv={nv}")
    if cfg.eta < 0:
        raise ConfigError("eta must be non-negative")
    if not cfg.dt > 0:
        raise ConfigError("dt must be positive")
    if not cfg.t_end > 0:
        raise ConfigError("t_end must be positive")
    if cfg.dt > cfg.t_end * (1 + 1e-12):
        raise ConfigError("dt exceeds t_end")
    if cfg.snapshot_stride < 1:
        raise ConfigError("snapshot_stride must be a positive integer")
    if not 0 < cfg.delta < 1:
        raise ConfigError("delta must lie in (0, 1)")


def cfl_time_step(v_grid: VelocityGrid, x_grid: SpatialGrid, max_e: float) -> float:
    """Time step ``0.1 * min(dx / max|v1|, dv / max|E|)``.

    ``max_e == 0`` drops the field constraint.
    """
    vmax = v_grid.max_abs_v
    if vmax <= 0:
        raise ConfigError("max |v| must be positive")
    bound = x_grid.dx / vmax
    if max_e > 0:
        bound = min(bound, v_grid.dv / max_e)
    return 0.1 * bound


_REQUIRED = (
    "eta", "dt", "t_end", "r1", "r2", "nv", "v_min", "v_max",
    "nx", "l_x", "case", "output_dir", "snapshot_stride",
)


def parse_document(text: str) -> tuple[dict[str, str], dict[str, dict[str, str]]]:
    """Split a ``key = value`` document into global keys and ``[case.<name>]`` sections."""
    top: dict[str, str] = {}
    sections: dict[str, dict[str, str]] = {}
    current = top
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: unterminated section header")
            name = line[1:-1].strip()
            if not name.startswith("case.") or len(name) == len("case."):
                raise ConfigError(f"line {lineno}: section must be [case.<name>], got [{name}]")
            current = sections.setdefault(name[len("case."):].strip(), {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        key = key.lower()
        if key in current:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        current[key] = value
    return top, sections


def _float(text: str) -> float:
    # accepts plain numbers and multiples of pi such as "4*pi" or "pi"
    text = text.strip().lower()
    if text.endswith("pi"):
        coeff = text[:-2].rstrip().rstrip("*").strip()
        return (float(coeff) if coeff else 1.0) * math.pi
    return float(text)


def _num(kv: dict[str, str], key: str, conv=float):
    try:
        text = kv[key]
        if conv is float:
            return _float(text)
        return conv(text)
    except KeyError:
        raise ConfigError(f"missing required key {key!r}") from None
    except Exception as exc:
        raise ConfigError(f"invalid value for {key!r}: {kv[key]!r}") from exc


def load_config(text: str) -> SimConfig:
    top, sections = parse_document(text)
    missing = [k for k in _REQUIRED if k not in top]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")

    case = Case.parse(top["case"])
    params: dict[str, float] = {}
    for name, kv in sections.items():
        if Case.parse(name) is case:
            for key, val in kv.items():
                params[key] = _num(kv, key)

    v_grid = VelocityGrid(_num(top, "v_min"), _num(top, "v_max"), _num(top, "nv", int))
    x_grid = SpatialGrid(_num(top, "l_x"), _num(top, "nx", int))
    rank = (_num(top, "r1", int), _num(top, "r2", int))
    if rank[0] > v_grid.nv or rank[1] > v_grid.nv:
        raise ConfigError(f"rank exceeds Nv: rank={rank}, Nv={v_grid.nv}")

    if top["dt"].strip().lower() == "auto":
        from .experiments import initial_max_field
        dt = cfl_time_step(v_grid, x_grid, initial_max_field(case, params, x_grid))
    else:
        dt = _num(top, "dt")

    phase = top.get("phase_times", "")
    phase_times = tuple(float(s) for s in phase.split(",") if s.strip())

    return SimConfig(
        eta=_num(top, "eta"),
        dt=dt,
        t_end=_num(top, "t_end"),
        rank=rank,
        v_grid=v_grid,
        x_grid=x_grid,
        case=case,
        case_params=params,
        output_dir=Path(top["output_dir"]),
        snapshot_stride=_num(top, "snapshot_stride", int),
        delta=_num(top, "delta") if "delta" in top else 1e-5,
        seed=_num(top, "seed", int) if "seed" in top else 0,
        phase_times=phase_times,
    )
