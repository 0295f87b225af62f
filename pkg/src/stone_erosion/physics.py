"""Model parameters, ambient conditions, scenarios and simulation state."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .absorption import (
    AbsorptionLaw,
    AsymmetricParams,
    ParameterError,
    SymmetricParams,
    make_law,
)
from .domain import GHOST, INTERNAL, Grid

SECOND = 1.0
HOUR = 3600.0
DAY = 86400.0
WEEK = 7 * DAY
YEAR = 365 * DAY

__all__ = [
    "ModelParams",
    "Ambient",
    "AmbientSchedule",
    "SampleBox",
    "Scenario",
    "SimulationState",
    "ambient_humidity",
    "make_scenario",
    "initial_state",
    "SCENARIO_KINDS",
    "HOUR",
    "DAY",
    "WEEK",
    "YEAR",
]


@dataclass(frozen=True)
class ModelParams:
    # literature values
    mu: float = 8.9e-3
    rho_0: float = 2.71
    D_c: float = 1.18e-5
    K_c: float = 1.7e-3
    # marble
    n_tilde: float = 0.0063
    # fitted erosion parameters
    K_w: float = 1e-2
    K_a: float = 1e-2
    K_n: float = 1e-3
    n_max: float = 0.20
    # absorption function
    law: str = "asymmetric"
    symmetric: SymmetricParams = field(default_factory=SymmetricParams)
    asymmetric: AsymmetricParams = field(default_factory=AsymmetricParams)
    linear_slope: float = 1.0
    # porosity assigned to nodes once they leave the stone
    outside_porosity: str = "one"

    def __post_init__(self):
        for name in ("mu", "rho_0", "D_c", "n_tilde"):
            if not getattr(self, name) > 0.0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("K_c", "K_w", "K_a", "K_n"):
            if not getattr(self, name) >= 0.0:
                raise ParameterError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not (0.0 < self.n_tilde < self.n_max < 1.0):
            raise ParameterError(
                f"need 0 < n_tilde < n_max < 1, got n_tilde={self.n_tilde}, n_max={self.n_max}"
            )
        if self.law not in ("symmetric", "asymmetric", "linear"):
            raise ParameterError(f"unknown absorption law {self.law!r}")
        if self.outside_porosity not in ("one", "n_max"):
            raise ParameterError(
                f"outside_porosity must be 'one' or 'n_max', got {self.outside_porosity!r}"
            )
        if self.law == "asymmetric" and self.asymmetric.mu != self.mu:
            object.__setattr__(self, "asymmetric", dataclasses.replace(self.asymmetric, mu=self.mu))

    @property
    def growth_factor(self) -> float:
        return self.n_max / self.n_tilde

    @property
    def n_out(self) -> float:
        return 1.0 if self.outside_porosity == "one" else self.n_max

    def absorption(self) -> AbsorptionLaw:
        if self.law == "symmetric":
            return make_law("symmetric", **dataclasses.asdict(self.symmetric))
        if self.law == "asymmetric":
            return make_law("asymmetric", **dataclasses.asdict(self.asymmetric))
        return make_law("linear", slope=self.linear_slope)

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Ambient:
    """Ambient moisture E (g/cm^3, read as a volume fraction) and acid C (g/cm^3)."""

    E: float = 0.001847
    C: float = 5.5e-7

    def __post_init__(self):
        if not (self.E >= 0.0 and self.C >= 0.0):
            raise ParameterError(f"ambient values must be non-negative, got E={self.E}, C={self.C}")


@dataclass(frozen=True)
class AmbientSchedule:
    """Piecewise-constant ambient values: ``values[k]`` holds from ``times[k]`` on."""

    times: tuple = (0.0,)
    values: tuple = (Ambient(),)

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times:
            raise ParameterError("schedule needs one ambient record per breakpoint")
        if self.times[0] != 0.0 or any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ParameterError("schedule breakpoints must start at 0 and increase")

    @classmethod
    def constant(cls, ambient: Ambient) -> "AmbientSchedule":
        return cls((0.0,), (ambient,))

    def at(self, t: float) -> Ambient:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(k, 0)]

    def next_change(self, t: float):
        for tb in self.times:
            if tb > t:
                return tb
        return None


def ambient_humidity(T: float, u_R: float) -> float:
    """Saturated vapour density scaled by relative humidity, in g/cm^3.

    ``T`` in degrees Celsius, ``u_R`` as a fraction.
    """
    if not (-20.0 <= T <= 60.0):
        raise ParameterError(f"temperature {T} C outside the supported range [-20, 60]")
    if not (0.0 <= u_R <= 1.0):
        raise ParameterError(f"relative humidity {u_R} outside [0, 1]")
    return u_R * ((5.018 + 0.32321 * T + 8.1847e-3 * T**2 + 3.1243e-4 * T**3) * 1e-6)


@dataclass(frozen=True)
class SampleBox:
    """Axis-aligned specimen: a segment in 1D, a rectangle in 2D."""

    lower: tuple
    upper: tuple

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Strict interior test on an (m, dim) array of points."""
        x = np.atleast_2d(x)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return np.all((x > lo) & (x < hi), axis=1)

    def axis_crossing(self, x_out: np.ndarray, x_in: np.ndarray) -> float:
        """Fraction along x_out -> x_in at which the box boundary is crossed."""
        a = int(np.flatnonzero(x_out != x_in)[0])
        edge = self.lower[a] if x_out[a] <= self.lower[a] else self.upper[a]
        return float((edge - x_out[a]) / (x_in[a] - x_out[a]))


SCENARIO_KINDS = ("standard_1d", "standard_2d", "catastrophic_1d")


@dataclass(frozen=True)
class Scenario:
    name: str
    dim: int
    N: int
    length: float
    sample: SampleBox
    ambient: AmbientSchedule
    duration: float
    dt: float
    params: ModelParams

    def __post_init__(self):
        lo, hi = np.asarray(self.sample.lower), np.asarray(self.sample.upper)
        if len(lo) != self.dim or np.any(lo <= 0.0) or np.any(hi >= self.length) or np.any(lo >= hi):
            raise ParameterError("sample must lie strictly inside the computational domain")
        if not (self.dt > 0.0 and self.duration >= 0.0):
            raise ParameterError(f"need dt > 0 and duration >= 0, got dt={self.dt}")
        if self.N < 2:
            raise ParameterError(f"need N >= 2, got {self.N}")

    @property
    def grid(self) -> Grid:
        return Grid.over(self.dim, self.N, self.length)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


def make_scenario(kind: str, params: ModelParams | None = None, **overrides) -> Scenario:
    """Build one of the standard experiments; keyword overrides replace fields."""
    explicit_params = params is not None
    params = params or ModelParams()
    if kind == "standard_1d":
        base = dict(
            name=kind,
            dim=1,
            N=100,
            length=5.5,
            sample=SampleBox((0.25,), (5.25,)),
            ambient=AmbientSchedule.constant(Ambient(E=0.001847, C=5.5e-7)),
            duration=YEAR,
            dt=1.0,
        )
    elif kind == "standard_2d":
        base = dict(
            name=kind,
            dim=2,
            N=100,
            length=5.5,
            sample=SampleBox((0.25, 0.75), (5.25, 4.75)),
            ambient=AmbientSchedule.constant(Ambient(E=0.001847, C=5.5e-7)),
            duration=YEAR,
            dt=0.1,
        )
    elif kind == "catastrophic_1d":
        base = dict(
            name=kind,
            dim=1,
            N=100,
            length=5.5,
            sample=SampleBox((0.25,), (5.25,)),
            ambient=AmbientSchedule.constant(Ambient(E=params.n_tilde, C=5.5e-7)),
            duration=DAY,
            dt=1.0,
        )
        if not explicit_params:
            params = params.replace(law="symmetric")
    else:
        raise ParameterError(f"unknown scenario kind {kind!r}; expected one of {SCENARIO_KINDS}")
    if "ambient" in overrides and isinstance(overrides["ambient"], Ambient):
        overrides["ambient"] = AmbientSchedule.constant(overrides["ambient"])
    base["params"] = params
    base.update(overrides)
    return Scenario(**base)


@dataclass
class SimulationState:
    theta: np.ndarray
    c_a: np.ndarray
    n: np.ndarray
    t: float = 0.0

    def copy(self) -> "SimulationState":
        return SimulationState(self.theta.copy(), self.c_a.copy(), self.n.copy(), self.t)


def initial_state(scenario: Scenario):
    """Dry pristine specimen in ambient surroundings.

    Inside the sample: theta = s_R * n_tilde, c_a = 0, n = n_tilde. Every
    other node holds the ambient values and the outside porosity, except
    the initial ghost nodes, whose porosity is set so that the linear
    zero crossing of the level set lies on the sample edge.
    Returns ``(state, grid)``.
    """
    from .domain import classify

    p = scenario.params
    grid = scenario.grid
    law = p.absorption()
    amb = scenario.ambient.at(0.0)
    x = grid.coords()
    inside = scenario.sample.contains(x)
    n = np.where(inside, p.n_tilde, p.n_out)
    theta = np.where(inside, law.s_R * p.n_tilde, amb.E)
    c_a = np.where(inside, 0.0, amb.C)

    cls = classify(grid, n, p.n_max)
    nbr = grid.neighbors()
    phi_in = p.n_tilde - p.n_max
    for g in np.flatnonzero(cls.kind == GHOST):
        best = 0.0
        for j in nbr[g]:
            if j < 0 or cls.kind[j] != INTERNAL:
                continue
            frac = scenario.sample.axis_crossing(x[g], x[j])
            if frac <= 0.0:
                cand = 0.0
            elif frac >= 1.0:
                cand = p.n_out - p.n_max
            else:
                cand = -phi_in * frac / (1.0 - frac)
            best = max(best, cand)
        n[g] = p.n_max + min(best, p.n_out - p.n_max)
    return SimulationState(theta=theta, c_a=c_a, n=n, t=0.0), grid
