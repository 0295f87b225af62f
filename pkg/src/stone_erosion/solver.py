"""Implicit time stepping of the coupled moisture / acid / porosity system.

The per-step nonlinear solve lives in a stepping core (compiled when the
extension is built, pure Python otherwise; see :mod:`stone_erosion.kernels`).
This module assembles the core's problem arrays from a grid classification,
handles front motion and time-step control, and exposes the discrete
operator for inspection and testing.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import _core_py, kernels
from .domain import GHOST, INTERNAL, OUTSIDE, FullyErodedError, Grid, GridClassification, classify
from .physics import Ambient, ModelParams, Scenario, SimulationState, initial_state

__all__ = [
    "StepReport",
    "DiscreteOperator",
    "SolverError",
    "AssemblyError",
    "div_form",
    "build_operator",
    "solve_nonlinear",
    "step",
    "apply_front_motion",
    "Simulation",
]

TOL_NL = 1e-10
MAX_ITER = 50
MAX_HALVINGS = 10
RESTORE_AFTER = 100


class SolverError(RuntimeError):
    """Nonlinear solve failed even at the smallest allowed time step."""


class AssemblyError(RuntimeError):
    """An interior stencil reached an outside node."""


@dataclass
class StepReport:
    iterations: int
    residual: float
    converted: tuple = ()
    wall_time: float = 0.0
    dt: float = 0.0
    substeps: int = 1

    @property
    def converged(self) -> bool:
        return self.residual <= TOL_NL


def div_form(r: np.ndarray, w: np.ndarray, grid: Grid, k: int, kind: np.ndarray | None = None) -> float:
    """Face-averaged discrete divergence of r * grad(w) at node ``k``, summed over axes."""
    nbr = grid.neighbors()[k]
    if np.any(nbr < 0):
        raise AssemblyError(f"node {k} lies on the grid edge")
    if kind is not None:
        if kind[k] != INTERNAL:
            raise AssemblyError(f"node {k} is not internal")
        if np.any(kind[nbr] == OUTSIDE):
            raise AssemblyError(f"stencil of node {k} touches an outside node")
    total = 0.0
    for j in nbr:
        total += (r[k] + r[j]) * (w[j] - w[k])
    return total / (2.0 * grid.h * grid.h)


@dataclass
class DiscreteOperator:
    """Implicit-step equations for one classification, in core-ready arrays."""

    classification: GridClassification
    params: ModelParams
    problem: _core_py.Problem
    E_node: np.ndarray
    C_node: np.ndarray

    @property
    def unknown_count(self) -> int:
        c = self.classification
        return c.internal.size + c.ghost.size

    @property
    def equation_count(self) -> int:
        # one interior equation per internal node, one boundary equation per ghost
        return self.problem.internal.size + self.problem.ghost.size

    def residuals(self, new: SimulationState, old: SimulationState, dt: float):
        """Scaled max-norm residuals (theta, c_a, n) of the step old -> new."""
        return _core_py.residuals(
            self.problem, new.theta, new.c_a, new.n, old.theta, old.c_a, old.n, dt
        )


def _node_values(value, size: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(size, float(arr))
    if arr.size != size:
        raise ValueError(f"per-node array has {arr.size} entries, grid has {size}")
    return arr.ravel().copy()


def build_operator(
    classification: GridClassification,
    params: ModelParams,
    ambient: Ambient,
    *,
    E_node=None,
    C_node=None,
    S_theta=None,
    S_c=None,
) -> DiscreteOperator:
    """Assemble the step equations. Per-node ambient and source arrays are optional."""
    cls = classification
    grid = cls.grid
    size = grid.size
    nbr = grid.neighbors()
    inner = nbr[cls.internal]
    if np.any(inner < 0) or np.any(cls.kind[inner] == OUTSIDE):
        raise AssemblyError("an interior stencil touches an outside node")
    E = _node_values(ambient.E if E_node is None else E_node, size)
    C = _node_values(ambient.C if C_node is None else C_node, size)
    ptr, nodes, alpha, omega, _ = cls.ghost_csr()
    law = params.absorption()
    pb = _core_py.Problem(
        kind=cls.kind,
        nbr=np.where(nbr < 0, 0, nbr),
        pidx=cls.porosity_index(),
        ghost=cls.ghost,
        g_ptr=ptr,
        g_nodes=nodes,
        g_alpha=alpha,
        g_omega=omega,
        E_node=E,
        C_node=C,
        S_theta=_node_values(0.0 if S_theta is None else S_theta, size),
        S_c=_node_values(0.0 if S_c is None else S_c, size),
        law_id=law.kernel_id,
        law_params=law.kernel_params(),
        n_tilde=params.n_tilde,
        D_c=params.D_c,
        K_c=params.K_c,
        K_n=params.K_n,
        rho_0=params.rho_0,
        K_w=params.K_w,
        K_a=params.K_a,
        h=grid.h,
        n_max=params.n_max,
    )
    return DiscreteOperator(cls, params, pb, E, C)


def solve_nonlinear(
    operator: DiscreteOperator,
    guess: SimulationState,
    old: SimulationState,
    dt: float,
    tol: float = TOL_NL,
    max_iter: int = MAX_ITER,
):
    """Solve one implicit step from ``old`` starting at ``guess``.

    Returns ``(state, iterations, residual)``; raises :class:`SolverError`
    if the outer iteration does not reach ``tol``.
    """
    new = guess.copy()
    its, res, ok = _core_py.step(
        operator.problem, new.theta, new.c_a, new.n, old.theta, old.c_a, old.n, dt, tol, max_iter
    )
    if not ok:
        raise SolverError(f"nonlinear solve stopped at residual {res:.3e} after {its} iterations")
    new.t = old.t + dt
    return new, its, res


def _pin_outside(state: SimulationState, cls: GridClassification, op: DiscreteOperator, n_out: float):
    out = cls.outside
    state.theta[out] = op.E_node[out]
    state.c_a[out] = op.C_node[out]
    state.n[out] = n_out


def apply_front_motion(
    state: SimulationState,
    classification: GridClassification,
    params: ModelParams,
    ambient: Ambient | None = None,
    *,
    E_node=None,
    C_node=None,
):
    """Move internal nodes with n >= n_max out of the stone and reclassify.

    Converted nodes take the ambient values and the outside porosity.
    Returns ``(state, classification, converted)``; the classification is
    returned unchanged when nothing converts. Raises
    :class:`~stone_erosion.domain.FullyErodedError` when no internal node
    is left.
    """
    cls = classification
    ii = cls.internal
    converted = ii[state.n[ii] >= params.n_max]
    if converted.size == 0:
        return state, cls, ()
    ambient = ambient or Ambient()
    size = cls.grid.size
    E = _node_values(ambient.E if E_node is None else E_node, size)
    C = _node_values(ambient.C if C_node is None else C_node, size)
    new = state.copy()
    new.theta[converted] = E[converted]
    new.c_a[converted] = C[converted]
    new.n[converted] = params.n_out
    new_cls = classify(cls.grid, new.n, params.n_max)
    # nodes that dropped to outside take ambient values
    gone = np.flatnonzero((new_cls.kind == OUTSIDE) & (cls.kind != OUTSIDE))
    new.theta[gone] = E[gone]
    new.c_a[gone] = C[gone]
    new.n[gone] = np.maximum(new.n[gone], params.n_out)
    return new, new_cls, tuple(int(k) for k in converted)


def step(
    state: SimulationState,
    classification: GridClassification,
    params: ModelParams,
    ambient: Ambient,
    dt: float,
    tol: float = TOL_NL,
    max_iter: int = MAX_ITER,
):
    """One implicit step with front motion.

    Returns ``(state, classification, report)``. A failed nonlinear solve
    is retried with dt halved (up to 10 halvings, taking 2**k substeps).
    """
    t0 = _time.perf_counter()
    op = build_operator(classification, params, ambient)
    for halvings in range(MAX_HALVINGS + 1):
        sub = 2**halvings
        h_dt = dt / sub
        cur = state.copy()
        total_its, res, ok = 0, 0.0, True
        cls = classification
        converted = []
        for _ in range(sub):
            try:
                nxt, its, res = solve_nonlinear(op, cur, cur, h_dt, tol, max_iter)
            except SolverError:
                ok = False
                break
            total_its += its
            nxt.t = cur.t + h_dt
            nxt, new_cls, conv = apply_front_motion(nxt, cls, params, ambient)
            if conv:
                converted.extend(conv)
                cls = new_cls
                op = build_operator(cls, params, ambient)
            cur = nxt
        if ok:
            cur.t = state.t + dt
            report = StepReport(
                total_its, res, tuple(converted), _time.perf_counter() - t0, h_dt, sub
            )
            return cur, cls, report
        op = build_operator(classification, params, ambient)
    raise SolverError(f"step failed after {MAX_HALVINGS} halvings of dt={dt}")


@dataclass
class RunStats:
    steps: int = 0
    iterations: int = 0
    max_iterations: int = 0
    last_residual: float = 0.0
    halvings: int = 0
    conversions: list = field(default_factory=list)


class Simulation:
    """Time integration of a scenario with front motion and dt control.

    Time is tracked on an integer tick lattice of dt / 2**10 so that sample
    times are hit exactly over long runs.
    """

    def __init__(
        self,
        scenario: Scenario,
        *,
        backend: str | None = None,
        tol: float = TOL_NL,
        max_iter: int = MAX_ITER,
        state: SimulationState | None = None,
        E_node=None,
        C_node=None,
        S_theta=None,
        S_c=None,
    ):
        self.scenario = scenario
        self.params = scenario.params
        self.core = kernels.get_core(backend)
        self.tol, self.max_iter = tol, max_iter
        if state is None:
            state, _ = initial_state(scenario)
        self.state = state.copy()
        self.grid = scenario.grid
        self.cls = classify(self.grid, self.state.n, self.params.n_max)
        self._overrides = dict(E_node=E_node, C_node=C_node, S_theta=S_theta, S_c=S_c)
        self.tick = scenario.dt / 2**MAX_HALVINGS
        self.ticks = int(round(self.state.t / self.tick))
        self.stats = RunStats()
        self._level = 0
        self._since_halving = 0
        self._rebuild()

    @property
    def t(self) -> float:
        return self.ticks * self.tick

    def _ambient(self) -> Ambient:
        return self.scenario.ambient.at(self.t)

    def _rebuild(self):
        self.op = build_operator(self.cls, self.params, self._ambient(), **self._overrides)
        _pin_outside(self.state, self.cls, self.op, self.params.n_out)

    def _advance_chunk(self, nsteps: int, level: int):
        dt = self.scenario.dt / 2**level
        stats = np.zeros(3)
        done, status = self.core.advance(
            self.op.problem, self.state.theta, self.state.c_a, self.state.n,
            nsteps, dt, self.tol, self.max_iter, stats,
        )
        self.ticks += done * 2 ** (MAX_HALVINGS - level)
        self.state.t = self.t
        self.stats.steps += done
        self.stats.iterations += int(stats[0])
        self.stats.max_iterations = max(self.stats.max_iterations, int(stats[2]))
        if done:
            self.stats.last_residual = float(stats[1])
        return done, status

    def advance_to(self, t_end: float, on_conversion=None):
        """Integrate up to ``t_end`` (rounded to the tick lattice)."""
        end = int(round(t_end / self.tick))
        while self.ticks < end:
            change = self.scenario.ambient.next_change(self.t)
            stop = end if change is None else min(end, int(round(change / self.tick)))
            if self._level and self._since_halving >= RESTORE_AFTER:
                if self.ticks % 2 ** (MAX_HALVINGS - self._level + 1) == 0:
                    self._level -= 1
                    self._since_halving = 0
            level = self._level
            unit = 2 ** (MAX_HALVINGS - level)
            # temporary refinement so that the step lands on the target tick
            while unit > 1 and (self.ticks % unit or stop - self.ticks < unit):
                unit //= 2
                level += 1
            nsteps = (stop - self.ticks) // unit
            if level > self._level:
                nsteps = 1
            elif level:
                nsteps = min(nsteps, max(RESTORE_AFTER - self._since_halving, 1))
            done, status = self._advance_chunk(nsteps, level)
            if self._level:
                self._since_halving += done
            if status == _core_py.FAILED:
                if level >= MAX_HALVINGS:
                    raise SolverError(
                        f"nonlinear solve failed at t={self.t:.6g} s with dt reduced {MAX_HALVINGS} times"
                    )
                self._level = level + 1
                self._since_halving = 0
                self.stats.halvings += 1
            elif status == _core_py.MOVED:
                self._move_front(on_conversion)
            if change is not None and self.ticks >= int(round(change / self.tick)):
                self._rebuild()
        return self.state

    def _move_front(self, on_conversion=None):
        o = self._overrides
        state, cls, conv = apply_front_motion(
            self.state, self.cls, self.params, self._ambient(), E_node=o["E_node"], C_node=o["C_node"]
        )
        self.state, self.cls = state, cls
        self.stats.conversions.append((self.t, conv))
        self._rebuild()
        if on_conversion is not None:
            on_conversion(self)

    def run(self, t_end: float | None = None, sample_every: float | None = None, callback=None):
        """Integrate to ``t_end``; call ``callback(sim)`` at t=0 and every ``sample_every`` s."""
        t_end = self.scenario.duration if t_end is None else t_end
        if callback is not None:
            callback(self)
        if not sample_every:
            self.advance_to(t_end)
            if callback is not None:
                callback(self)
            return self.state
        k = int(np.floor(self.t / sample_every + 1e-9)) + 1
        while self.t < t_end - 0.5 * self.tick:
            target = min(k * sample_every, t_end)
            self.advance_to(target)
            if callback is not None:
                callback(self)
            k += 1
        return self.state
