"""Post-processing: erosion fronts, erosion rates, error norms, convergence studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import Grid, GridClassification, axis_front
from .physics import HOUR, Ambient, AmbientSchedule, ModelParams, SampleBox, Scenario, SimulationState

__all__ = [
    "FrontLog",
    "ConvergenceRow",
    "InsufficientSamplesError",
    "GridMismatchError",
    "StudyError",
    "monitored_rays",
    "front_positions",
    "erosion_slope",
    "discrete_error",
    "convergence_study",
    "ManufacturedProblem",
    "manufactured_study",
    "format_table",
    "parse_table",
    "is_saturated",
]


class InsufficientSamplesError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


class StudyError(RuntimeError):
    """A refinement level failed; ``rows`` holds the rows completed before it."""

    def __init__(self, message, rows):
        super().__init__(message)
        self.rows = rows


# --- fronts -----------------------------------------------------------------


@dataclass(frozen=True)
class Ray:
    name: str
    line: tuple
    axis: int
    side: int
    nominal: float


def monitored_rays(grid: Grid, sample: SampleBox) -> list:
    """Grid lines through the sample centre, one ray per boundary side.

    1D: left, right. 2D: left, right along the horizontal midline and
    bottom, top along the vertical one.
    """
    lo, hi = sample.lower, sample.upper
    if grid.dim == 1:
        return [Ray("left", (), 0, -1, lo[0]), Ray("right", (), 0, 1, hi[0])]
    mid = [int(round((0.5 * (lo[a] + hi[a]) - grid.origin[a]) / grid.h)) for a in range(2)]
    return [
        Ray("left", (mid[1],), 0, -1, lo[0]),
        Ray("right", (mid[1],), 0, 1, hi[0]),
        Ray("bottom", (mid[0],), 1, -1, lo[1]),
        Ray("top", (mid[0],), 1, 1, hi[1]),
    ]


def front_positions(state: SimulationState, classification: GridClassification, sample: SampleBox,
                    n_max: float) -> dict:
    """Sub-grid zero crossing of n - n_max on every monitored ray (None if absent)."""
    grid = classification.grid
    phi = state.n - n_max
    return {
        r.name: axis_front(grid, phi, classification.kind, r.line, r.axis, r.side)
        for r in monitored_rays(grid, sample)
    }


@dataclass
class FrontLog:
    """Front positions (cm) per side against time (s). Absent fronts are NaN."""

    sides: tuple
    nominal: dict
    times: list = field(default_factory=list)
    positions: dict = field(default_factory=dict)

    def __post_init__(self):
        for s in self.sides:
            self.positions.setdefault(s, [])

    @classmethod
    def for_sample(cls, grid: Grid, sample: SampleBox) -> "FrontLog":
        rays = monitored_rays(grid, sample)
        return cls(tuple(r.name for r in rays), {r.name: r.nominal for r in rays})

    def append(self, t: float, positions: dict):
        if self.times and t < self.times[-1]:
            raise ValueError("front log times must not decrease")
        self.times.append(float(t))
        for s in self.sides:
            v = positions.get(s)
            self.positions[s].append(math.nan if v is None else float(v))

    def __len__(self):
        return len(self.times)

    def position(self, side: str) -> np.ndarray:
        return np.asarray(self.positions[side])

    def erosion(self, side: str) -> np.ndarray:
        """Inward distance of the front from the nominal sample edge (cm)."""
        x = self.position(side)
        inward = 1.0 if side in ("left", "bottom") else -1.0
        return inward * (x - self.nominal[side])

    def is_monotone(self, atol: float = 0.0) -> bool:
        """Fronts never move outward (beyond ``atol``)."""
        for s in self.sides:
            e = self.erosion(s)
            e = e[np.isfinite(e)]
            if e.size > 1 and np.any(np.diff(e) < -atol):
                return False
        return True


def erosion_slope(log: FrontLog, window: tuple, side: str = "left", method: str = "origin") -> float:
    """Erosion rate in cm/h over ``window = (t0, t1)`` seconds.

    ``method="origin"``: eroded distance at the last sample in the window
    divided by its time, i.e. the mean rate since the start of the run.
    ``method="lstsq"``: least-squares slope of erosion against time over the
    samples in the window.
    """
    t = np.asarray(log.times)
    e = log.erosion(side)
    t0, t1 = window
    sel = (t >= t0 - 1e-9) & (t <= t1 + 1e-9) & np.isfinite(e)
    if method == "origin":
        if not sel.any() or t[sel][-1] <= 0.0:
            raise InsufficientSamplesError("need a sample after t=0 in the window")
        k = np.flatnonzero(sel)[-1]
        return float(e[k] / (t[k] / HOUR))
    if method == "lstsq":
        if sel.sum() < 2:
            raise InsufficientSamplesError(f"need at least 2 samples in {window}, found {int(sel.sum())}")
        th = t[sel] / HOUR
        A = np.stack([th, np.ones_like(th)], axis=1)
        coef, *_ = np.linalg.lstsq(A, e[sel], rcond=None)
        return float(coef[0])
    raise ValueError(f"unknown slope method {method!r}")


def is_saturated(state: SimulationState, classification: GridClassification, s_S: float,
                 rel: float = 0.02) -> bool:
    """Every internal node within ``rel`` of full saturation s_S."""
    ii = classification.internal
    s = state.theta[ii] / state.n[ii]
    return bool(np.all(s >= (1.0 - rel) * s_S))


# --- error norms --------------------------------------------------------------


def _shared(coarse: Grid, fine: Grid):
    if coarse.dim != fine.dim or fine.N != 2 * coarse.N or not np.isclose(2 * fine.h, coarse.h) \
            or not np.allclose(coarse.origin, fine.origin):
        raise GridMismatchError("fine grid must be a 2-refinement of the coarse grid")
    sl = (slice(None, None, 2),) * coarse.dim
    return np.arange(fine.size).reshape(fine.shape)[sl].ravel()


def discrete_error(u_coarse: np.ndarray, u_fine: np.ndarray, coarse: Grid, fine: Grid,
                   mask: np.ndarray | None = None) -> float:
    """sqrt(h^dim * sum (u_coarse - u_fine)^2) over the coarse nodes (optionally masked)."""
    idx = _shared(coarse, fine)
    d = np.asarray(u_coarse, dtype=float).ravel() - np.asarray(u_fine, dtype=float).ravel()[idx]
    if mask is not None:
        d = d[np.asarray(mask, dtype=bool).ravel()]
    return float(math.sqrt(coarse.h**coarse.dim * np.sum(d * d)))


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    dx: float
    dt: float
    err_theta: float
    order_theta: float | None
    err_c: float
    order_c: float | None


def _order(e_prev, e_cur, floor):
    if e_prev is None or e_prev <= floor or e_cur <= floor:
        return None
    return math.log2(e_prev / e_cur)


def _rows(levels, errors, floor):
    rows = []
    prev = (None, None)
    for (N, dx, dt), (et, ec) in zip(levels, errors):
        rows.append(ConvergenceRow(N, dx, dt, et, _order(prev[0], et, floor), ec, _order(prev[1], ec, floor)))
        prev = (et, ec)
    return rows


def _run_level(scenario: Scenario, horizon: float, backend):
    from .solver import Simulation

    sim = Simulation(scenario, backend=backend)
    sim.advance_to(horizon)
    return sim.state, sim.cls.kind, sim.grid


def convergence_study(scenario: Scenario, refinements: int = 5, horizon: float = HOUR,
                      backend: str | None = None, floor: float = 1e-15, workers: int = 1,
                      progress=None) -> list:
    """Successive-refinement errors at ``horizon`` with (dx, dt) halved together.

    Runs ``refinements`` grids N0 * 2**k; row k compares level k with level
    k + 1 on the coarse nodes internal in both runs, so the study yields
    ``refinements - 1`` rows. With ``workers > 1`` the levels run in a
    process pool; results do not depend on the pool size.
    """
    if refinements < 3:
        raise ValueError(f"a study needs at least 3 refinement levels, got {refinements}")
    scs = [
        scenario.replace(N=scenario.N * 2**k, dt=scenario.dt / 2**k, duration=horizon)
        for k in range(refinements)
    ]
    results = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_level, sc, horizon, backend) for sc in scs]
            for sc, fut in zip(scs, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:
                    break_exc = exc
                    break
                if progress:
                    progress(sc.N)
            else:
                break_exc = None
    else:
        break_exc = None
        for sc in scs:
            try:
                results.append(_run_level(sc, horizon, backend))
            except Exception as exc:
                break_exc = exc
                break
            if progress:
                progress(sc.N)
    levels, errors = [], []
    for k in range(1, len(results)):
        (sc_, kc, gc), (sf_, kf, gf) = results[k - 1], results[k]
        shared = _shared(gc, gf)
        mask = (kc == 1) & (kf[shared] == 1)
        errors.append(tuple(
            discrete_error(getattr(sc_, name), getattr(sf_, name), gc, gf, mask)
            for name in ("theta", "c_a")
        ))
        levels.append((scs[k - 1].N, gc.h, scs[k - 1].dt))
    rows = _rows(levels, errors, floor)
    if break_exc is not None:
        failed = scs[len(results)].N
        raise StudyError(f"level N={failed} failed: {break_exc}", rows) from break_exc
    return rows


# --- manufactured solutions -------------------------------------------------


@dataclass(frozen=True)
class ManufacturedProblem:
    """Smooth exact fields for a linear absorption law on a frozen porosity.

    theta = n~ (a0 + a1 cos(k x) e^{-t/tau}), c = c0 + c1 sin(k x + 0.3) e^{-t/tau},
    with sources and per-ghost ambient values chosen so that they solve the
    interior equations and the boundary conditions exactly.
    """

    slope: float = 1e-5
    a0: float = 0.5
    a1: float = 0.2
    c0: float = 1e-6
    c1: float = 4e-7
    k: float = math.pi / 5.0
    tau: float = 3600.0
    horizon: float = 1800.0

    def fields(self, x, t, nt):
        """theta, c and their x-derivatives (first and second) at points x."""
        e = math.exp(-t / self.tau)
        cx, sx = np.cos(self.k * x), np.sin(self.k * x)
        th = nt * (self.a0 + self.a1 * cx * e)
        th_x = -nt * self.a1 * self.k * sx * e
        th_xx = -nt * self.a1 * self.k**2 * cx * e
        th_t = -nt * self.a1 * cx * e / self.tau
        arg = self.k * x + 0.3
        c = self.c0 + self.c1 * np.sin(arg) * e
        c_x = self.c1 * self.k * np.cos(arg) * e
        c_xx = -self.c1 * self.k**2 * np.sin(arg) * e
        c_t = -self.c1 * np.sin(arg) * e / self.tau
        return th, th_x, th_xx, th_t, c, c_x, c_xx, c_t

    def params(self, base: ModelParams | None = None) -> ModelParams:
        base = base or ModelParams()
        return base.replace(law="linear", linear_slope=self.slope, K_c=0.0)

    def scenario(self, N: int, dt: float, base: ModelParams | None = None) -> Scenario:
        return Scenario(
            name="manufactured_1d",
            dim=1,
            N=N,
            length=5.5,
            sample=SampleBox((0.25,), (5.25,)),
            ambient=AmbientSchedule.constant(Ambient()),
            duration=self.horizon,
            dt=dt,
            params=self.params(base),
        )

    def forcing(self, grid: Grid, cls: GridClassification, p: ModelParams, t: float):
        """Per-node (S_theta, S_c, E, C) at time t for R = 1 (n = n~ in the stone)."""
        x = grid.coords()[:, 0]
        nt = p.n_tilde
        D = self.slope / nt  # dB/dtheta
        th, th_x, th_xx, th_t, c, c_x, c_xx, c_t = self.fields(x, t, nt)
        S_th = th_t - D * th_xx
        S_c = (th_t * c + th * c_t) - (c_x * D * th_x + c * D * th_xx) \
            - p.D_c * (th_x * c_x + th * c_xx) + p.K_c * p.K_n * p.rho_0 * (1.0 - nt) * c
        E = np.zeros(grid.size)
        C = np.zeros(grid.size)
        for g in cls.geometry:
            xb = np.array([g.x_B[0]])
            thb, thb_x, _, _, cb, cb_x, _, _ = self.fields(xb, t, nt)
            nrm = g.normal[0]
            dnB = nrm * D * thb_x[0]
            E[g.ghost] = thb[0] + dnB / p.K_w
            C[g.ghost] = cb[0] + (cb[0] * dnB + p.D_c * thb[0] * nrm * cb_x[0]) / p.K_a
        return S_th, S_c, E, C

    def initial_state(self, grid: Grid, cls: GridClassification, n: np.ndarray, p: ModelParams):
        x = grid.coords()[:, 0]
        th, *_rest = self.fields(x, 0.0, p.n_tilde)
        c = self.fields(x, 0.0, p.n_tilde)[4]
        return SimulationState(theta=th.copy(), c_a=c.copy(), n=n.copy(), t=0.0)


def _run_manufactured(mp: ManufacturedProblem, N: int, dt: float, backend=None):
    from . import kernels
    from .domain import classify
    from .physics import initial_state
    from .solver import TOL_NL, build_operator

    sc = mp.scenario(N, dt)
    p = sc.params
    state0, grid = initial_state(sc)
    cls = classify(grid, state0.n, p.n_max)
    state = mp.initial_state(grid, cls, state0.n, p)
    core = kernels.get_core(backend)
    steps = int(round(mp.horizon / dt))
    stats = np.zeros(3)
    for s in range(1, steps + 1):
        S_th, S_c, E, C = mp.forcing(grid, cls, p, s * dt)
        op = build_operator(cls, p, Ambient(), E_node=E, C_node=C, S_theta=S_th, S_c=S_c)
        done, status = core.advance(op.problem, state.theta, state.c_a, state.n, 1, dt, TOL_NL, 50, stats)
        if status != 0:
            raise RuntimeError(f"manufactured run N={N} failed at step {s}")
    state.t = steps * dt
    x = grid.coords()[:, 0]
    th, *_ = mp.fields(x, state.t, p.n_tilde)
    c = mp.fields(x, state.t, p.n_tilde)[4]
    ii = cls.internal
    h = grid.h
    return (
        math.sqrt(h * np.sum((state.theta[ii] - th[ii]) ** 2)),
        math.sqrt(h * np.sum((state.c_a[ii] - c[ii]) ** 2)),
        grid,
        stats,
    )


def manufactured_study(problem: ManufacturedProblem | None = None, N0: int = 25, dt0: float = 300.0,
                       refinements: int = 4, backend: str | None = None) -> list:
    """Errors against the exact manufactured fields under joint (dx, dt) halving."""
    if refinements < 3:
        raise ValueError(f"a study needs at least 3 refinement levels, got {refinements}")
    mp = problem or ManufacturedProblem()
    levels, errors = [], []
    for k in range(refinements):
        N, dt = N0 * 2**k, dt0 / 2**k
        et, ec, grid, _ = _run_manufactured(mp, N, dt, backend)
        levels.append((N, grid.h, dt))
        errors.append((et, ec))
    return _rows(levels, errors, 1e-300)


# --- tables ----------------------------------------------------------------

TABLE_COLUMNS = ("N", "dx", "dt", "err_theta", "order_theta", "err_c", "order_c")


def _fmt(v):
    return "-" if v is None else repr(float(v))


def format_table(rows: list, delimiter: str = "\t") -> str:
    lines = [delimiter.join(TABLE_COLUMNS)]
    for r in rows:
        lines.append(delimiter.join(
            [str(r.N)] + [_fmt(getattr(r, c)) for c in TABLE_COLUMNS[1:]]
        ))
    return "\n".join(lines) + "\n"


def parse_table(text: str, delimiter: str = "\t") -> list:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or tuple(lines[0].split(delimiter)) != TABLE_COLUMNS:
        raise ValueError("not a convergence table")
    rows = []
    for ln in lines[1:]:
        f = ln.split(delimiter)
        vals = [None if v == "-" else float(v) for v in f[1:]]
        rows.append(ConvergenceRow(int(f[0]), *vals))
    return rows
