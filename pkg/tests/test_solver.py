"""Implicit step: fixed points, conservation, porosity relation, front motion, cores."""

import numpy as np
import pytest
from scipy.optimize import brentq

from stone_erosion.domain import GHOST, INTERNAL, OUTSIDE, Grid, classify
from stone_erosion.physics import HOUR, Ambient, SimulationState, initial_state, make_scenario
from stone_erosion.solver import (
    AssemblyError,
    Simulation,
    SolverError,
    apply_front_motion,
    build_operator,
    div_form,
    solve_nonlinear,
    step,
)


def scenario(kind="standard_1d", law="symmetric", **kw):
    sc = make_scenario(kind, **kw)
    return sc.replace(params=sc.params.replace(law=law))


def equilibrium(kind, law, N):
    """Ambient moisture equal to the initial interior moisture, no acid."""
    sc = scenario(kind, law, N=N)
    s_R = sc.params.absorption().s_R
    return sc.replace(ambient=make_scenario(kind, ambient=Ambient(E=s_R * sc.params.n_tilde, C=0.0)).ambient)


class TestDivForm:
    def test_quadratic_constant_coefficient(self):
        g = Grid.over(1, 20, 2.0)
        x = g.coords()[:, 0]
        assert div_form(np.ones(g.size), x**2, g, 7) == pytest.approx(2.0, abs=1e-10)

    def test_constant_coefficient_factorises(self):
        g = Grid.over(2, 10, 1.0)
        w = np.random.default_rng(1).random(g.size)
        k = g.ravel((4, 6))
        nb = g.neighbors()[k]
        lap = (w[nb].sum() - 4 * w[k]) / g.h**2
        assert div_form(np.full(g.size, 3.5), w, g, k) == pytest.approx(3.5 * lap, rel=1e-12)

    def test_variable_coefficient(self):
        g = Grid(1, 20, 0.1)
        x = g.coords()[:, 0]
        assert div_form(x, x, g, 10) == pytest.approx(1.0, abs=g.h)

    def test_outside_stencil_rejected(self):
        g = Grid.over(1, 6, 1.0)
        kind = np.array([OUTSIDE, OUTSIDE, INTERNAL, INTERNAL, INTERNAL, GHOST, OUTSIDE], dtype=np.int8)
        with pytest.raises(AssemblyError):
            div_form(np.ones(7), np.ones(7), g, 2, kind)
        with pytest.raises(AssemblyError):
            div_form(np.ones(7), np.ones(7), g, 5, kind)


class TestOperator:
    @pytest.mark.parametrize("kind", ["standard_1d", "standard_2d"])
    def test_closure(self, kind):
        sc = scenario(kind, N=30)
        state, grid = initial_state(sc)
        cls = classify(grid, state.n, sc.params.n_max)
        op = build_operator(cls, sc.params, sc.ambient.at(0))
        assert op.unknown_count == op.equation_count == cls.internal.size + cls.ghost.size


class TestFixedPoint:
    @pytest.mark.parametrize("law", ["symmetric", "asymmetric"])
    @pytest.mark.parametrize("kind,N", [("standard_1d", 100), ("standard_2d", 20)])
    def test_zero_forcing_equilibrium(self, backend, kind, N, law):
        sc = equilibrium(kind, law, N)
        sim = Simulation(sc, backend=backend)
        th0, n0 = sim.state.theta.copy(), sim.state.n.copy()
        sim.advance_to(1000 * sc.dt)
        assert sim.stats.steps == 1000
        assert np.max(np.abs(sim.state.theta - th0)) <= 1e-14
        assert np.max(np.abs(sim.state.n - n0)) <= 1e-14


class TestReactionSwitchedOff:
    def test_porosity_constant(self, backend):
        sc = scenario(N=50)
        sc = sc.replace(params=sc.params.replace(K_c=0.0))
        sim = Simulation(sc, backend=backend)
        n0 = sim.state.n.copy()
        sim.advance_to(500.0)
        assert np.array_equal(sim.state.n, n0)
        assert sim.state.theta[sim.cls.internal].max() > n0[sim.cls.internal].max() * 0.227


class TestPorosityRelation:
    def test_matches_scalar_root_finder(self):
        sc = scenario("catastrophic_1d")
        sc = sc.replace(ambient=make_scenario("standard_1d", ambient=Ambient(E=0.0063, C=1e-3)).ambient)
        sim = Simulation(sc)
        sim.advance_to(HOUR)
        old = sim.state.copy()
        op = build_operator(sim.cls, sc.params, sc.ambient.at(0))
        new, its, res = solve_nonlinear(op, old, old, sc.dt)
        p = sc.params
        k = sc.dt * p.K_c
        ii = sim.cls.internal
        assert new.c_a[ii].max() > 0.0
        for i in ii:
            c = new.c_a[i]
            root = brentq(lambda x: x - old.n[i] - k * c * (1.0 - x), 0.0, 1.0, xtol=1e-17, rtol=1e-15)
            assert abs(new.n[i] - root) <= 1e-12


def direct_linear_theta(cls, params, E, old_theta, n, dt, slope):
    """Dense assembly of the moisture step for B(s) = slope * s."""
    grid = cls.grid
    act = np.flatnonzero(cls.kind != OUTSIDE)
    row = {k: r for r, k in enumerate(act)}
    pidx = cls.porosity_index()
    npor = n[pidx]
    R = (npor / params.n_tilde) ** 2
    nb = grid.neighbors()
    A = np.zeros((act.size, act.size))
    b = np.zeros(act.size)
    for i in cls.internal:
        r = row[i]
        A[r, r] += 1.0
        b[r] = old_theta[i]
        for j in nb[i]:
            w = dt * (R[i] + R[j]) / (2 * grid.h**2) * slope
            A[r, row[j]] -= w / npor[j]
            A[r, r] += w / npor[i]
    for geom in cls.geometry:
        r, g = row[geom.ghost], geom.ghost
        for p, a, om in zip(geom.stencil, geom.alpha, geom.omega):
            A[r, row[p]] += R[g] * om * slope / npor[p] + params.K_w * a
        b[r] = params.K_w * E
    theta = old_theta.copy()
    theta[act] = np.linalg.solve(A, b)
    return theta


class TestLinearLaw:
    @pytest.mark.parametrize("kind,N", [("standard_1d", 100), ("standard_2d", 16)])
    def test_direct_solution_in_two_iterations(self, kind, N):
        sc = scenario(kind, "linear", N=N)
        p = sc.params.replace(K_c=0.0, linear_slope=1e-5)
        state, grid = initial_state(sc.replace(params=p))
        cls = classify(grid, state.n, p.n_max)
        amb = sc.ambient.at(0)
        op = build_operator(cls, p, amb)
        dt = 60.0
        new, its, res = solve_nonlinear(op, state, state, dt)
        assert its <= 2
        ref = direct_linear_theta(cls, p, amb.E, state.theta, state.n, dt, 1e-5)
        act = cls.kind != OUTSIDE
        assert np.max(np.abs(new.theta[act] - ref[act])) <= 1e-12 * np.abs(ref[act]).max()


class TestConservation:
    @pytest.mark.parametrize("law", ["symmetric", "asymmetric"])
    @pytest.mark.parametrize("kind,N", [("standard_1d", 100), ("standard_2d", 24)])
    def test_closed_system(self, backend, kind, N, law):
        """No exchange and no reaction: total interior moisture is constant."""
        # short steps keep the bump away from the boundary over 1000 steps
        sc = scenario(kind, law, N=N, dt=0.01)
        p = sc.params.replace(K_w=0.0, K_a=0.0, K_c=0.0)
        sc = sc.replace(params=p)
        state, grid = initial_state(sc)
        x = grid.coords()
        centre = 0.5 * (np.asarray(sc.sample.lower) + np.asarray(sc.sample.upper))
        r2 = np.sum((x - centre) ** 2, axis=1)
        # uniform background above s_R keeps the zero-flux ghost rows non-degenerate
        s = 0.4 + 0.4 * np.exp(-r2 / 0.2**2)
        cls = classify(grid, state.n, p.n_max)
        active = cls.kind != OUTSIDE
        state.theta[active] = (s * state.n[cls.porosity_index()])[active]
        sim = Simulation(sc, backend=backend, state=state)
        ii = sim.cls.internal
        total0 = sim.state.theta[ii].sum()
        sim.advance_to(1000 * sc.dt)
        assert sim.stats.steps == 1000
        assert not np.allclose(sim.state.theta, state.theta, rtol=1e-6, atol=0)
        assert abs(sim.state.theta[ii].sum() - total0) <= 1e-10 * total0


class TestInvariants:
    def test_monotone_porosity_and_signs(self):
        sc = scenario("catastrophic_1d")
        sc = sc.replace(ambient=make_scenario("catastrophic_1d", ambient=Ambient(E=0.0063, C=1e-3)).ambient)
        sim = Simulation(sc)
        prev = sim.state.n.copy()
        for k in range(1, 13):
            sim.advance_to(k * 600.0)
            ii = sim.cls.internal
            assert np.all(sim.state.n >= prev)
            assert np.all(sim.state.theta >= 0.0) and np.all(sim.state.c_a >= 0.0)
            assert np.all(sim.state.theta[ii] <= 0.884 * sim.state.n[ii] + 1e-12)
            prev = sim.state.n.copy()

    def test_1d_symmetry(self):
        sc = scenario("catastrophic_1d")
        sim = Simulation(sc)
        sim.advance_to(2 * HOUR)
        for f in (sim.state.theta, sim.state.c_a, sim.state.n):
            assert np.max(np.abs(f - f[::-1])) <= 1e-12 * np.abs(f).max()

    def test_iteration_bound(self):
        sc = scenario()
        state, grid = initial_state(sc)
        cls = classify(grid, state.n, sc.params.n_max)
        _, _, report = step(state, cls, sc.params, sc.ambient.at(0), sc.dt)
        assert report.converged and report.iterations <= 50
        assert report.substeps == 1


class TestCores:
    @pytest.mark.skipif("compiled" not in __import__("stone_erosion").kernels.available(),
                        reason="compiled core not built")
    @pytest.mark.parametrize("kind,N,law", [("standard_1d", 100, "asymmetric"), ("catastrophic_1d", 100, "symmetric"),
                                            ("standard_2d", 20, "asymmetric")])
    def test_compiled_matches_python(self, kind, N, law):
        sc = scenario(kind, law, N=N)
        a, b = Simulation(sc, backend="compiled"), Simulation(sc, backend="python")
        for sim in (a, b):
            sim.advance_to(200 * sc.dt)
        for f, g in [(a.state.theta, b.state.theta), (a.state.c_a, b.state.c_a), (a.state.n, b.state.n)]:
            assert np.max(np.abs(f - g)) <= 1e-10 * np.abs(g).max()

    def test_environment_selects_python(self, monkeypatch):
        from stone_erosion import kernels

        monkeypatch.setenv(kernels.ENV_PURE, "1")
        assert kernels.get_core().IMPLEMENTATION == "python"
        with pytest.raises(ValueError):
            kernels.get_core("fortran")


class TestTimeStepControl:
    def test_halving_recovers(self, backend):
        """A step too large for the iteration budget is retried with smaller dt."""
        sc = scenario("catastrophic_1d", dt=3600.0)
        sim = Simulation(sc, backend=backend, max_iter=3)
        sim.advance_to(2 * 3600.0)
        assert sim.stats.halvings > 0
        assert sim.t == 7200.0
        ref = Simulation(sc.replace(dt=3600.0 / 2**sim.stats.halvings), backend=backend)
        ref.advance_to(7200.0)
        assert sim.state.theta == pytest.approx(ref.state.theta, rel=0.2)

    def test_hard_failure(self):
        sc = scenario("catastrophic_1d")
        state, grid = initial_state(sc)
        cls = classify(grid, state.n, sc.params.n_max)
        with pytest.raises(SolverError):
            step(state, cls, sc.params, sc.ambient.at(0), sc.dt, max_iter=0)

    def test_lands_on_sample_times(self, backend):
        sc = scenario(N=40)
        sim = Simulation(sc, backend=backend)
        sim.advance_to(10.25)
        assert sim.t == 10.25


class TestFrontMotion:
    def test_no_crossing_is_identity(self):
        sc = scenario()
        state, grid = initial_state(sc)
        cls = classify(grid, state.n, sc.params.n_max)
        new, new_cls, conv = apply_front_motion(state, cls, sc.params, sc.ambient.at(0))
        assert conv == () and new_cls is cls and new is state

    def test_left_front_advances_one_node(self):
        sc = scenario()
        p = sc.params
        state, grid = initial_state(sc)
        cls = classify(grid, state.n, p.n_max)
        first = int(cls.internal[0])
        old_ghost = int(cls.ghost[0])
        state.n[first] = p.n_max
        amb = sc.ambient.at(0)
        new, new_cls, conv = apply_front_motion(state, cls, p, amb)
        assert conv == (first,)
        assert new_cls.internal[0] == first + 1
        assert new_cls.kind[first] == GHOST and new_cls.kind[old_ghost] == OUTSIDE
        assert new.theta[first] == amb.E and new.c_a[first] == amb.C and new.n[first] == p.n_out
        assert new.n[old_ghost] == p.n_out
        assert new_cls.internal[-1] == cls.internal[-1]
