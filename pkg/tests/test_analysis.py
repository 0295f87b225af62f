"""Front tracking, erosion slopes, error norms and convergence tables."""

import math

import numpy as np
import pytest

from stone_erosion.analysis import (
    ConvergenceRow,
    FrontLog,
    GridMismatchError,
    InsufficientSamplesError,
    ManufacturedProblem,
    convergence_study,
    discrete_error,
    erosion_slope,
    format_table,
    front_positions,
    manufactured_study,
    parse_table,
)
from stone_erosion.domain import Grid, classify
from stone_erosion.physics import HOUR, Ambient, initial_state, make_scenario


def synthetic_log(rate_cm_per_h, times_h, offset=0.0):
    log = FrontLog(("left", "right"), {"left": 0.25, "right": 5.25})
    for t in times_h:
        e = offset + rate_cm_per_h * t
        log.append(t * HOUR, {"left": 0.25 + e, "right": 5.25 - e})
    return log


class TestFrontPositions:
    def test_pristine_1d(self):
        sc = make_scenario("standard_1d")
        state, grid = initial_state(sc)
        cls = classify(grid, state.n, sc.params.n_max)
        pos = front_positions(state, cls, sc.sample, sc.params.n_max)
        assert pos["left"] == pytest.approx(0.25, abs=1e-12)
        assert pos["right"] == pytest.approx(5.25, abs=1e-12)

    def test_pristine_2d(self):
        sc = make_scenario("standard_2d", N=50)
        state, grid = initial_state(sc)
        cls = classify(grid, state.n, sc.params.n_max)
        pos = front_positions(state, cls, sc.sample, sc.params.n_max)
        assert pos["left"] == pytest.approx(0.25, abs=1e-12)
        assert pos["right"] == pytest.approx(5.25, abs=1e-12)
        # these edges sit 0.18 h from an internal node; ghost porosity capped at 1 limits placement
        assert pos["bottom"] == pytest.approx(0.75, abs=0.02 * grid.h)
        assert pos["top"] == pytest.approx(4.75, abs=0.02 * grid.h)

    def test_threshold_at_node(self):
        sc = make_scenario("standard_1d")
        p = sc.params
        state, grid = initial_state(sc)
        k = 10
        state.n[:k] = 1.0
        state.n[k] = p.n_max
        cls = classify(grid, state.n, p.n_max)
        pos = front_positions(state, cls, sc.sample, p.n_max)
        assert pos["left"] == pytest.approx(grid.h * k, abs=1e-14)

    def test_absent_front(self):
        sc = make_scenario("standard_1d")
        p = sc.params
        state, grid = initial_state(sc)
        state.n[:] = p.n_tilde
        cls = classify(grid, state.n, p.n_max)
        pos = front_positions(state, cls, sc.sample, p.n_max)
        assert pos["left"] is None and pos["right"] is None


class TestFrontLog:
    def test_erosion_is_inward(self):
        log = synthetic_log(0.01, [0, 1, 2])
        assert log.erosion("left") == pytest.approx([0, 0.01, 0.02])
        assert log.erosion("right") == pytest.approx([0, 0.01, 0.02])
        assert log.is_monotone()

    def test_outward_motion_detected(self):
        log = synthetic_log(-0.01, [0, 1])
        assert not log.is_monotone()

    def test_times_must_not_decrease(self):
        log = synthetic_log(0.0, [1.0])
        with pytest.raises(ValueError):
            log.append(0.0, {})

    def test_absent_recorded_as_nan(self):
        log = FrontLog(("left",), {"left": 0.25})
        log.append(0.0, {"left": None})
        assert math.isnan(log.position("left")[0])


class TestErosionSlope:
    def test_stationary(self):
        log = synthetic_log(0.0, [0, 6, 12, 18, 24])
        for method in ("origin", "lstsq"):
            assert erosion_slope(log, (6 * HOUR, 24 * HOUR), method=method) == 0.0

    def test_linear_motion(self):
        log = synthetic_log(2e-3, [0, 6, 12, 18, 24])
        assert erosion_slope(log, (6 * HOUR, 24 * HOUR), method="lstsq") == pytest.approx(2e-3, rel=1e-12)
        assert erosion_slope(log, (6 * HOUR, 24 * HOUR), method="origin") == pytest.approx(2e-3, rel=1e-12)

    def test_methods_differ_with_offset(self):
        """An early jump shows in the mean rate but not in the fitted slope."""
        log = synthetic_log(1e-4, [6, 12, 18, 24], offset=0.02)
        assert erosion_slope(log, (6 * HOUR, 24 * HOUR), method="lstsq") == pytest.approx(1e-4, rel=1e-10)
        assert erosion_slope(log, (6 * HOUR, 24 * HOUR), method="origin") == pytest.approx(0.0224 / 24, rel=1e-12)

    def test_insufficient_samples(self):
        log = synthetic_log(1e-3, [0, 24])
        with pytest.raises(InsufficientSamplesError):
            erosion_slope(log, (6 * HOUR, 12 * HOUR), method="lstsq")
        with pytest.raises(InsufficientSamplesError):
            erosion_slope(log, (6 * HOUR, 12 * HOUR), method="origin")

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            erosion_slope(synthetic_log(0.0, [1, 2]), (0, 3 * HOUR), method="median")


class TestDiscreteError:
    def test_identical(self):
        gc, gf = Grid.over(1, 10, 1.0), Grid.over(1, 20, 1.0)
        u = np.sin(gf.coords()[:, 0])
        assert discrete_error(u[::2], u, gc, gf) == 0.0

    def test_constant_offset(self):
        gc, gf = Grid.over(2, 8, 2.0), Grid.over(2, 16, 2.0)
        uf = np.random.default_rng(3).random(gf.size)
        uc = uf.reshape(gf.shape)[::2, ::2].ravel() + 1e-3
        assert discrete_error(uc, uf, gc, gf) == pytest.approx(math.sqrt(gc.h**2 * gc.size) * 1e-3, rel=1e-12)

    def test_sign_symmetric(self):
        gc, gf = Grid.over(1, 10, 1.0), Grid.over(1, 20, 1.0)
        uf = np.zeros(gf.size)
        a, b = np.linspace(0, 1, gc.size), -np.linspace(0, 1, gc.size)
        assert discrete_error(a, uf, gc, gf) == discrete_error(b, uf, gc, gf)

    def test_mask(self):
        gc, gf = Grid.over(1, 4, 1.0), Grid.over(1, 8, 1.0)
        uc = np.array([5.0, 0, 0, 0, 5.0])
        mask = np.array([False, True, True, True, False])
        assert discrete_error(uc, np.zeros(gf.size), gc, gf, mask) == 0.0

    def test_not_nested(self):
        with pytest.raises(GridMismatchError):
            discrete_error(np.zeros(11), np.zeros(31), Grid.over(1, 10, 1.0), Grid.over(1, 30, 1.0))


class TestStudies:
    def test_fixed_point_has_no_order(self):
        sc = make_scenario("standard_1d", N=20, dt=4.0)
        s_R = sc.params.absorption().s_R
        sc = sc.replace(ambient=make_scenario("standard_1d", ambient=Ambient(E=s_R * sc.params.n_tilde, C=0.0)).ambient)
        rows = convergence_study(sc, refinements=3, horizon=40.0)
        assert len(rows) == 2
        for r in rows:
            assert r.err_theta <= 1e-15 and r.err_c == 0.0
            assert r.order_theta is None and r.order_c is None

    def test_requires_three_levels(self):
        with pytest.raises(ValueError):
            convergence_study(make_scenario("standard_1d"), refinements=2)

    def test_workers_do_not_change_results(self):
        sc = make_scenario("catastrophic_1d", N=20, dt=8.0)
        serial = convergence_study(sc, refinements=3, horizon=160.0)
        pooled = convergence_study(sc, refinements=3, horizon=160.0, workers=2)
        assert serial == pooled

    def test_manufactured_three_levels(self):
        rows = manufactured_study(refinements=3)
        orders = [r.order_theta for r in rows[1:]] + [r.order_c for r in rows[1:]]
        assert all(0.9 <= o <= 1.1 for o in orders)

    def test_manufactured_model_is_linear_and_unreactive(self):
        mp = ManufacturedProblem()
        sc = mp.scenario(50, 150.0)
        assert sc.params.law == "linear" and sc.params.K_c == 0.0


class TestTable:
    def test_round_trip(self):
        rows = [
            ConvergenceRow(100, 0.055, 1.0, 7.92e-3, None, 1.2e-9, None),
            ConvergenceRow(200, 0.0275, 0.5, 4.1e-3, 0.949, 6.3e-10, 0.93),
        ]
        assert parse_table(format_table(rows)) == rows

    def test_header(self):
        text = format_table([])
        assert text.splitlines()[0].split("\t") == ["N", "dx", "dt", "err_theta", "order_theta", "err_c", "order_c"]
