"""Parameters, ambient values, scenarios and initial state."""

import numpy as np
import pytest

from stone_erosion.absorption import ParameterError
from stone_erosion.domain import GHOST, INTERNAL, classify
from stone_erosion.physics import (
    DAY,
    YEAR,
    Ambient,
    AmbientSchedule,
    ModelParams,
    ambient_humidity,
    initial_state,
    make_scenario,
)


class TestModelParams:
    def test_defaults(self):
        p = ModelParams()
        assert (p.mu, p.rho_0, p.D_c, p.K_c) == (8.9e-3, 2.71, 1.18e-5, 1.7e-3)
        assert p.n_tilde == 0.0063
        assert (p.K_w, p.K_a, p.K_n, p.n_max) == (1e-2, 1e-2, 1e-3, 0.20)
        s, a = p.symmetric, p.asymmetric
        assert (s.s_R, s.s_S, s.D) == (0.227, 0.884, 1.09e-5)
        assert (a.c, a.K_s, a.alpha, a.gamma) == (34.19, 7.9e-9, 0.5, 2.0)

    def test_growth_factor_range(self):
        p = ModelParams()
        assert 1.0 < p.growth_factor < 1.0 / p.n_tilde

    @pytest.mark.parametrize("n_max", [0.0063, 0.001, 1.0])
    def test_rejects_bad_threshold(self, n_max):
        with pytest.raises(ParameterError):
            ModelParams(n_max=n_max)

    def test_rejects_negative_rate(self):
        with pytest.raises(ParameterError):
            ModelParams(K_w=-1.0)

    def test_viscosity_shared_with_law(self):
        p = ModelParams(mu=1e-2)
        assert p.asymmetric.mu == 1e-2
        assert p.absorption().params.mu == 1e-2

    def test_outside_porosity_switch(self):
        assert ModelParams().n_out == 1.0
        assert ModelParams(outside_porosity="n_max").n_out == 0.20
        with pytest.raises(ParameterError):
            ModelParams(outside_porosity="half")


class TestAmbient:
    def test_humidity_zero(self):
        assert ambient_humidity(17.0, 0.0) == 0.0

    def test_humidity_values(self, oracle):
        assert ambient_humidity(0.0, 1.0) == pytest.approx(oracle["humidity_0_1"], rel=1e-15)
        assert ambient_humidity(25.0, 1.0) == pytest.approx(oracle["humidity_25_1"], rel=1e-14)

    @pytest.mark.parametrize("T,u", [(-30.0, 0.5), (61.0, 0.5), (20.0, -0.1), (20.0, 1.1)])
    def test_humidity_range(self, T, u):
        with pytest.raises(ParameterError):
            ambient_humidity(T, u)

    def test_negative_ambient_rejected(self):
        with pytest.raises(ParameterError):
            Ambient(E=-1e-3)

    def test_schedule(self):
        sch = AmbientSchedule((0.0, 10.0), (Ambient(1e-3, 0.0), Ambient(2e-3, 1e-7)))
        assert sch.at(0.0).E == 1e-3
        assert sch.at(9.999).E == 1e-3
        assert sch.at(10.0).E == 2e-3
        assert sch.next_change(0.0) == 10.0
        assert sch.next_change(10.0) is None

    def test_schedule_must_increase(self):
        with pytest.raises(ParameterError):
            AmbientSchedule((0.0, 5.0, 5.0), (Ambient(),) * 3)


class TestScenarios:
    def test_standard_1d(self):
        sc = make_scenario("standard_1d")
        assert (sc.dt, sc.N, sc.dim, sc.duration) == (1.0, 100, 1, YEAR)
        amb = sc.ambient.at(0.0)
        assert (amb.E, amb.C) == (0.001847, 5.5e-7)
        assert sc.sample.lower == (0.25,) and sc.sample.upper == (5.25,)

    def test_standard_2d(self):
        sc = make_scenario("standard_2d")
        assert sc.dt == 0.1 and sc.dim == 2
        assert sc.sample.lower == (0.25, 0.75) and sc.sample.upper == (5.25, 4.75)

    def test_catastrophic(self):
        sc = make_scenario("catastrophic_1d")
        assert sc.ambient.at(0.0).E == 0.0063
        assert sc.duration == DAY and sc.dt == 1.0

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            make_scenario("standard_3d")

    def test_overrides(self):
        sc = make_scenario("standard_1d", N=50, dt=2.0, ambient=Ambient(E=1e-3, C=0.0))
        assert (sc.N, sc.dt, sc.ambient.at(5.0).E) == (50, 2.0, 1e-3)

    def test_sample_inside_domain(self):
        with pytest.raises(ParameterError):
            make_scenario("standard_1d", length=5.0)

    def test_deterministic(self):
        assert make_scenario("standard_2d") == make_scenario("standard_2d")


class TestInitialState:
    @pytest.mark.parametrize("kind", ["standard_1d", "standard_2d"])
    def test_pristine_specimen(self, kind):
        sc = make_scenario(kind, N=40)
        state, grid = initial_state(sc)
        p = sc.params
        cls = classify(grid, state.n, p.n_max)
        inside = sc.sample.contains(grid.coords())
        assert np.all(cls.kind[inside] == INTERNAL)
        assert np.all(state.n[inside] == p.n_tilde)
        assert np.allclose(state.theta[inside], p.absorption().s_R * p.n_tilde)
        assert np.all(state.c_a[inside] == 0.0)
        rest = ~inside & (cls.kind != GHOST)
        assert np.all(state.theta[rest] == sc.ambient.at(0).E)
        assert np.all(state.n[rest] == p.n_out)
        assert state.t == 0.0
