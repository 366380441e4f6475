import numpy as np
import pytest

from allowance_pricing import (
    AbatementFunction,
    CostFunction,
    DigitalFunctional,
    ModelError,
    NoiseModel,
    PriceFunctional,
    PricingConfig,
    derive_abatement_volume,
    digital_terminal,
)


class TestPricingConfig:
    def test_valid(self):
        cfg = PricingConfig(penalty=100.0, horizon=6)
        assert cfg.penalty == 100.0 and cfg.horizon == 6

    @pytest.mark.parametrize("penalty", [0.0, -1.0, float("nan"), float("inf")])
    def test_bad_penalty(self, penalty):
        with pytest.raises(ModelError):
            PricingConfig(penalty=penalty, horizon=3)

    @pytest.mark.parametrize("horizon", [0, -2])
    def test_bad_horizon(self, horizon):
        with pytest.raises(ModelError):
            PricingConfig(penalty=1.0, horizon=horizon)


class TestCostFunction:
    def test_quadratic_accepted(self):
        c = CostFunction(lambda x: x * x, cap=10.0)
        assert c(2.0) == 4.0

    def test_zero_at_zero_enforced(self):
        with pytest.raises(ModelError):
            CostFunction(lambda x: x * x + 1.0, cap=10.0)

    def test_concave_rejected(self):
        with pytest.raises(ModelError):
            CostFunction(lambda x: np.sqrt(x), cap=10.0)

    def test_bad_cap(self):
        with pytest.raises(ModelError):
            CostFunction(lambda x: x * x, cap=0.0)


class TestDeriveAbatementVolume:
    # oracle: brute grid minimization of C(x) - a*x at step 1e-6 froze these;
    # accuracy is curvature-limited near the minimum (value comparisons), so
    # expect sqrt(eps)-level precision, not the interval tolerance
    def test_quadratic_interior(self):
        c = CostFunction(lambda x: x * x, cap=10.0)
        # argmin of x^2 - 4x is x = 2
        assert derive_abatement_volume(c, 4.0) == pytest.approx(2.0, abs=1e-6)

    def test_cap_binding(self):
        c = CostFunction(lambda x: x * x, cap=1.0)
        assert derive_abatement_volume(c, 4.0) == pytest.approx(1.0, abs=1e-6)

    def test_zero_price_no_abatement(self):
        c = CostFunction(lambda x: x * x, cap=10.0)
        assert derive_abatement_volume(c, 0.0) == pytest.approx(0.0, abs=1e-6)

    def test_matches_grid_search(self):
        c = CostFunction(lambda x: x ** 4 + 0.5 * x, cap=3.0)
        for price in (0.3, 1.0, 2.5, 7.0):
            xs = np.linspace(0.0, 3.0, 300_001)
            oracle = xs[np.argmin(xs ** 4 + 0.5 * xs - price * xs)]
            got = derive_abatement_volume(c, price)
            assert got == pytest.approx(oracle, abs=1e-4)


class TestAbatementFunction:
    def test_power_basic(self):
        c = AbatementFunction.power(0.1, 0.5)
        assert c(4.0) == pytest.approx(0.2)
        assert c(0.0) == 0.0
        assert c(-3.0) == 0.0  # negative part is cut off

    def test_power_validation(self):
        with pytest.raises(ModelError):
            AbatementFunction.power(-0.1, 0.5)
        with pytest.raises(ModelError):
            AbatementFunction.power(0.1, 0.0)

    def test_zero(self):
        c = AbatementFunction.zero()
        assert np.all(c(np.array([-1.0, 0.0, 5.0])) == 0.0)

    def test_table_interpolates_and_flattens(self):
        c = AbatementFunction.from_table([0.0, 1.0, 2.0], [0.0, 0.5, 0.8])
        assert c(0.5) == pytest.approx(0.25)
        assert c(2.0) == pytest.approx(0.8)
        assert c(99.0) == pytest.approx(0.8)  # flat beyond the last point

    def test_table_must_start_at_origin(self):
        with pytest.raises(ModelError):
            AbatementFunction.from_table([0.5, 1.0], [0.1, 0.2])

    def test_table_must_be_monotone(self):
        with pytest.raises(ModelError):
            AbatementFunction.from_table([0.0, 1.0, 2.0], [0.0, 0.5, 0.3])

    def test_from_cost_agrees_with_pointwise_argmin(self):
        cost = CostFunction(lambda x: x * x, cap=10.0)
        c = AbatementFunction.from_cost(cost, prices=np.linspace(0.0, 8.0, 401))
        for a in (0.0, 1.0, 3.3, 7.9):
            assert c(a) == pytest.approx(a / 2.0, abs=1e-3)

    def test_non_decreasing_property(self):
        rng = np.random.default_rng(5)
        c = AbatementFunction.power(0.37, 0.8)
        x = np.sort(rng.uniform(-5.0, 50.0, size=200))
        v = c(x)
        assert np.all(np.diff(v) >= 0.0)


class TestPriceFunctional:
    def test_eval_and_clamp(self):
        f = PriceFunctional(np.array([0.0, 1.0]), np.array([1.0, 3.0]), bound=10.0)
        assert f(0.5) == pytest.approx(2.0)
        assert f(-5.0) == 1.0 and f(5.0) == 3.0
        assert f.lo == 1.0 and f.hi == 3.0

    def test_validation(self):
        g = np.array([0.0, 1.0, 2.0])
        with pytest.raises(ModelError):
            PriceFunctional(g, np.array([0.0, 2.0, 1.0]), bound=10.0)  # not monotone
        with pytest.raises(ModelError):
            PriceFunctional(g, np.array([0.0, 2.0, 11.0]), bound=10.0)  # above bound
        with pytest.raises(ModelError):
            PriceFunctional(np.array([0.0, 0.0, 1.0]), np.zeros(3), bound=1.0)  # grid ties

    def test_validate_false_admits_broken_curves(self):
        g = np.array([0.0, 1.0, 2.0])
        f = PriceFunctional(g, np.array([0.0, 5.0, 1.0]), bound=2.0, validate=False)
        assert f(1.0) == 5.0


class TestDigitalFunctional:
    def test_step_values(self):
        d = DigitalFunctional(level=100.0)
        assert d(-1e-12) == 0.0
        assert d(0.0) == 100.0  # shortage branch wins at the boundary
        assert d(1e-300) == 100.0

    def test_terminal_factory(self):
        cfg = PricingConfig(penalty=42.0, horizon=2)
        d = digital_terminal(cfg)
        assert d.level == 42.0 and d.threshold == 0.0


class TestNoiseModel:
    def test_normal(self):
        n = NoiseModel.normal(0.5, 1.0)
        assert not n.is_discrete
        with pytest.raises(ModelError):
            NoiseModel.normal(0.0, 0.0)

    def test_discrete_probs_must_sum_to_one(self):
        NoiseModel.discrete([(1.0, 0.5), (-1.0, 0.5)])
        with pytest.raises(ModelError):
            NoiseModel.discrete([(1.0, 0.5), (-1.0, 0.4)])
        with pytest.raises(ModelError):
            NoiseModel.discrete([(1.0, 1.5), (-1.0, -0.5)])

    def test_draw_deterministic(self):
        n = NoiseModel.normal(0.5, 1.0)
        a = n.draw(np.random.default_rng(3), 10)
        b = n.draw(np.random.default_rng(3), 10)
        assert np.array_equal(a, b)

    def test_discrete_draw_hits_atoms_only(self):
        n = NoiseModel.discrete([(2.0, 0.25), (-1.0, 0.75)])
        x = n.draw(np.random.default_rng(0), 1000)
        assert set(np.unique(x)) <= {2.0, -1.0}
