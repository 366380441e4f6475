import math

import numpy as np
import pytest
from scipy.special import ndtr

from allowance_pricing import (
    AbatementFunction,
    ConfigurationError,
    DigitalFunctional,
    NoiseModel,
    PriceFunctional,
    PricingConfig,
    SolverError,
    SolverSettings,
    backward_recursion,
    bisect_alpha,
    exact_tree_oracle,
    expectation_of_shifted,
    tree_call_value,
)

PI = 100.0


def erf_bisect_fixed_point():
    """Independent scalar oracle: a = Phi(0.5 - 0.1*sqrt(a)) on [0, 1]."""

    def phi(x):
        return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))

    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if phi(0.5 - 0.1 * math.sqrt(mid)) - mid > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestExpectation:
    def test_digital_closed_form(self):
        d = DigitalFunctional(level=PI)
        noise = NoiseModel.normal(0.5, 1.0)
        # P(g + eps >= 0) = Phi(g + 0.5)
        for g in (-2.0, 0.0, 1.3):
            want = PI * ndtr(g + 0.5)
            assert expectation_of_shifted(d, g, noise) == pytest.approx(want, abs=1e-12)

    def test_constant_curve_is_fixed(self):
        f = PriceFunctional(np.array([-1.0, 1.0]), np.array([7.0, 7.0]), bound=PI)
        noise = NoiseModel.normal(0.0, 2.0)
        assert expectation_of_shifted(f, 0.3, noise) == pytest.approx(7.0, abs=1e-12)

    def test_discrete_equals_atom_sum(self):
        g = np.linspace(-3.0, 3.0, 11)
        v = np.linspace(0.0, PI, 11)
        f = PriceFunctional(g, v, bound=PI)
        noise = NoiseModel.discrete([(1.0, 0.25), (-0.5, 0.75)])
        want = 0.25 * f(0.2 + 1.0) + 0.75 * f(0.2 - 0.5)
        assert expectation_of_shifted(f, 0.2, noise) == pytest.approx(want, abs=1e-14)

    def test_exact_vs_quadrature_on_smooth_curve(self):
        g = np.linspace(-6.0, 6.0, 601)
        f = PriceFunctional(g, PI * ndtr(g), bound=PI)
        noise = NoiseModel.normal(0.1, 0.8)
        a = expectation_of_shifted(f, 0.4, noise, method="exact")
        b = expectation_of_shifted(f, 0.4, noise, method="gauss-hermite", quadrature_nodes=64)
        assert a == pytest.approx(b, abs=2e-5)

    def test_array_shift_shape(self):
        d = DigitalFunctional(level=PI)
        noise = NoiseModel.normal(0.0, 1.0)
        out = expectation_of_shifted(d, np.zeros((2, 3)), noise)
        assert out.shape == (2, 3)

    def test_unknown_method_rejected(self):
        d = DigitalFunctional(level=PI)
        with pytest.raises(ConfigurationError):
            expectation_of_shifted(d, 0.0, NoiseModel.normal(0.0, 1.0), method="simpson")


class TestBisectAlpha:
    def test_against_scalar_oracle(self):
        # same fixed point in currency units: a = PI * Phi(0.5 - 0.1*sqrt(a/PI*PI)...)
        # with c(a) = 0.1 sqrt(a) acting on the currency price directly
        oracle = erf_bisect_fixed_point()  # normalized units, PI = 1
        assert oracle == pytest.approx(0.6622534463100855, abs=1e-12)

        noise = NoiseModel.normal(0.5, 1.0)
        abate = AbatementFunction.power(0.1, 0.5)
        got = bisect_alpha(
            DigitalFunctional(level=1.0), 0.0, abate, noise, penalty=1.0,
            settings=SolverSettings(tolerance=1e-12),
        )
        assert got == pytest.approx(oracle, abs=1e-9)

    def test_respects_bounds(self):
        noise = NoiseModel.normal(0.5, 1.0)
        abate = AbatementFunction.zero()
        lo = bisect_alpha(DigitalFunctional(level=PI), -30.0, abate, noise, PI)
        hi = bisect_alpha(DigitalFunctional(level=PI), 30.0, abate, noise, PI)
        assert 0.0 <= lo < 1e-6
        assert PI - 1e-6 < hi <= PI

    def test_iteration_cap_raises(self):
        noise = NoiseModel.normal(0.5, 1.0)
        abate = AbatementFunction.power(0.1, 0.5)
        with pytest.raises(SolverError):
            bisect_alpha(
                DigitalFunctional(level=PI), 0.0, abate, noise, PI,
                settings=SolverSettings(tolerance=1e-13, max_iterations=3),
            )


class TestBackwardRecursion:
    def test_one_step_closed_form(self):
        # c == 0: alpha_{T-1}(g) = PI * Phi(g + 0.5).  The digital terminal
        # is integrated in closed form, so the only error left is the
        # bisection tolerance; tighten it to make the bound sharp.
        cfg = PricingConfig(penalty=PI, horizon=1)
        noise = NoiseModel.normal(0.5, 1.0)
        settings = SolverSettings(tolerance=1e-12)
        alphas = backward_recursion(cfg, AbatementFunction.zero(), noise, settings)
        g = alphas[0].grid
        want = PI * ndtr(g + 0.5)
        assert np.max(np.abs(alphas[0].values - want)) < 1e-10

    def test_multi_step_closed_form_interior(self):
        # telescoping: alpha_t(g) = PI * Phi((g + 0.5(T-t)) / sqrt(T-t)).
        # Steps below T-1 integrate the piecewise-linear interpolant of the
        # previous curve, so the default grid spacing (0.025) dominates the
        # error; measured interior error is ~9.5e-4 against the closed form.
        cfg = PricingConfig(penalty=PI, horizon=4)
        noise = NoiseModel.normal(0.5, 1.0)
        alphas = backward_recursion(cfg, AbatementFunction.zero(), noise, SolverSettings())
        g = alphas[0].grid
        inner = np.abs(g) <= 5.0
        for t in range(4):
            steps = 4 - t
            want = PI * ndtr((g + 0.5 * steps) / np.sqrt(steps))
            got = alphas[t].values
            assert np.max(np.abs(got - want)[inner]) < 2e-3

    def test_extrapolated_recursion_is_much_tighter(self):
        # the two-grid combination removes the spacing-squared bias; on a
        # wide grid the closed form is matched to well under 1e-6
        cfg = PricingConfig(penalty=PI, horizon=4)
        noise = NoiseModel.normal(0.5, 1.0)
        settings = SolverSettings(
            tolerance=1e-10 * PI,
            grid=np.linspace(-10.0, 10.0, 2001),
            extrapolate=True,
        )
        alphas = backward_recursion(cfg, AbatementFunction.zero(), noise, settings)
        g = alphas[0].grid
        inner = np.abs(g) <= 7.5
        for t in range(4):
            steps = 4 - t
            want = PI * ndtr((g + 0.5 * steps) / np.sqrt(steps))
            err = np.abs(alphas[t].values - want)[inner]
            assert err.max() < 1e-7
        # curves stay monotone and bounded after the combination
        for t in range(4):
            v = alphas[t].values
            assert np.all(np.diff(v) >= 0.0)
            assert v.min() >= 0.0 and v.max() <= PI

    def test_curves_monotone_and_bounded(self, six_period_model, reference_curves):
        for t in range(6):
            v = reference_curves[t].values
            assert np.all(np.diff(v) >= -1e-12)
            assert v.min() >= 0.0 and v.max() <= PI

    def test_monotone_propagation(self):
        # pointwise-larger next curve gives pointwise-larger solved curve
        noise = NoiseModel.normal(0.0, 1.0)
        abate = AbatementFunction.power(0.1, 0.5)
        g = np.linspace(-7.5, 7.5, 301)
        lowv = PI * ndtr(g)
        high = PriceFunctional(g, np.minimum(lowv + 0.05 * PI, PI), bound=PI)
        low = PriceFunctional(g, lowv, bound=PI)
        states = np.linspace(-3.0, 3.0, 21)
        a_low = np.array([bisect_alpha(low, s, abate, noise, PI) for s in states])
        a_high = np.array([bisect_alpha(high, s, abate, noise, PI) for s in states])
        assert np.all(a_high >= a_low - 1e-9)

    def test_terminal_is_exact_digital(self, reference_curves):
        top = reference_curves[6]
        assert top(-1e-9) == 0.0 and top(0.0) == PI

    def test_determinism(self):
        cfg = PricingConfig(penalty=PI, horizon=2)
        noise = NoiseModel.normal(0.5, 1.0)
        abate = AbatementFunction.power(0.1, 0.5)
        a = backward_recursion(cfg, abate, noise, SolverSettings())
        b = backward_recursion(cfg, abate, noise, SolverSettings())
        for t in range(2):
            assert np.array_equal(a[t].values, b[t].values)


def two_atom_fixture():
    cfg = PricingConfig(penalty=1.0, horizon=3)
    abate = AbatementFunction.power(0.1, 0.5)
    noise = NoiseModel.discrete([(1.0, 0.5), (-1.0, 0.5)])
    return cfg, abate, noise


class TestExactTree:
    def test_degenerate_single_atom(self):
        cfg = PricingConfig(penalty=1.0, horizon=1)
        noise = NoiseModel.discrete([(0.0, 1.0)])
        tree = exact_tree_oracle(cfg, AbatementFunction.zero(), noise, 0.7)
        assert tree.root.price == pytest.approx(1.0, abs=1e-10)
        assert tree.max_martingale_residual <= 1e-10

    def test_symmetric_two_atoms_even_split(self):
        cfg = PricingConfig(penalty=1.0, horizon=1)
        noise = NoiseModel.discrete([(1.0, 0.5), (-1.0, 0.5)])
        tree = exact_tree_oracle(cfg, AbatementFunction.zero(), noise, 0.0)
        assert tree.root.price == pytest.approx(0.5, abs=1e-10)

    def test_three_period_fixture_properties(self):
        cfg, abate, noise = two_atom_fixture()
        tree = exact_tree_oracle(cfg, abate, noise, 0.25)
        assert tree.max_martingale_residual <= 1e-10
        for node in tree.levels[-1]:
            assert node.price in (0.0, 1.0)
        # hand-checked plateau values at the first two levels
        assert tree.root.price == pytest.approx(0.5, abs=1e-9)
        prices_t1 = sorted(n.price for n in tree.levels[1])
        assert prices_t1 == pytest.approx([0.25, 0.75], abs=1e-9)

    def test_refuses_large_models(self):
        cfg = PricingConfig(penalty=1.0, horizon=6)
        noise = NoiseModel.discrete([(1.0, 0.5), (-1.0, 0.5)])
        with pytest.raises(ConfigurationError):
            exact_tree_oracle(cfg, AbatementFunction.zero(), noise, 0.0)
        cfg = PricingConfig(penalty=1.0, horizon=2)
        atoms = [(float(k), 0.2) for k in range(5)]
        with pytest.raises(ConfigurationError):
            exact_tree_oracle(cfg, AbatementFunction.zero(), NoiseModel.discrete(atoms), 0.0)
        with pytest.raises(ConfigurationError):
            exact_tree_oracle(
                cfg, AbatementFunction.zero(), NoiseModel.normal(0.0, 1.0), 0.0
            )

    def test_evaluation_budget_enforced(self):
        # the size precheck refuses before any work is done
        cfg, abate, noise = two_atom_fixture()
        with pytest.raises(ConfigurationError):
            exact_tree_oracle(cfg, abate, noise, 0.25, eval_budget=100)

    def test_call_values(self):
        cfg, abate, noise = two_atom_fixture()
        tree = exact_tree_oracle(cfg, abate, noise, 0.25)
        # zero strike: the call is the allowance itself
        assert tree_call_value(tree, 3, 0.0) == pytest.approx(tree.root.price, abs=1e-12)
        # strike at the penalty: worthless
        assert tree_call_value(tree, 3, 1.0) == 0.0
        # interior strike between plateaus, maturity inside the tree
        v = tree_call_value(tree, 2, 0.3)
        assert 0.0 < v < tree.root.price
