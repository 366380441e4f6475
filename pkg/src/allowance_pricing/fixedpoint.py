"""Backward fixed-point construction of the allowance price functionals.

For each period the spot price at state g solves

    a = E[ alpha_next(g - c(a) + eps) ],

where c is the abatement schedule and eps the next emission increment. The
map f(a) = a - E[...] is strictly increasing with f(0) <= 0 <= f(penalty),
so a bracket bisection started at [0, penalty] converges unconditionally;
ties f = 0 take the upper branch. Iterating from the digital terminal
condition down to t = 0 yields one monotone price curve per period.

Expectations of the stored piecewise-linear curves under normal noise are
computed in closed form per segment (normal CDF terms), which integrates the
stored representation exactly; Gauss-Hermite quadrature is available as an
alternative route for cross-checks. Discrete noise uses the exact
probability-weighted sum. The digital terminal is always integrated in
closed form.

exact_tree_oracle builds the exhaustive tree for small discrete-noise models
by nested scalar bisection and asserts the martingale identity at every node;
it is the independent yardstick for the grid solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError, SolverError
from .model import (
    AbatementFunction,
    DigitalFunctional,
    Functional,
    NoiseModel,
    PriceFunctional,
    PricingConfig,
    digital_terminal,
)

_SQRT2PI = math.sqrt(2.0 * math.pi)

EXPECTATION_METHODS = ("exact", "gauss-hermite")


@dataclass(frozen=True)
class SolverSettings:
    """Knobs for the reference grid solver.

    tolerance        -- absolute bisection tolerance in currency units
                        (default 1e-8 * penalty, resolved at solve time)
    max_iterations   -- hard cap on bisection steps per fixed point
    quadrature_nodes -- Gauss-Hermite node count when expectation_method is
                        "gauss-hermite" (normal noise only)
    expectation_method -- "exact" segment integration or "gauss-hermite"
    grid             -- strictly increasing state grid for the stored curves
                        (default: 601 equidistant points on [-7.5, 7.5])
    extrapolate      -- solve a second recursion on the midpoint-refined grid
                        and combine node values as (4*fine - coarse)/3, which
                        cancels the O(h^2) interpolation bias of the stored
                        piecewise-linear curves
    """

    tolerance: Optional[float] = None
    max_iterations: int = 60
    quadrature_nodes: int = 64
    expectation_method: str = "exact"
    grid: Optional[np.ndarray] = None
    extrapolate: bool = False

    def __post_init__(self):
        if self.tolerance is not None and not (self.tolerance > 0.0):
            raise ConfigurationError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if self.quadrature_nodes < 2:
            raise ConfigurationError("quadrature_nodes must be >= 2")
        if self.expectation_method not in EXPECTATION_METHODS:
            raise ConfigurationError(
                f"expectation_method must be one of {EXPECTATION_METHODS}"
            )
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=float)
            if g.ndim != 1 or g.size < 2 or not np.all(np.diff(g) > 0.0):
                raise ConfigurationError("grid must be 1-d and strictly increasing")
            object.__setattr__(self, "grid", g)

    def resolved_grid(self) -> np.ndarray:
        if self.grid is not None:
            return self.grid
        return np.linspace(-7.5, 7.5, 601)

    def resolved_tolerance(self, penalty: float) -> float:
        return self.tolerance if self.tolerance is not None else 1e-8 * penalty


def _normal_pdf(t: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * t * t) / _SQRT2PI


_GH_CACHE: dict = {}


def _gh_rule(n: int) -> Tuple[np.ndarray, np.ndarray]:
    # physicists' Gauss-Hermite: sum w_i f(x_i) ~ integral exp(-x^2) f(x) dx
    if n not in _GH_CACHE:
        x, w = np.polynomial.hermite.hermgauss(n)
        _GH_CACHE[n] = (x, w / math.sqrt(math.pi))
    return _GH_CACHE[n]


def _pl_expectation_normal(
    grid: np.ndarray, values: np.ndarray, mus: np.ndarray, stddev: float
) -> np.ndarray:
    """E[f(mu + s Z)] for the clamped piecewise-linear f, exactly per segment."""
    out = np.empty(mus.shape)
    n = grid.size
    slopes = np.diff(values) / np.diff(grid)
    block = max(1, 4_000_000 // n)  # bound the (points x knots) temporaries
    for i0 in range(0, mus.size, block):
        mu = mus[i0 : i0 + block, None]
        t = (grid[None, :] - mu) / stddev
        cdf = ndtr(t)
        pdf = _normal_pdf(t)
        mass = cdf[:, 1:] - cdf[:, :-1]
        moment = pdf[:, :-1] - pdf[:, 1:]  # integral of u*phi(u) over the cell
        seg = values[None, :-1] * mass + slopes[None, :] * (
            (mu - grid[None, :-1]) * mass + stddev * moment
        )
        out[i0 : i0 + block] = (
            values[0] * cdf[:, 0] + values[-1] * (1.0 - cdf[:, -1]) + seg.sum(axis=1)
        )
    return out


def _expectation_many(
    functional: Functional,
    shifts: np.ndarray,
    noise: NoiseModel,
    method: str = "exact",
    quadrature_nodes: int = 64,
) -> np.ndarray:
    """E[functional(shift + eps)] for an array of shifts."""
    shifts = np.asarray(shifts, dtype=float)
    if noise.is_discrete:
        values = np.array([v for v, _ in noise.atoms])
        probs = np.array([p for _, p in noise.atoms])
        return functional(shifts[..., None] + values) @ probs
    mus = shifts + noise.mean
    if isinstance(functional, DigitalFunctional):
        # exact regardless of method: P(mu + s Z >= threshold)
        return functional.level * ndtr((mus - functional.threshold) / noise.stddev)
    if method == "exact":
        return _pl_expectation_normal(functional.grid, functional.values, mus, noise.stddev)
    x, w = _gh_rule(quadrature_nodes)
    pts = mus[..., None] + (math.sqrt(2.0) * noise.stddev) * x
    return functional(pts) @ w


def expectation_of_shifted(
    functional: Functional,
    shift,
    noise: NoiseModel,
    *,
    method: str = "exact",
    quadrature_nodes: int = 64,
):
    """E[functional(shift + eps)] for scalar or array shift."""
    if method not in EXPECTATION_METHODS:
        raise ConfigurationError(f"method must be one of {EXPECTATION_METHODS}")
    arr = np.atleast_1d(np.asarray(shift, dtype=float))
    out = _expectation_many(functional, arr, noise, method, quadrature_nodes)
    if np.ndim(shift) == 0:
        return float(out[0])
    return out.reshape(np.shape(shift))


def _bisect_many(
    next_functional: Functional,
    states: np.ndarray,
    abate: Callable,
    noise: NoiseModel,
    penalty: float,
    tolerance: float,
    max_iterations: int,
    method: str,
    quadrature_nodes: int,
) -> Tuple[np.ndarray, int, np.ndarray]:
    """Bracket bisection of f(a) = a - E[next(g - c(a) + eps)] at many states.

    Returns (roots, iterations used, residuals f(root)). The expectation is
    reused whenever the shifted states did not change between iterates, which
    collapses the zero-abatement case to a single expectation evaluation.
    """
    states = np.asarray(states, dtype=float)
    lo = np.zeros_like(states)
    hi = np.full_like(states, penalty)

    prev_shift: Optional[np.ndarray] = None
    expect: Optional[np.ndarray] = None

    def f_at(a: np.ndarray) -> np.ndarray:
        nonlocal prev_shift, expect
        shift = states - abate(a)
        if prev_shift is None or not np.array_equal(shift, prev_shift):
            expect = _expectation_many(
                next_functional, shift, noise, method, quadrature_nodes
            )
            prev_shift = shift
        return a - expect

    # bracket sanity: corrupted curves (values outside [0, penalty]) lose it
    f_lo = f_at(lo)
    f_hi = f_at(hi)
    bad = (f_lo > 0.0) | (f_hi < 0.0)
    if np.any(bad):
        raise SolverError(
            f"fixed-point bracket lost at {int(bad.sum())} state(s); "
            "next-period curve takes values outside [0, penalty]"
        )

    width_steps = max(1, math.ceil(math.log2(max(penalty / tolerance, 2.0))))
    width_steps = min(width_steps, max_iterations)
    res = None
    used = 0
    for _ in range(width_steps):
        mid = 0.5 * (lo + hi)
        res = f_at(mid)
        take_hi = res >= 0.0  # ties go to the upper branch
        hi = np.where(take_hi, mid, hi)
        lo = np.where(take_hi, lo, mid)
        used += 1
    # polish while some residual still exceeds tolerance (steep feedback)
    while used < max_iterations and np.max(np.abs(res)) > tolerance:
        mid = 0.5 * (lo + hi)
        res = f_at(mid)
        take_hi = res >= 0.0
        hi = np.where(take_hi, mid, hi)
        lo = np.where(take_hi, lo, mid)
        used += 1
    # a jump of the target curve can pin the root at a discontinuity where
    # the residual never vanishes; a machine-narrow bracket is convergence
    # there, so only an iteration cap that left the bracket wide is an error
    worst = float(np.max(np.abs(res)))
    width = float(np.max(hi - lo))
    if worst > tolerance and width > tolerance:
        raise SolverError(
            f"fixed-point residual {worst:.3e} and bracket width {width:.3e} "
            f"still above tolerance {tolerance:.3e} after {used} bisection steps"
        )
    roots = 0.5 * (lo + hi)
    return roots, used, f_at(roots)


def bisect_alpha(
    next_functional: Functional,
    state: float,
    abate: Callable,
    noise: NoiseModel,
    penalty: float,
    settings: Optional[SolverSettings] = None,
    return_info: bool = False,
):
    """Solve the single-state fixed point a = E[next(g - c(a) + eps)]."""
    settings = settings or SolverSettings()
    tol = settings.resolved_tolerance(penalty)
    roots, used, res = _bisect_many(
        next_functional,
        np.array([float(state)]),
        abate,
        noise,
        penalty,
        tol,
        settings.max_iterations,
        settings.expectation_method,
        settings.quadrature_nodes,
    )
    if return_info:
        return float(roots[0]), {"iterations": used, "residual": float(res[0])}
    return float(roots[0])


def _recursion_on_grid(
    config: PricingConfig,
    abate: AbatementFunction,
    noise: NoiseModel,
    settings: SolverSettings,
    grid: np.ndarray,
) -> List[Functional]:
    penalty = config.penalty
    tol_currency = settings.resolved_tolerance(penalty)

    if config.normalize:
        pen_int = 1.0
        tol_int = tol_currency / penalty
        scale = penalty

        def abate_int(a):
            return abate(np.asarray(a) * penalty)

    else:
        pen_int = penalty
        tol_int = tol_currency
        scale = 1.0
        abate_int = abate

    curves: List[Functional] = [digital_terminal(config)]
    next_int: Functional = DigitalFunctional(level=pen_int)
    for _t in range(config.horizon - 1, -1, -1):
        roots, _used, _res = _bisect_many(
            next_int,
            grid,
            abate_int,
            noise,
            pen_int,
            tol_int,
            settings.max_iterations,
            settings.expectation_method,
            settings.quadrature_nodes,
        )
        cleaned = np.maximum.accumulate(roots)
        if np.max(cleaned - roots) > 2.0 * tol_int:
            raise SolverError(
                "fixed-point roots broke monotonicity beyond bisection tolerance"
            )
        next_int = PriceFunctional(grid=grid, values=cleaned, bound=pen_int)
        curves.append(
            next_int
            if scale == 1.0
            else PriceFunctional(grid=grid, values=cleaned * scale, bound=penalty)
        )
    curves.reverse()
    return curves


def backward_recursion(
    config: PricingConfig,
    abate: AbatementFunction,
    noise: NoiseModel,
    settings: Optional[SolverSettings] = None,
) -> List[Functional]:
    """Price curves [alpha_0, ..., alpha_T] on the settings grid.

    alpha_T is the exact digital terminal; every earlier curve is a monotone
    piecewise-linear functional in currency units. Internally the recursion
    runs in units of the penalty when config.normalize is set, with the
    abatement schedule rescaled to match (c_int(a) = c(penalty * a)).

    With settings.extrapolate the recursion is solved independently on the
    grid and on its midpoint refinement; node values are combined as
    (4*fine - coarse)/3, removing the leading grid-spacing-squared bias that
    the piecewise-linear curve representation feeds into the expectations.
    """
    settings = settings or SolverSettings()
    grid = settings.resolved_grid()
    if not settings.extrapolate:
        return _recursion_on_grid(config, abate, noise, settings, grid)

    fine_grid = np.empty(grid.size * 2 - 1)
    fine_grid[0::2] = grid
    fine_grid[1::2] = 0.5 * (grid[:-1] + grid[1:])
    coarse = _recursion_on_grid(config, abate, noise, settings, grid)
    fine = _recursion_on_grid(config, abate, noise, settings, fine_grid)

    penalty = config.penalty
    tol = settings.resolved_tolerance(penalty)
    curves: List[Functional] = []
    for t in range(config.horizon):
        vc = coarse[t].values
        vf = fine[t].values[0::2]
        corr = (vf - vc) / 3.0
        vals = np.clip(vf + corr, 0.0, penalty)
        cleaned = np.maximum.accumulate(vals)
        # the correction field is smooth; a violation at its own scale means
        # the two solves disagree structurally, not just in rounding
        guard = 2.0 * tol + 0.1 * float(np.max(np.abs(corr)))
        if np.max(cleaned - vals) > guard:
            raise SolverError(
                "extrapolated curve broke monotonicity beyond the correction scale"
            )
        curves.append(PriceFunctional(grid=grid, values=cleaned, bound=penalty))
    curves.append(digital_terminal(config))
    return curves


# ---------------------------------------------------------------------------
# exact tree oracle for small discrete-noise models
# ---------------------------------------------------------------------------


@dataclass
class TreeNode:
    t: int
    state: float
    price: float
    children: List[Tuple[float, "TreeNode"]] = field(default_factory=list)
    call_value: Optional[float] = None


@dataclass
class ExactTree:
    levels: List[List[TreeNode]]
    max_martingale_residual: float
    evaluations: int

    @property
    def root(self) -> TreeNode:
        return self.levels[0][0]


def exact_tree_oracle(
    config: PricingConfig,
    abate: AbatementFunction,
    noise: NoiseModel,
    initial_state: float,
    *,
    tolerance: Optional[float] = None,
    eval_budget: int = 10**6,
    martingale_tol: Optional[float] = None,
) -> ExactTree:
    """Exhaustive-enumeration prices for small discrete-noise models.

    Every fixed point is solved by nested scalar bisection with exact
    discrete expectations, so the martingale identity E[A_{t+1} | node] = A_t
    must hold at every node (asserted to 1e-10 * penalty by default) and
    terminal prices are exactly 0 or penalty. Refuses models whose recursion
    would exceed the evaluation budget.
    """
    if not noise.is_discrete:
        raise ConfigurationError("exact_tree_oracle needs discrete noise")
    atoms = noise.atoms
    if len(atoms) > 4:
        raise ConfigurationError("exact_tree_oracle supports at most 4 atoms")
    horizon = config.horizon
    if horizon > 5:
        raise ConfigurationError("exact_tree_oracle supports horizon <= 5")
    penalty = config.penalty
    tol = tolerance if tolerance is not None else 1e-12 * penalty
    mart_tol = martingale_tol if martingale_tol is not None else 1e-10 * penalty
    iters = max(1, math.ceil(math.log2(penalty / tol)))

    projected = (iters * len(atoms)) ** horizon
    if projected > eval_budget:
        raise ConfigurationError(
            f"tree too large: ~{projected} fixed-point evaluations exceed the "
            f"budget of {eval_budget}"
        )

    evals = 0
    memo: dict = {}

    def alpha(t: int, g: float) -> float:
        nonlocal evals
        evals += 1
        if evals > eval_budget:
            raise ConfigurationError("tree too large: evaluation budget exhausted")
        if t == horizon:
            return penalty if g >= 0.0 else 0.0
        key = (t, g)
        if key in memo:
            return memo[key]
        lo, hi = 0.0, penalty
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            shifted = g - float(abate(mid))
            val = sum(p * alpha(t + 1, shifted + e) for e, p in atoms)
            if mid - val >= 0.0:
                hi = mid
            else:
                lo = mid
        root = 0.5 * (lo + hi)
        memo[key] = root
        return root

    levels = [[TreeNode(t=0, state=float(initial_state), price=alpha(0, float(initial_state)))]]
    for t in range(horizon):
        nxt: List[TreeNode] = []
        for node in levels[t]:
            drift = float(abate(node.price))
            for e, p in atoms:
                child_state = node.state - drift + e
                child = TreeNode(t=t + 1, state=child_state, price=alpha(t + 1, child_state))
                node.children.append((p, child))
                nxt.append(child)
        levels.append(nxt)

    worst = 0.0
    for t in range(horizon):
        for node in levels[t]:
            expected = sum(p * child.price for p, child in node.children)
            worst = max(worst, abs(node.price - expected))
    if worst > mart_tol:
        raise SolverError(
            f"tree martingale identity violated ({worst:.3e} > {mart_tol:.3e}); "
            "a discrete-noise fixed point does not exist at some node"
        )
    for leaf in levels[horizon]:
        if leaf.price not in (0.0, penalty):
            raise SolverError("terminal tree prices must be exactly 0 or penalty")
    return ExactTree(levels=levels, max_martingale_residual=worst, evaluations=evals)


def tree_call_value(tree: ExactTree, tau: int, strike: float) -> float:
    """European call value at the tree root by backward expectation.

    Also annotates node.call_value for every node with t <= tau, so values at
    interior matching nodes can be read off directly.
    """
    if not (1 <= tau < len(tree.levels)):
        raise ConfigurationError(f"tau must be in 1..{len(tree.levels) - 1}")
    if strike < 0.0:
        raise ConfigurationError("strike must be >= 0")
    for node in tree.levels[tau]:
        node.call_value = max(node.price - strike, 0.0)
    for t in range(tau - 1, -1, -1):
        for node in tree.levels[t]:
            node.call_value = sum(p * child.call_value for p, child in node.children)
    return float(tree.root.call_value)
