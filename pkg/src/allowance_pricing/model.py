"""Core model ingredients for the allowance pricing engine.

The market model is discrete time t = 0..T. An aggregate emission state G_t
drives a spot allowance price A_t = alpha_t(G_t) in [0, penalty]. Regulated
firms abate emissions when the allowance price exceeds their marginal cost;
the abatement volume schedule a -> c(a) is the argmin of C(x) - a*x over the
feasible range and is non-decreasing, continuous and zero at a = 0.

This module holds the passive ingredients: pricing configuration, cost and
abatement functions, noise models for the emission increments, and the two
price-functional representations (piecewise linear and exact digital).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, ModelError

_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0  # golden ratio section factor


@dataclass(frozen=True)
class PricingConfig:
    """Global pricing parameters.

    penalty   -- terminal penalty pi per unit of uncovered emissions, > 0
    horizon   -- number of trading periods T >= 1
    normalize -- solve internally in units of pi (curves are always returned
                 rescaled to currency units either way)
    """

    penalty: float
    horizon: int
    normalize: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.penalty) and self.penalty > 0.0):
            raise ModelError(f"penalty must be finite and > 0, got {self.penalty}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ModelError(f"horizon must be an integer >= 1, got {self.horizon}")
        object.__setattr__(self, "horizon", int(self.horizon))


@dataclass(frozen=True)
class CostFunction:
    """Strictly convex abatement cost C on [0, cap] with C(0) = 0."""

    evaluate: Callable[[float], float]
    cap: float
    check_points: int = 64

    def __post_init__(self):
        if not (self.cap > 0.0):
            raise ModelError(f"cap must be > 0, got {self.cap}")
        c0 = float(self.evaluate(0.0))
        if abs(c0) > 1e-12 * max(1.0, abs(float(self.evaluate(self.cap)))):
            raise ModelError(f"cost at zero abatement must vanish, got C(0) = {c0}")
        self._spot_check_convexity()

    def _spot_check_convexity(self):
        # deterministic midpoint checks: C((x+y)/2) < (C(x)+C(y))/2 up to rounding
        rng = np.random.default_rng(11)
        xs = rng.uniform(0.0, self.cap, size=(self.check_points, 2))
        scale = max(1.0, abs(float(self.evaluate(self.cap))))
        for x, y in xs:
            if abs(x - y) < 1e-9 * self.cap:
                continue
            mid = 0.5 * (float(self.evaluate(x)) + float(self.evaluate(y)))
            cm = float(self.evaluate(0.5 * (x + y)))
            if cm > mid + 1e-12 * scale:
                raise ModelError(
                    f"cost function fails midpoint convexity at x={x:.6g}, y={y:.6g}"
                )

    def __call__(self, x):
        return self.evaluate(x)


def derive_abatement_volume(cost: CostFunction, price: float, tol: float = 1e-10) -> float:
    """Abatement volume for a given allowance price.

    Returns argmin over x in [0, cap] of C(x) - price*x by golden-section
    search to absolute tolerance `tol` in x. Strict convexity of C makes the
    objective unimodal, so the section search is exact up to tolerance.
    """
    if price < 0.0:
        raise ModelError(f"price must be >= 0, got {price}")
    lo, hi = 0.0, float(cost.cap)

    def obj(x):
        return float(cost.evaluate(x)) - price * x

    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = obj(c), obj(d)
    while (b - a) > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = obj(d)
    x = 0.5 * (a + b)
    # snap to the boundary when the bracket already touches it
    if x < tol:
        return 0.0 if obj(0.0) <= obj(x) else x
    if cost.cap - x < tol:
        return float(cost.cap) if obj(cost.cap) <= obj(x) else x
    return x


@dataclass(frozen=True)
class AbatementFunction:
    """Abatement volume schedule a -> c(a), non-decreasing, continuous, c(0) = 0.

    Two representations:
      power -- c(a) = scale * max(a, 0) ** exponent (closed form)
      table -- monotone samples with linear interpolation, flat beyond the
               last point so monotonicity survives extrapolation
    """

    kind: str
    scale: float = 0.0
    exponent: float = 1.0
    prices: Optional[Tuple[float, ...]] = None
    volumes: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind == "power":
            if self.scale < 0.0:
                raise ModelError(f"power abatement needs scale >= 0, got {self.scale}")
            if self.exponent <= 0.0:
                raise ModelError(f"power abatement needs exponent > 0, got {self.exponent}")
        elif self.kind == "table":
            p = np.asarray(self.prices, dtype=float)
            v = np.asarray(self.volumes, dtype=float)
            if p.ndim != 1 or p.shape != v.shape or p.size < 2:
                raise ModelError("table abatement needs matching price/volume vectors")
            if not np.all(np.diff(p) > 0.0):
                raise ModelError("table abatement prices must be strictly increasing")
            if np.any(np.diff(v) < -1e-12 * max(1.0, float(np.max(np.abs(v))))):
                raise ModelError("table abatement volumes must be non-decreasing")
            if p[0] != 0.0 or abs(v[0]) > 1e-12 * max(1.0, float(np.max(np.abs(v)))):
                raise ModelError("table abatement must start at (price 0, volume 0)")
            object.__setattr__(self, "prices", tuple(float(x) for x in p))
            object.__setattr__(self, "volumes", tuple(float(x) for x in v))
        else:
            raise ModelError(f"unknown abatement kind {self.kind!r}")

    @classmethod
    def power(cls, scale: float, exponent: float) -> "AbatementFunction":
        return cls(kind="power", scale=scale, exponent=exponent)

    @classmethod
    def zero(cls) -> "AbatementFunction":
        return cls(kind="power", scale=0.0, exponent=1.0)

    @classmethod
    def from_table(cls, prices: Sequence[float], volumes: Sequence[float]) -> "AbatementFunction":
        return cls(kind="table", prices=tuple(prices), volumes=tuple(volumes))

    @classmethod
    def from_cost(
        cls, cost: CostFunction, prices: Sequence[float], tol: float = 1e-10
    ) -> "AbatementFunction":
        """Tabulate the argmin schedule of a convex cost function."""
        ps = [float(p) for p in prices]
        if not ps or ps[0] != 0.0:
            ps = [0.0] + ps
        vols = [derive_abatement_volume(cost, p, tol=tol) for p in ps]
        return cls.from_table(ps, vols)

    def __call__(self, a):
        if self.kind == "power":
            base = np.maximum(np.asarray(a, dtype=float), 0.0)
            out = self.scale * np.power(base, self.exponent)
        else:
            out = np.interp(np.asarray(a, dtype=float), self.prices, self.volumes)
        if np.ndim(a) == 0:
            return float(out)
        return out


def _as_grid(values) -> np.ndarray:
    g = np.asarray(values, dtype=float)
    if g.ndim != 1 or g.size < 2:
        raise ModelError("functional grid must be a 1-d array with >= 2 points")
    if not np.all(np.diff(g) > 0.0):
        raise ModelError("functional grid must be strictly increasing")
    return g


@dataclass(frozen=True)
class PriceFunctional:
    """Piecewise-linear price curve g -> alpha(g) on a strictly increasing grid.

    Values live in [0, bound] and are non-decreasing (the martingale price
    curves are; `validate=False` admits deliberately broken curves so the
    solvers can detect and reject them). Evaluation clamps to the endpoint
    values outside the grid span.
    """

    grid: np.ndarray
    values: np.ndarray
    bound: float
    validate: bool = True

    def __post_init__(self):
        g = _as_grid(self.grid)
        v = np.asarray(self.values, dtype=float)
        if v.shape != g.shape:
            raise ModelError("functional grid and values must have matching shapes")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)
        if not (self.bound > 0.0):
            raise ModelError(f"functional bound must be > 0, got {self.bound}")
        if self.validate:
            tol = 1e-9 * self.bound
            if np.any(v < -tol) or np.any(v > self.bound + tol):
                raise ModelError("functional values must lie in [0, bound]")
            if np.any(np.diff(v) < -tol):
                raise ModelError("functional values must be non-decreasing")

    def __call__(self, g):
        out = np.interp(np.asarray(g, dtype=float), self.grid, self.values)
        if np.ndim(g) == 0:
            return float(out)
        return out

    @property
    def lo(self) -> float:
        return float(self.values[0])

    @property
    def hi(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class DigitalFunctional:
    """Exact step curve level * 1_{[threshold, inf)}(g).

    The terminal allowance price is this digital with level = penalty and
    threshold 0: the indicator set is closed on the left, so the value at
    exactly g = threshold is `level`.
    """

    level: float
    threshold: float = 0.0

    def __post_init__(self):
        if not (self.level > 0.0):
            raise ModelError(f"digital level must be > 0, got {self.level}")

    def __call__(self, g):
        out = np.where(np.asarray(g, dtype=float) >= self.threshold, self.level, 0.0)
        if np.ndim(g) == 0:
            return float(out)
        return out

    @property
    def lo(self) -> float:
        return 0.0

    @property
    def hi(self) -> float:
        return float(self.level)


Functional = Union[PriceFunctional, DigitalFunctional]


def digital_terminal(config: PricingConfig) -> DigitalFunctional:
    """Terminal condition: penalty is due exactly when cumulative emissions
    end at or above the cap (state g >= 0)."""
    return DigitalFunctional(level=config.penalty, threshold=0.0)


def evaluate_functional(functional: Functional, g):
    """Evaluate a price functional at scalar or array states (clamped)."""
    return functional(g)


@dataclass(frozen=True)
class NoiseModel:
    """Per-period emission increment distribution.

    kind "normal":   N(mean, stddev^2), stddev > 0
    kind "discrete": finite atoms ((value, prob), ...), probs > 0 summing to 1
                     within 1e-12
    """

    kind: str
    mean: float = 0.0
    stddev: float = 1.0
    atoms: Optional[Tuple[Tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.kind == "normal":
            if not (self.stddev > 0.0):
                raise ModelError(f"normal noise needs stddev > 0, got {self.stddev}")
        elif self.kind == "discrete":
            if not self.atoms:
                raise ModelError("discrete noise needs at least one atom")
            atoms = tuple((float(v), float(p)) for v, p in self.atoms)
            probs = np.array([p for _, p in atoms])
            if np.any(probs <= 0.0):
                raise ModelError("discrete noise probabilities must all be > 0")
            if abs(float(probs.sum()) - 1.0) > 1e-12:
                raise ModelError(
                    f"discrete noise probabilities must sum to 1, got {probs.sum()!r}"
                )
            object.__setattr__(self, "atoms", atoms)
        else:
            raise ModelError(f"unknown noise kind {self.kind!r}")

    @classmethod
    def normal(cls, mean: float, stddev: float) -> "NoiseModel":
        return cls(kind="normal", mean=mean, stddev=stddev)

    @classmethod
    def discrete(cls, atoms: Sequence[Tuple[float, float]]) -> "NoiseModel":
        return cls(kind="discrete", atoms=tuple(atoms))

    @property
    def is_discrete(self) -> bool:
        return self.kind == "discrete"

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "normal":
            return self.mean + self.stddev * rng.standard_normal(size)
        values = np.array([v for v, _ in self.atoms])
        probs = np.array([p for _, p in self.atoms])
        probs = probs / probs.sum()  # remove the <= 1e-12 rounding slack
        return rng.choice(values, size=size, p=probs)
