"""Least-squares Monte Carlo construction of the price curves.

The curves are expanded in a hut-function basis: J triangular bumps of width
2h with peaks spaced h apart, symmetric around zero. The basis spans exactly
the piecewise-linear functions with knots at the peaks and forms a partition
of unity between the outer peaks, so coefficient vectors and curve values at
the peaks coincide.

One fixed sample S = (g_k, e_k) of equidistant states and noise draws is
projected through the backward recursion. At each period the fixed point is
found by inner iteration: evaluate the current guess at the sampled states,
shift by abatement and noise, evaluate the next-period curve there, and
project the results back onto the basis through the cached normal equations.
Coefficients are clipped into [0, penalty] and pooled monotone after every
projection; iteration stops when successive curves agree at the sampled
states within the inner tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, ConvergenceError
from .model import (
    AbatementFunction,
    DigitalFunctional,
    Functional,
    NoiseModel,
    PriceFunctional,
    PricingConfig,
    digital_terminal,
)


@dataclass(frozen=True)
class HutBasis:
    """Equidistant hut-function basis.

    peaks z_j = -(J-1)h/2 + (j-1)h for j = 1..J, bump j is
    psi_j(x) = max(0, 1 - |z_j - x|/h). Only adjacent bumps overlap, so the
    Gram matrix of any sample is tridiagonal.
    """

    size: int
    spacing: float

    def __post_init__(self):
        if self.size < 2:
            raise ConfigurationError(f"basis needs >= 2 functions, got {self.size}")
        if not (self.spacing > 0.0):
            raise ConfigurationError(f"spacing must be > 0, got {self.spacing}")

    @property
    def peaks(self) -> np.ndarray:
        half = 0.5 * (self.size - 1) * self.spacing
        return np.linspace(-half, half, self.size)

    def evaluate(self, x) -> np.ndarray:
        """Matrix of psi_j(x_k), shape (len(x), size)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.maximum(0.0, 1.0 - np.abs(self.peaks[None, :] - x[:, None]) / self.spacing)

    def functional(self, coefficients: np.ndarray, bound: float, validate: bool = True) -> PriceFunctional:
        """Curve with knot values = coefficients, clamped outside the span."""
        return PriceFunctional(
            grid=self.peaks, values=np.asarray(coefficients, dtype=float),
            bound=bound, validate=validate,
        )


@dataclass(frozen=True)
class ProjectionSample:
    """Fixed projection sample: states g_k, one noise draw e_k per state."""

    states: np.ndarray
    draws: np.ndarray
    seed: int

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        d = np.asarray(self.draws, dtype=float)
        if s.ndim != 1 or s.shape != d.shape or s.size < 1:
            raise ConfigurationError("sample states/draws must be matching 1-d arrays")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "draws", d)

    @property
    def size(self) -> int:
        return int(self.states.size)


def build_sample(basis: HutBasis, noise: NoiseModel, size: int, seed: int) -> ProjectionSample:
    """Equidistant states across the basis span plus seeded noise draws."""
    if size < basis.size:
        raise ConfigurationError(
            f"sample size {size} must be >= basis size {basis.size}"
        )
    peaks = basis.peaks
    states = np.linspace(peaks[0], peaks[-1], size)
    draws = noise.draw(np.random.default_rng(seed), size)
    return ProjectionSample(states=states, draws=np.asarray(draws, dtype=float), seed=seed)


class DesignMatrix:
    """Cached design matrix, Gram matrix and factorization for one sample."""

    def __init__(self, basis: HutBasis, sample: ProjectionSample):
        if sample.size < basis.size:
            raise ConfigurationError("sample must have at least as many points as basis functions")
        self.basis = basis
        self.sample = sample
        self.matrix = basis.evaluate(sample.states)
        self.gram = self.matrix.T @ self.matrix
        self.rank_deficient = False
        try:
            self._cho = scipy.linalg.cho_factor(self.gram)
        except scipy.linalg.LinAlgError:
            self._cho = None
            self.rank_deficient = True

    def solve(self, targets: np.ndarray) -> np.ndarray:
        """Normal-equation solve of min ||M q - targets||; minimum-norm when
        the sample leaves a basis gap (rank-deficient Gram)."""
        rhs = self.matrix.T @ np.asarray(targets, dtype=float)
        if self._cho is not None:
            return scipy.linalg.cho_solve(self._cho, rhs)
        q, *_ = np.linalg.lstsq(self.gram, rhs, rcond=None)
        return q


def project(matrix: DesignMatrix, targets: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of the targets over the sampled states."""
    targets = np.asarray(targets, dtype=float)
    if targets.shape != matrix.sample.states.shape:
        raise ConfigurationError("targets must match the sample size")
    return matrix.solve(targets)


def pav_non_decreasing(values: np.ndarray) -> np.ndarray:
    """L2 projection onto non-decreasing vectors (pool adjacent violators)."""
    means: List[float] = []
    counts: List[int] = []
    for v in np.asarray(values, dtype=float):
        m, c = float(v), 1
        while means and means[-1] > m:
            c_prev = counts.pop()
            m = (m * c + means.pop() * c_prev) / (c + c_prev)
            c += c_prev
        means.append(m)
        counts.append(c)
    return np.repeat(means, counts)


def postprocess_coefficients(coefficients: np.ndarray, bound: float) -> np.ndarray:
    """Clip into [0, bound], then pool monotone."""
    return pav_non_decreasing(np.clip(np.asarray(coefficients, dtype=float), 0.0, bound))


@dataclass(frozen=True)
class LsmcSettings:
    """Knobs for the projection solver.

    inner_tolerance is absolute in currency units (default 1e-4 * penalty).
    relaxation < 1 damps the inner iteration (mixing factor on successive
    coefficient vectors) for steep abatement feedback.
    """

    sample_size: int = 1000
    seed: int = 0
    inner_tolerance: Optional[float] = None
    max_inner: int = 50
    relaxation: float = 1.0

    def __post_init__(self):
        if self.sample_size < 2:
            raise ConfigurationError("sample_size must be >= 2")
        if self.inner_tolerance is not None and not (self.inner_tolerance > 0.0):
            raise ConfigurationError("inner_tolerance must be > 0")
        if self.max_inner < 1:
            raise ConfigurationError("max_inner must be >= 1")
        if not (0.0 < self.relaxation <= 1.0):
            raise ConfigurationError("relaxation must lie in (0, 1]")

    def resolved_tolerance(self, penalty: float) -> float:
        return self.inner_tolerance if self.inner_tolerance is not None else 1e-4 * penalty


@dataclass
class ApmcmStep:
    """Converged coefficients for one period plus iteration diagnostics."""

    coefficients: np.ndarray        # post-processed, internal units
    shifted_states: np.ndarray      # g_k - c(alpha(g_k)) + e_k used for the final projection
    residuals: List[float]          # sup-norm change at sampled states per projection
    iterations: int
    rank_deficient: bool


def apmcm_step(
    next_functional: Functional,
    sample: ProjectionSample,
    matrix: DesignMatrix,
    abate: Callable,
    penalty: float,
    inner_tolerance: float,
    max_inner: int = 50,
    relaxation: float = 1.0,
) -> ApmcmStep:
    """One backward period of the projection fixed point.

    Starts the inner iteration from the next-period curve, projects shifted
    evaluations onto the basis, post-processes, and repeats until successive
    curves agree at the sampled states within inner_tolerance. Raises
    ConvergenceError (with the residual history) past max_inner projections.
    """
    g = sample.states
    e = sample.draws

    current: Functional = next_functional
    current_at_g = np.asarray(current(g), dtype=float)
    coeffs: Optional[np.ndarray] = None
    prev_shift: Optional[np.ndarray] = None
    shifts_used: Optional[np.ndarray] = None
    residuals: List[float] = []

    while True:
        shifted = g - abate(current_at_g) + e
        if prev_shift is not None and np.array_equal(shifted, prev_shift):
            # the iteration map reproduces the current curve exactly
            return ApmcmStep(
                coefficients=coeffs,
                shifted_states=shifts_used,
                residuals=residuals,
                iterations=len(residuals),
                rank_deficient=matrix.rank_deficient,
            )
        if len(residuals) >= max_inner:
            break
        targets = next_functional(shifted)
        q_new = postprocess_coefficients(matrix.solve(targets), penalty)
        if relaxation < 1.0 and coeffs is not None:
            q_new = (1.0 - relaxation) * coeffs + relaxation * q_new
        candidate = matrix.basis.functional(q_new, bound=penalty)
        candidate_at_g = candidate(g)
        residuals.append(float(np.max(np.abs(candidate_at_g - current_at_g))))
        prev_shift = shifted
        shifts_used = shifted
        coeffs = q_new
        current = candidate
        current_at_g = candidate_at_g
        if residuals[-1] < inner_tolerance:
            return ApmcmStep(
                coefficients=coeffs,
                shifted_states=shifts_used,
                residuals=residuals,
                iterations=len(residuals),
                rank_deficient=matrix.rank_deficient,
            )
    raise ConvergenceError(
        f"inner iteration did not reach {inner_tolerance:.3e} within "
        f"{max_inner} projections (last residual {residuals[-1]:.3e})",
        history=residuals,
    )


@dataclass
class ApmcmResult:
    """Backward-sweep output: curves, coefficients and per-period diagnostics.

    alphas[t] are currency-unit functionals for t = 0..T (alpha_T is the
    exact digital). shifted_states[t] are the sampled next-period states that
    produced coefficients[t]; the call valuation reuses them so that its
    backward projections are the exact linear twin of this sweep.
    """

    config: PricingConfig
    basis: HutBasis
    sample: ProjectionSample
    matrix: DesignMatrix
    alphas: List[Functional]
    coefficients: List[np.ndarray]
    shifted_states: List[np.ndarray]
    residual_histories: List[List[float]]
    iterations: List[int]
    rank_deficient: bool


def run_apmcm(
    config: PricingConfig,
    abate: AbatementFunction,
    noise: NoiseModel,
    basis: HutBasis,
    settings: Optional[LsmcSettings] = None,
) -> ApmcmResult:
    """Full backward sweep t = T-1 .. 0 over one shared sample and matrix."""
    settings = settings or LsmcSettings()
    penalty = config.penalty
    tol_currency = settings.resolved_tolerance(penalty)

    if config.normalize:
        pen_int, tol_int, scale = 1.0, tol_currency / penalty, penalty

        def abate_int(a):
            return abate(np.asarray(a) * penalty)

    else:
        pen_int, tol_int, scale = penalty, tol_currency, 1.0
        abate_int = abate

    sample = build_sample(basis, noise, settings.sample_size, settings.seed)
    matrix = DesignMatrix(basis, sample)

    next_int: Functional = DigitalFunctional(level=pen_int)
    steps: List[ApmcmStep] = []
    for _t in range(config.horizon - 1, -1, -1):
        step = apmcm_step(
            next_int,
            sample,
            matrix,
            abate_int,
            pen_int,
            tol_int,
            settings.max_inner,
            settings.relaxation,
        )
        steps.append(step)
        next_int = basis.functional(step.coefficients, bound=pen_int)

    steps.reverse()  # index by t
    alphas: List[Functional] = [
        basis.functional(step.coefficients * scale, bound=penalty) for step in steps
    ]
    alphas.append(digital_terminal(config))
    return ApmcmResult(
        config=config,
        basis=basis,
        sample=sample,
        matrix=matrix,
        alphas=alphas,
        coefficients=[step.coefficients * scale for step in steps],
        shifted_states=[step.shifted_states for step in steps],
        residual_histories=[step.residuals for step in steps],
        iterations=[step.iterations for step in steps],
        rank_deficient=matrix.rank_deficient,
    )
