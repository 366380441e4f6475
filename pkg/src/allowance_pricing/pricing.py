"""Path simulation, martingale diagnostics and European call valuation.

The allowance price along a simulated path is read off the solved curves,
A_t = alpha_t(G_t), and the state moves by G_{t+1} = G_t - c(A_t) + eps.
Because the curves were built backward from the digital terminal condition,
(A_t) must be a martingale; the diagnostic buckets one-step increments by
state quantiles and flags any bucket whose mean drift exceeds a few standard
errors.

Calls are valued by projecting the payoff backward along the exact same
sampled states the curve construction used. With strike zero the projections
reproduce the price curves themselves, so the valuation is consistent with
the spot by construction rather than by numerical accident. The observed
spot enters through inversion of the current price curve.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ConvergenceError, DomainError, ModelError, SolverError
from .fixedpoint import expectation_of_shifted
from .lsmc import ApmcmResult, HutBasis, LsmcSettings, postprocess_coefficients, run_apmcm
from .model import (
    AbatementFunction,
    DigitalFunctional,
    Functional,
    NoiseModel,
    PriceFunctional,
    PricingConfig,
    evaluate_functional,
)


@dataclass(frozen=True)
class CallSpec:
    """European call on the allowance price: payoff (A_tau - strike)+ at tau."""

    strike: float
    maturity: int

    def __post_init__(self):
        if not (np.isfinite(self.strike) and self.strike >= 0.0):
            raise ModelError(f"strike must be finite and >= 0, got {self.strike}")
        if int(self.maturity) != self.maturity or self.maturity < 1:
            raise ModelError(f"maturity must be a period index >= 1, got {self.maturity}")
        object.__setattr__(self, "strike", float(self.strike))
        object.__setattr__(self, "maturity", int(self.maturity))


@dataclass(frozen=True)
class SimulatedPaths:
    """Forward-simulated states and prices, one row per path.

    Column i holds time times[i]; the last column is the compliance date,
    where prices take only the exact values 0 and penalty.
    """

    states: np.ndarray
    prices: np.ndarray
    times: np.ndarray
    seed: int

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]


def simulate_paths(
    config: PricingConfig,
    abate: AbatementFunction,
    noise: NoiseModel,
    alphas: Sequence[Functional],
    n_paths: int,
    seed: int,
    initial_state: float = 0.0,
    t_start: int = 0,
) -> SimulatedPaths:
    """Simulate (G_t, A_t) forward from a common initial state."""
    horizon = config.horizon
    if len(alphas) != horizon + 1:
        raise ConfigurationError(
            f"need curves for t = 0..{horizon}, got {len(alphas)}"
        )
    if not 0 <= t_start < horizon:
        raise ConfigurationError(f"t_start must be in [0, {horizon - 1}], got {t_start}")
    if n_paths < 1:
        raise ConfigurationError(f"n_paths must be >= 1, got {n_paths}")
    if not np.isfinite(initial_state):
        raise ConfigurationError(f"initial state must be finite, got {initial_state}")

    steps = horizon - t_start
    draws = noise.draw(np.random.default_rng(seed), (n_paths, steps))
    states = np.empty((n_paths, steps + 1))
    prices = np.empty((n_paths, steps + 1))
    states[:, 0] = initial_state
    for i in range(steps):
        prices[:, i] = evaluate_functional(alphas[t_start + i], states[:, i])
        states[:, i + 1] = states[:, i] - abate(prices[:, i]) + draws[:, i]
    prices[:, steps] = evaluate_functional(alphas[horizon], states[:, steps])
    return SimulatedPaths(
        states=states,
        prices=prices,
        times=np.arange(t_start, horizon + 1),
        seed=seed,
    )


@dataclass(frozen=True)
class BucketDrift:
    time: int
    index: int
    n_buckets: int
    state_lo: float
    state_hi: float
    count: int
    mean: float
    stderr: float
    flagged: bool


@dataclass(frozen=True)
class MartingaleReport:
    """Bucketed one-step drift statistics plus the terminal-mean check."""

    buckets: List[BucketDrift]
    initial_price: float
    terminal_mean: float
    terminal_stderr: float
    terminal_flagged: bool
    n_paths: int
    threshold: float
    terminal_threshold: float

    @property
    def flagged(self) -> List[BucketDrift]:
        return [b for b in self.buckets if b.flagged]

    @property
    def passed(self) -> bool:
        return not self.flagged and not self.terminal_flagged

    def to_text(self) -> str:
        lines = [
            f"martingale diagnostic over {self.n_paths} paths "
            f"(flag at {self.threshold:g} standard errors)"
        ]
        for b in self.buckets:
            tag = "FLAG" if b.flagged else "ok"
            lines.append(
                f"  t={b.time} bucket {b.index + 1}/{b.n_buckets} "
                f"g in [{b.state_lo:+.3f}, {b.state_hi:+.3f}] n={b.count} "
                f"drift {b.mean:+.4e} se {b.stderr:.4e} {tag}"
            )
        tag = "FLAG" if self.terminal_flagged else "ok"
        lines.append(
            f"  terminal mean {self.terminal_mean:.6f} vs initial price "
            f"{self.initial_price:.6f} se {self.terminal_stderr:.4e} "
            f"({self.terminal_threshold:g} se allowed) {tag}"
        )
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def martingale_diagnostic(
    paths: SimulatedPaths,
    buckets: int = 20,
    threshold: float = 4.0,
    min_paths: int = 10_000,
    terminal_threshold: float = 3.0,
    bound: Optional[float] = None,
) -> MartingaleReport:
    """Test E[A_{t+1} - A_t | G_t bucket] = 0 at every period.

    Buckets are state quantiles, so each carries roughly the same number of
    paths; degenerate edges (for example the deterministic first column)
    collapse into fewer buckets. A bucket is flagged when its mean drift
    exceeds `threshold` standard errors, the terminal mean when it misses the
    (deterministic) initial price by more than `terminal_threshold`.

    Pass `bound` (the model penalty) when the terminal column is two-point on
    {0, bound}. Deep out-of-the-money buckets then rarely realize any nonzero
    terminal value, so the sample standard error collapses to the spread of
    the current prices and the tiny, genuine curve value reads as a huge
    drift. Under the null the bucket mean itself fixes the two-point variance
    m(bound - m), so the last step's standard error is floored with it.
    """
    n = paths.n_paths
    if n < min_paths:
        raise ConfigurationError(
            f"diagnostic needs at least {min_paths} paths, got {n}"
        )
    if buckets < 1:
        raise ConfigurationError(f"buckets must be >= 1, got {buckets}")
    if bound is not None and (not np.isfinite(bound) or bound <= 0.0):
        raise ConfigurationError(f"bound must be finite and > 0, got {bound}")

    rows: List[BucketDrift] = []
    n_steps = paths.states.shape[1] - 1
    for i in range(n_steps):
        g = paths.states[:, i]
        d = paths.prices[:, i + 1] - paths.prices[:, i]
        edges = np.unique(np.quantile(g, np.linspace(0.0, 1.0, buckets + 1)))
        nb = max(len(edges) - 1, 1)
        idx = np.clip(np.searchsorted(edges, g, side="right") - 1, 0, nb - 1)
        for b in range(nb):
            sel = idx == b
            count = int(sel.sum())
            if count == 0:
                continue
            mean = float(d[sel].mean())
            stderr = float(d[sel].std(ddof=1) / np.sqrt(count)) if count > 1 else 0.0
            if bound is not None and i == n_steps - 1 and count > 1:
                m = float(np.clip(paths.prices[sel, i].mean(), 0.0, bound))
                stderr = max(stderr, float(np.sqrt(m * (bound - m) / count)))
            flagged = abs(mean) > threshold * stderr if stderr > 0.0 else mean != 0.0
            rows.append(
                BucketDrift(
                    time=int(paths.times[i]),
                    index=b,
                    n_buckets=nb,
                    state_lo=float(g[sel].min()),
                    state_hi=float(g[sel].max()),
                    count=count,
                    mean=mean,
                    stderr=stderr,
                    flagged=flagged,
                )
            )

    initial = float(paths.prices[0, 0])
    terminal = paths.prices[:, -1]
    t_mean = float(terminal.mean())
    t_se = float(terminal.std(ddof=1) / np.sqrt(n))
    gap = abs(t_mean - initial)
    t_flag = gap > terminal_threshold * t_se if t_se > 0.0 else gap != 0.0
    return MartingaleReport(
        buckets=rows,
        initial_price=initial,
        terminal_mean=t_mean,
        terminal_stderr=t_se,
        terminal_flagged=t_flag,
        n_paths=n,
        threshold=threshold,
        terminal_threshold=terminal_threshold,
    )


def invert_alpha(functional: PriceFunctional, spot: float) -> float:
    """State g* with alpha(g*) = spot; midpoint of the interval when flat.

    Raises DomainError when the spot lies outside the curve's attainable
    range, which is how an inconsistent observed price shows up.
    """
    if not isinstance(functional, PriceFunctional):
        raise ModelError("state inversion needs a piecewise-linear price curve")
    s = float(spot)
    if not np.isfinite(s) or s < functional.lo or s > functional.hi:
        raise DomainError(
            f"spot {s} outside the attainable price range "
            f"[{functional.lo:.6f}, {functional.hi:.6f}]"
        )
    v = functional.values
    g = functional.grid
    left = int(np.searchsorted(v, s, side="left"))
    right = int(np.searchsorted(v, s, side="right"))
    if left < right:
        # exact hits: the preimage is [g[left], g[right-1]]
        return float(0.5 * (g[left] + g[right - 1]))
    w = (s - v[left - 1]) / (v[left] - v[left - 1])
    return float(g[left - 1] + w * (g[left] - g[left - 1]))


@dataclass(frozen=True)
class CallPrice:
    """Backward-projected call value and the curves it marched through.

    coefficients[i] holds the value curve at time t_now + i on the basis
    peaks; the terminal payoff itself is applied exactly, never projected.
    """

    value: float
    state: float
    spot: float
    spec: CallSpec
    t_now: int
    coefficients: List[np.ndarray]


def price_european_call(
    result: ApmcmResult,
    spec: CallSpec,
    spot: float,
    t_now: int,
) -> CallPrice:
    """Value the call by backward projection along the recorded sample.

    Each step projects next-period values evaluated at the exact shifted
    states recorded while the price curves were built, then clips and pools
    like the curve construction does. At strike zero the targets coincide
    with the curve targets, so the valuation returns the spot; at strike >=
    penalty every target is zero and so is the price.
    """
    horizon = result.config.horizon
    penalty = result.config.penalty
    if spec.maturity > horizon:
        raise ConfigurationError(
            f"maturity {spec.maturity} is past the compliance date {horizon}"
        )
    if not 0 <= t_now < spec.maturity:
        raise ConfigurationError(
            f"t_now must be in [0, {spec.maturity - 1}], got {t_now}"
        )

    state = invert_alpha(result.alphas[t_now], spot)

    def payoff(values: np.ndarray) -> np.ndarray:
        return np.maximum(values - spec.strike, 0.0)

    current: Functional = result.alphas[spec.maturity]
    coeffs: List[np.ndarray] = []
    for u in range(spec.maturity - 1, t_now - 1, -1):
        shifted = result.shifted_states[u]
        if u == spec.maturity - 1:
            targets = payoff(evaluate_functional(current, shifted))
        else:
            targets = evaluate_functional(current, shifted)
        q = postprocess_coefficients(result.matrix.solve(targets), penalty)
        coeffs.append(q)
        current = result.basis.functional(q, bound=penalty)
    coeffs.reverse()

    value = float(evaluate_functional(current, state))
    return CallPrice(
        value=value,
        state=state,
        spot=float(spot),
        spec=spec,
        t_now=int(t_now),
        coefficients=coeffs,
    )


def mc_call_estimate(
    config: PricingConfig,
    abate: AbatementFunction,
    noise: NoiseModel,
    alphas: Sequence[Functional],
    spec: CallSpec,
    state: float,
    t_now: int,
    n_paths: int = 100_000,
    seed: int = 0,
) -> tuple:
    """Forward Monte Carlo cross-estimate of the call value from state g*.

    Returns (mean, standard error) of the payoff over fresh paths. This is
    the sampling-uncertainty companion to the backward projection value.
    """
    if not 0 <= t_now < spec.maturity <= config.horizon:
        raise ConfigurationError(
            f"need 0 <= t_now < maturity <= {config.horizon}, "
            f"got t_now={t_now}, maturity={spec.maturity}"
        )
    paths = simulate_paths(
        config, abate, noise, alphas, n_paths, seed,
        initial_state=state, t_start=t_now,
    )
    at_maturity = paths.prices[:, spec.maturity - t_now]
    pay = np.maximum(at_maturity - spec.strike, 0.0)
    return float(pay.mean()), float(pay.std(ddof=1) / np.sqrt(n_paths))


def replicate_call_prices(
    config: PricingConfig,
    abate: AbatementFunction,
    noise: NoiseModel,
    basis: HutBasis,
    settings: LsmcSettings,
    spec: CallSpec,
    spot: float,
    t_now: int,
    replicates: int = 5,
    max_tries: int = 40,
) -> np.ndarray:
    """Reprice over fresh projection samples to estimate sampling error.

    Seeds run from settings.seed + 1 upward; samples whose inner iteration
    does not settle, or whose curves cannot attain the observed spot, are
    skipped. The spread of the returned values is the honest uncertainty of
    the projection-based price, which forward paths under the fitted curves
    cannot provide (their drift error is fit bias, not sampling noise).
    """
    if replicates < 2:
        raise ConfigurationError(f"need at least 2 replicates, got {replicates}")
    values: List[float] = []
    for attempt in range(max_tries):
        seed = settings.seed + 1 + attempt
        try:
            result = run_apmcm(config, abate, noise, basis, replace(settings, seed=seed))
            values.append(price_european_call(result, spec, spot, t_now).value)
        except (ConvergenceError, DomainError):
            continue
        if len(values) == replicates:
            return np.array(values)
    raise SolverError(
        f"only {len(values)} of {replicates} replicate valuations "
        f"converged within {max_tries} attempts"
    )


@dataclass(frozen=True)
class ReferenceCallValue:
    """Call value surface on the reference grid, rows t = t_now..maturity."""

    grid: np.ndarray
    curves: np.ndarray
    times: np.ndarray
    spec: CallSpec

    def value(self, t: int, g) -> float:
        i = int(t - self.times[0])
        if not 0 <= i < len(self.times):
            raise ConfigurationError(f"time {t} outside [{self.times[0]}, {self.times[-1]}]")
        out = np.interp(np.asarray(g, dtype=float), self.grid, self.curves[i])
        if np.ndim(g) == 0:
            return float(out)
        return out


def reference_call_curves(
    config: PricingConfig,
    abate: AbatementFunction,
    noise: NoiseModel,
    alphas: Sequence[Functional],
    spec: CallSpec,
    t_now: int = 0,
    *,
    method: str = "exact",
    quadrature_nodes: int = 64,
) -> ReferenceCallValue:
    """Grid-marched call values under the reference curves.

    The backward step takes the closed-form expectation of the next value
    curve at the shifted grid, the same operator the curve solver uses, so
    this route shares no sampling with the projection valuation and serves
    as its cross-check. A compliance-date maturity keeps the digital payoff
    exact instead of interpolating its jump.
    """
    horizon = config.horizon
    if len(alphas) != horizon + 1:
        raise ConfigurationError(f"need curves for t = 0..{horizon}, got {len(alphas)}")
    if spec.maturity > horizon:
        raise ConfigurationError(
            f"maturity {spec.maturity} is past the compliance date {horizon}"
        )
    if not 0 <= t_now < spec.maturity:
        raise ConfigurationError(f"t_now must be in [0, {spec.maturity - 1}], got {t_now}")

    penalty = config.penalty
    grid = None
    for f in alphas:
        if isinstance(f, PriceFunctional):
            grid = f.grid
            break
    if grid is None:
        raise ConfigurationError("reference curves carry no grid to march on")

    terminal = alphas[spec.maturity]
    if isinstance(terminal, DigitalFunctional):
        level = max(terminal.level - spec.strike, 0.0)
        current: Functional = DigitalFunctional(level=level) if level > 0.0 else (
            PriceFunctional(grid, np.zeros_like(grid), bound=penalty, validate=False)
        )
        top = evaluate_functional(terminal, grid) - spec.strike
    else:
        vals = np.maximum(evaluate_functional(terminal, grid) - spec.strike, 0.0)
        current = PriceFunctional(grid, vals, bound=penalty, validate=False)
        top = vals

    rows = [np.maximum(np.asarray(top, dtype=float), 0.0)]
    for u in range(spec.maturity - 1, t_now - 1, -1):
        shifts = grid - abate(evaluate_functional(alphas[u], grid))
        vals = expectation_of_shifted(
            current, shifts, noise, method=method, quadrature_nodes=quadrature_nodes
        )
        vals = np.clip(np.asarray(vals, dtype=float), 0.0, penalty)
        current = PriceFunctional(grid, vals, bound=penalty, validate=False)
        rows.append(vals)
    rows.reverse()

    return ReferenceCallValue(
        grid=grid,
        curves=np.vstack(rows),
        times=np.arange(t_now, spec.maturity + 1),
        spec=spec,
    )
