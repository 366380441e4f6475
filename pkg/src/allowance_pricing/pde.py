"""Continuous-time limit: a degenerate parabolic PDE for the price curve.

In the diffusion limit the price functional alpha(t, g) solves

    d_t alpha - c(alpha) d_g alpha + (1/2) sigma(t)^2 d_gg alpha = 0

backward from the digital alpha(T, g) = pi * 1[g >= 0]. Marching in
remaining time s = T - t turns this into a right-moving transport term plus
diffusion. The transport coefficient c(alpha) >= 0 is frozen at the current
step and upwinded with a backward difference; diffusion is Crank-Nicolson,
solved as a tridiagonal system per step. The combined explicit weights stay
a convex combination only when

    c_max * dt/dg + sigma^2 * dt / (2 dg^2) <= 1,

which is checked up front; past it the scheme loses monotonicity, so the
solver refuses and suggests a finer time grid instead of clipping.

The digital terminal data is replaced by a linear ramp over one cell on each
side of the jump for the march (second-order accurate when the jump sits on
a node); the returned surface still reports the exact digital at t = T.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, SolverError
from .model import AbatementFunction, PricingConfig


@dataclass(frozen=True)
class DiffusionSpec:
    """Volatility of the state: one value, or one per period [t, t+1)."""

    sigma: Union[float, Sequence[float]]

    def schedule(self, horizon: int) -> np.ndarray:
        s = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if s.ndim != 1:
            raise ConfigurationError("sigma must be a scalar or a flat sequence")
        if len(s) == 1:
            s = np.full(horizon, s[0])
        if len(s) != horizon:
            raise ConfigurationError(
                f"sigma schedule needs 1 or {horizon} entries, got {len(s)}"
            )
        if np.any(~np.isfinite(s)) or np.any(s < 0.0):
            raise ConfigurationError("sigma values must be finite and >= 0")
        return s


@dataclass(frozen=True)
class PdeGrid:
    """Uniform space-time mesh; the state grid should straddle zero."""

    n_time: int
    n_space: int
    g_min: float
    g_max: float

    def __post_init__(self):
        if self.n_time < 1:
            raise ConfigurationError(f"n_time must be >= 1, got {self.n_time}")
        if self.n_space < 5:
            raise ConfigurationError(f"n_space must be >= 5, got {self.n_space}")
        if not (self.g_min < 0.0 < self.g_max):
            raise ConfigurationError(
                f"state grid must straddle 0, got [{self.g_min}, {self.g_max}]"
            )

    @property
    def states(self) -> np.ndarray:
        return np.linspace(self.g_min, self.g_max, self.n_space)

    @property
    def dg(self) -> float:
        return (self.g_max - self.g_min) / (self.n_space - 1)


@dataclass(frozen=True)
class PdeSurface:
    """Solved price surface alpha(t, g); rows follow `times` ascending."""

    times: np.ndarray
    grid: np.ndarray
    values: np.ndarray
    penalty: float

    def slice_at(self, t: float) -> np.ndarray:
        ts = self.times
        if not ts[0] <= t <= ts[-1]:
            raise ConfigurationError(f"time {t} outside [{ts[0]}, {ts[-1]}]")
        j = int(np.searchsorted(ts, t, side="right")) - 1
        if j >= len(ts) - 1:
            return self.values[-1].copy()
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1.0 - w) * self.values[j] + w * self.values[j + 1]

    def value(self, t: float, g) -> Union[float, np.ndarray]:
        row = self.slice_at(t)
        out = np.interp(np.asarray(g, dtype=float), self.grid, row)
        if np.ndim(g) == 0:
            return float(out)
        return out


def _ramped_terminal(states: np.ndarray, dg: float, penalty: float) -> np.ndarray:
    return penalty * np.clip((states + dg) / (2.0 * dg), 0.0, 1.0)


def stability_bound(
    config: PricingConfig,
    abate: AbatementFunction,
    diffusion: DiffusionSpec,
    grid: PdeGrid,
) -> float:
    """Largest admissible dt for a monotone step on this mesh."""
    sig = diffusion.schedule(config.horizon)
    c_max = float(np.max(abate(np.asarray([config.penalty]))))
    s2 = float(np.max(sig)) ** 2
    dg = grid.dg
    rate = c_max / dg + s2 / (2.0 * dg * dg)
    if rate <= 0.0:
        return np.inf
    return 1.0 / rate


def solve_pde(
    config: PricingConfig,
    abate: AbatementFunction,
    diffusion: DiffusionSpec,
    grid: PdeGrid,
    terminal: Optional[np.ndarray] = None,
) -> PdeSurface:
    """March the curve from the compliance date back to t = 0.

    Dirichlet ends (0 on the left, penalty on the right) reflect the clamp
    asymptotics of the digital payoff; interior values must then stay inside
    [0, penalty] by the discrete comparison argument, and the solver treats
    any excursion as a failure rather than clipping it away.

    `terminal` replaces the default one-cell-smoothed digital as marching
    data (values on the state grid, inside [0, penalty]); the comparison
    principle of the monotone scheme is tested through this hook.
    """
    horizon = config.horizon
    penalty = config.penalty
    sig = diffusion.schedule(horizon)
    states = grid.states
    dg = grid.dg
    dt = horizon / grid.n_time

    bound = stability_bound(config, abate, diffusion, grid)
    if dt > bound * (1.0 + 1e-12):
        need = int(np.ceil(horizon / bound))
        raise SolverError(
            f"dt = {dt:.3e} breaks the monotonicity bound {bound:.3e} on this "
            f"mesh; use n_time >= {need} or coarsen the state grid"
        )

    # banded Crank-Nicolson factor per distinct period volatility;
    # r carries the physical 1/2 of the diffusion term
    n_in = grid.n_space - 2
    banded = {}
    for s in np.unique(sig):
        r = 0.5 * s * s * dt / (dg * dg)
        ab = np.zeros((3, n_in))
        ab[0, 1:] = -0.5 * r
        ab[1, :] = 1.0 + r
        ab[2, :-1] = -0.5 * r
        banded[float(s)] = (r, ab)

    if terminal is None:
        u = _ramped_terminal(states, dg, penalty)
        top = np.where(states >= 0.0, penalty, 0.0)  # reported t = T slice stays exact
    else:
        u = np.asarray(terminal, dtype=float).copy()
        if u.shape != states.shape:
            raise ConfigurationError(
                f"terminal data needs {states.shape[0]} values, got {u.shape}"
            )
        if u.min() < 0.0 or u.max() > penalty:
            raise ConfigurationError("terminal data must lie in [0, penalty]")
        top = u.copy()
    u[0], u[-1] = 0.0, penalty
    rows = [top]
    tol = 1e-9 * penalty

    for k in range(grid.n_time):
        t_mid = horizon - (k + 0.5) * dt
        s = float(sig[min(int(t_mid), horizon - 1)])
        r, ab = banded[s]

        speed = abate(u)
        rhs = u.copy()
        rhs[1:] -= (dt / dg) * speed[1:] * (u[1:] - u[:-1])
        rhs[0], rhs[-1] = 0.0, penalty

        w = rhs[1:-1] + 0.5 * r * (rhs[:-2] - 2.0 * rhs[1:-1] + rhs[2:])
        w[-1] += 0.5 * r * penalty  # right Dirichlet neighbour, left one is 0
        interior = scipy.linalg.solve_banded((1, 1), ab, w)

        u = np.concatenate(([0.0], interior, [penalty]))
        if u.min() < -tol or u.max() > penalty + tol:
            raise SolverError(
                f"solution escaped [0, {penalty}] at step {k + 1} "
                f"(range [{u.min():.3e}, {u.max():.3e}])"
            )
        rows.append(u.copy())

    rows.reverse()  # rows now run t = 0 .. T
    times = np.concatenate((horizon - dt * np.arange(grid.n_time, 0, -1), [float(horizon)]))
    return PdeSurface(
        times=times,
        grid=states.copy(),
        values=np.vstack(rows),
        penalty=penalty,
    )


@dataclass(frozen=True)
class SdePaths:
    """Euler-Maruyama paths of the state with prices read off a surface."""

    times: np.ndarray
    states: np.ndarray
    terminal_prices: np.ndarray
    seed: int

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]


def simulate_sde(
    config: PricingConfig,
    abate: AbatementFunction,
    diffusion: DiffusionSpec,
    surface: PdeSurface,
    n_paths: int,
    n_steps: int,
    seed: int,
    initial_state: float = 0.0,
) -> SdePaths:
    """Simulate dG = -c(alpha(t, G)) dt + sigma(t) dW to the compliance date.

    Terminal prices apply the digital payoff exactly, so the sample mean of
    the terminal price estimates the time-zero price at the initial state.
    """
    if n_paths < 1:
        raise ConfigurationError(f"n_paths must be >= 1, got {n_paths}")
    if n_steps < 1:
        raise ConfigurationError(f"n_steps must be >= 1, got {n_steps}")
    horizon = config.horizon
    sig = diffusion.schedule(horizon)
    dt = horizon / n_steps
    sqdt = np.sqrt(dt)
    rng = np.random.default_rng(seed)

    times = dt * np.arange(n_steps + 1)
    states = np.empty((n_paths, n_steps + 1))
    states[:, 0] = initial_state
    for k in range(n_steps):
        t = times[k]
        s = float(sig[min(int(t), horizon - 1)])
        prices = surface.value(t, states[:, k])
        drift = -abate(prices) * dt
        shock = s * sqdt * rng.standard_normal(n_paths) if s > 0.0 else 0.0
        states[:, k + 1] = states[:, k] + drift + shock

    terminal = np.where(states[:, -1] >= 0.0, config.penalty, 0.0)
    return SdePaths(times=times, states=states, terminal_prices=terminal, seed=seed)


def convergence_table(
    config: PricingConfig,
    abate: AbatementFunction,
    diffusion: DiffusionSpec,
    grids: Sequence[PdeGrid],
    reference: PdeSurface,
    t_eval: float = 0.0,
    g_window: Optional[float] = None,
) -> List[dict]:
    """Max error of each mesh against a reference surface at one time slice.

    Rows carry dt, dg and the sup error over |g| <= g_window (full overlap
    when omitted), ready for empirical-order estimates via log2 ratios.
    """
    rows = []
    for g in grids:
        surf = solve_pde(config, abate, diffusion, g)
        pts = surf.grid
        if g_window is not None:
            pts = pts[np.abs(pts) <= g_window]
        err = np.max(np.abs(surf.value(t_eval, pts) - reference.value(t_eval, pts)))
        rows.append(
            {
                "n_time": g.n_time,
                "n_space": g.n_space,
                "dt": config.horizon / g.n_time,
                "dg": g.dg,
                "error": float(err),
            }
        )
    return rows
