"""Models whose true price and continuation values are known exactly.

They back the convergence-rate and boundary studies: the value of an estimated
stopping rule is computed exactly (chain policy evaluation or quadrature), so
biases far below Monte Carlo noise remain measurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .dp import DpConfig, EstimatorChain
from .errors import InvalidInput
from .localpoly import KernelSpec
from .models import ExerciseGrid, FiniteChain, PathEnsemble, simulate_chain, stream_uniforms
from .oracles import (
    PowerPutParams,
    black_scholes_call_zero_rate,
    evaluate_chain_policy,
    exact_chain_dp,
    payoff_table,
    power_put_c0,
)
from .payoffs import PayoffSpec


@dataclass(frozen=True, eq=False)
class ChainModel:
    """A finite chain plus payoff, priced by exact backward induction."""

    chain: FiniteChain
    payoff: PayoffSpec
    discount_per_step: float = 1.0
    start_index: int = 1
    name: str = "chain"

    def __post_init__(self):
        sol = exact_chain_dp(self.chain, self.payoff, self.discount_per_step, self.start_index)
        object.__setattr__(self, "_solution", sol)
        object.__setattr__(self, "_table", payoff_table(self.chain, self.payoff))
        reach = np.asarray(self.chain.transitions[0], dtype=float)[self.chain.start] > 0
        object.__setattr__(self, "_reachable", np.flatnonzero(reach))

    @property
    def grid(self) -> ExerciseGrid:
        return self.chain.grid

    @property
    def value(self) -> float:
        return float(self._solution.value)

    def exact_continuation(self, k: int) -> np.ndarray:
        return np.asarray(self._solution.continuation[k], dtype=float)

    def simulate(self, M: int, seed: int, stream_offset: int = 0) -> PathEnsemble:
        return simulate_chain(self.chain, M, seed, stream_offset)

    def policy_value(self, est: EstimatorChain) -> float:
        """Exact value of stopping at the first k with C_k <= f_k, using the fitted C_k."""
        L, n = self.chain.L, self.chain.n_states
        stop = [[False] * n for _ in range(L)] + [[True] * n]
        for k in range(self.start_index, L):
            cont = est.continuation(k, self.chain.values)
            stop[k] = list(cont <= np.asarray(self._table[k], dtype=float))
        return float(evaluate_chain_policy(self.chain, self._table, stop, self.discount_per_step,
                                           self.start_index))

    def c1_sup_error(self, est: EstimatorChain) -> float:
        states = self.chain.values[self._reachable]
        fitted = est.continuation(1, states)
        return float(np.max(np.abs(fitted - self.exact_continuation(1)[self._reachable])))


def linear_margin_chain(n_states: int = 50, halfwidth: float = 0.25) -> ChainModel:
    """Two-period chain whose exercise margins are spread evenly around zero.

    States are ``i / (n - 1)``.  From the start state and from every state the
    next state is uniform on the grid, so ``C_1 = 1/2`` everywhere.  With
    ``f_2(x) = x`` and ``f_1(x) = 1/2 + a - 2 a x`` the margin ``f_1 - C_1`` is
    linear in x and crosses zero with nonzero slope, giving boundary exponent 1.
    """
    if n_states < 2:
        raise InvalidInput("need at least two states")
    if not 0 < halfwidth <= 0.5:
        raise InvalidInput("halfwidth must lie in (0, 1/2] so payoffs stay nonnegative")
    values = np.arange(n_states) / (n_states - 1)
    uniform = np.full((n_states, n_states), 1.0 / n_states)
    grid = ExerciseGrid((0.0, 1.0, 2.0))
    chain = FiniteChain(values, (uniform, uniform), 0, grid)
    a = float(halfwidth)

    def func(k, X):
        x = X[:, 0]
        if k == 1:
            return 0.5 + a - 2.0 * a * x
        if k == 2:
            return x.copy()
        return np.zeros(len(x))

    return ChainModel(chain, PayoffSpec.custom(func), name="linear_margin_chain")


def isolating_bandwidth(chain: FiniteChain, kernel_support: float = 1.0) -> float:
    """Half the smallest distance between states: each fit sees only its own state."""
    v = chain.values
    diff = np.sqrt(((v[:, None, :] - v[None, :, :]) ** 2).sum(axis=2))
    gap = diff[np.triu_indices(len(v), 1)].min()
    return 0.5 * gap / kernel_support


@dataclass(frozen=True, eq=False)
class DigitalModel:
    """Two periods: X_1 uniform on [lo, hi], X_2 a driftless lognormal step from X_1.

    The date-2 payoff is a call with strike ``strike`` so ``C_1`` is a zero-rate
    Black-Scholes call.  The date-1 payoff is a digital that sits ``gap`` above
    C_1(threshold) below the threshold and ``gap`` below it from the threshold on;
    with the threshold at the strike and ``gap = gap_ratio * C_1(threshold)``
    every state is at least ``gap`` away from the exercise boundary.
    """

    lo: float = 0.5
    hi: float = 1.5
    sigma: float = 0.2
    delta: float = 1.0
    strike: float = 1.0
    gap_ratio: float = 0.5
    quadrature_points: int = 20000
    start_index: int = 1
    discount_per_step: float = 1.0
    name: str = "digital_two_period"
    payoff: PayoffSpec = field(init=False)

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise InvalidInput("need 0 < lo < hi")
        if min(self.sigma, self.delta, self.strike) <= 0:
            raise InvalidInput("sigma, delta and strike must be positive")
        if not 0 < self.gap_ratio < 1:
            raise InvalidInput("gap_ratio must lie in (0, 1)")
        level = float(self.c1(self.strike))
        payoff = PayoffSpec.digital(self.strike, level, self.gap_ratio * level,
                                    PayoffSpec.max_call(self.strike), terminal_date=2)
        object.__setattr__(self, "payoff", payoff)
        n = self.quadrature_points
        nodes = self.lo + (self.hi - self.lo) * (np.arange(n) + 0.5) / n
        object.__setattr__(self, "_nodes", nodes[:, None])
        object.__setattr__(self, "_f1", payoff.values(1, nodes[:, None]))
        object.__setattr__(self, "_c1", self.c1(nodes))

    @property
    def grid(self) -> ExerciseGrid:
        return ExerciseGrid((0.0, 1.0, 1.0 + self.delta))

    @property
    def gap(self) -> float:
        return self.payoff.gap

    def c1(self, x):
        return black_scholes_call_zero_rate(self.strike, self.sigma, self.delta, x)

    @property
    def value(self) -> float:
        return float(np.mean(np.maximum(self._f1, self._c1)))

    def simulate(self, M: int, seed: int, stream_offset: int = 0) -> PathEnsemble:
        u = stream_uniforms(seed, stream_offset, M, 2)
        x1 = self.lo + (self.hi - self.lo) * u[:, 0]
        vol = self.sigma * math.sqrt(self.delta)
        x2 = x1 * np.exp(vol * ndtri(u[:, 1]) - 0.5 * vol**2)
        x0 = 0.5 * (self.lo + self.hi)
        states = np.stack([np.full(M, x0), x1, x2], axis=1)[:, :, None]
        return PathEnsemble(states, self.grid, np.array([x0]), seed, stream_offset)

    def policy_value(self, est: EstimatorChain) -> float:
        cont = est.continuation(1, self._nodes)
        return float(np.mean(np.where(cont <= self._f1, self._f1, self._c1)))

    def c1_sup_error(self, est: EstimatorChain) -> float:
        return float(np.max(np.abs(est.continuation(1, self._nodes) - self._c1)))

    def margins(self, n: int, seed: int, stream_offset: int = 0) -> np.ndarray:
        """|C_1 - f_1| at n date-1 states drawn from the model."""
        u = stream_uniforms(seed, stream_offset, n, 1)[:, 0]
        x = self.lo + (self.hi - self.lo) * u
        return np.abs(self.c1(x) - self.payoff.values(1, x[:, None]))


def power_put_margins(params: PowerPutParams, n: int, seed: int, upper: float | None = None,
                      stream_offset: int = 0) -> np.ndarray:
    """|C_0 - f_0| for the power put at n start states uniform on (0, upper]."""
    upper = params.strike if upper is None else float(upper)
    if upper <= 0:
        raise InvalidInput("upper bound of the start-state range must be positive")
    u = stream_uniforms(seed, stream_offset, n, 1)[:, 0]
    x = upper * u
    f0 = PayoffSpec.power_put(params.strike, params.alpha).values(0, x[:, None])
    return np.abs(power_put_c0(params, x) - f0)


def uniform_margins(n: int, seed: int, stream_offset: int = 0) -> np.ndarray:
    return stream_uniforms(seed, stream_offset, n, 1)[:, 0]


def chain_dp_config(model: ChainModel, degree: int = 0, kernel=None, truncation: bool = True) -> DpConfig:
    kernel = KernelSpec("triangle", isolating_bandwidth(model.chain)) if kernel is None else kernel
    return DpConfig(degree=degree, kernel=kernel, truncation=truncation,
                    discount_per_step=model.discount_per_step, start_index=model.start_index)
