"""Backward regression of continuation values over the exercise dates.

Continuation estimates are kept in date-k money: the regression target at date
k is ``disc * max(f_{k+1}(X_{k+1}), C_{k+1}(X_{k+1}))`` with ``C_L = 0``, so the
estimate can be compared with ``f_k`` directly.  Training reuses one ensemble
for every level.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .localpoly import ContinuationEstimator, KernelSpec, MonomialBasis
from .models import PathEnsemble
from .payoffs import PayoffSpec


@dataclass(frozen=True)
class DpConfig:
    degree: int = 0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    nu: float = 0.0
    discount_per_step: float = 1.0
    truncation: bool = True
    c_max: float | None = None
    start_index: int = 1
    bandwidths: tuple | None = None  # per-date override for k = 1..L-1

    def __post_init__(self):
        if self.degree < 0:
            raise InvalidInput("degree must be >= 0")
        if not 0 < self.discount_per_step <= 1:
            raise InvalidInput("discount_per_step must lie in (0, 1]")
        if self.nu < 0:
            raise InvalidInput("nu must be >= 0")
        if self.start_index not in (0, 1):
            raise InvalidInput("start_index must be 0 or 1")
        if self.c_max is not None and self.c_max < 0:
            raise InvalidInput("c_max must be nonnegative")

    @classmethod
    def market(cls, rate: float, step: float, **kw) -> "DpConfig":
        return cls(discount_per_step=math.exp(-rate * step), **kw)

    def kernel_at(self, k: int) -> KernelSpec:
        if self.bandwidths is None:
            return self.kernel
        return self.kernel.with_bandwidth(self.bandwidths[k - 1])

    def describe(self) -> dict:
        return {
            "degree": self.degree, "kernel": self.kernel.kind, "bandwidth": self.kernel.bandwidth,
            "nu": self.nu, "discount_per_step": self.discount_per_step, "truncation": self.truncation,
            "c_max": self.c_max, "start_index": self.start_index,
            "bandwidths": None if self.bandwidths is None else list(self.bandwidths),
        }


@dataclass(frozen=True, eq=False)
class EstimatorChain:
    """Continuation estimates C_1..C_{L-1} (C_L = 0 implicit) and their training record."""

    estimators: tuple
    targets: tuple  # targets[k-1] is the response vector used to fit C_k
    config: DpConfig
    L: int
    c_max: float
    seed: int
    stream_offset: int
    M: int
    level_stats: tuple = ()
    _first_states: np.ndarray | None = field(default=None, repr=False)
    _first_payoff: np.ndarray | None = field(default=None, repr=False)
    _first_fit: np.ndarray | None = field(default=None, repr=False)

    @property
    def first_fit(self) -> np.ndarray:
        """C_1 at the date-1 training states (computed on first use)."""
        if self._first_fit is None:
            if self.L < 2:
                fit = np.zeros(self.M)
            else:
                fit = np.asarray(self.continuation(1, self._first_states), dtype=float)
            fit.setflags(write=False)
            object.__setattr__(self, "_first_fit", fit)
        return self._first_fit

    @property
    def c0(self) -> float:
        """Date-0 continuation: all paths start at x0, so the regression is a sample mean."""
        return self.config.discount_per_step * float(np.mean(np.maximum(self._first_payoff, self.first_fit)))

    def continuation(self, k: int, X) -> np.ndarray:
        """C_k at states X (n, d) as used by the stopping rule and the regression targets."""
        X = np.asarray(X, dtype=float)
        if k == self.L:
            return np.zeros(len(X))
        if k == 0:
            return np.full(len(X), self.c0)
        est = self.estimators[k - 1]
        return est.evaluate(X, truncate=self.config.truncation)


def backward_induct(paths: PathEnsemble, payoff: PayoffSpec, config: DpConfig) -> EstimatorChain:
    L, M, d = paths.grid.L, paths.M, paths.d
    basis = MonomialBasis(d, config.degree)
    if L >= 2 and M < basis.size:
        raise InvalidInput(f"M={M} is smaller than the basis size {basis.size}; Gamma is singular everywhere")
    disc = config.discount_per_step
    pay = [payoff.values(k, paths.at(k)) for k in range(L + 1)]
    if config.c_max is not None:
        c_max = float(config.c_max)
    else:
        c_max = max(float(p.max()) for p in pay[1:])
    estimators = []
    targets = []
    stats = []
    cont_next = np.zeros(M)  # C_L at date-L states
    for k in range(L - 1, 0, -1):
        y = disc * np.maximum(pay[k + 1], cont_next)
        est = ContinuationEstimator(paths.at(k), y, basis, config.kernel_at(k), c_max=c_max, nu=config.nu)
        estimators.append(est)
        targets.append(y)
        if k == 1:
            stats.append((k, float(y.mean()), math.nan))
            break
        raw, lam, _ = est.fit_batch(paths.at(k))
        if config.truncation:
            cont_next = est.apply_truncation(raw, lam)
            gated = float(np.mean(lam <= est.gate_threshold))
        else:
            cont_next = raw
            gated = 0.0
        stats.append((k, float(y.mean()), gated))
    estimators.reverse()
    targets.reverse()
    stats.reverse()
    return EstimatorChain(tuple(estimators), tuple(targets), config, L, c_max, paths.seed,
                          paths.stream_offset, M, tuple(stats), paths.at(1), pay[1])


def _check_chain(paths: PathEnsemble, chain: EstimatorChain) -> None:
    if (paths.seed, paths.stream_offset, paths.M, paths.grid.L) != (chain.seed, chain.stream_offset, chain.M, chain.L):
        raise InvalidInput("estimator chain was not built from this ensemble")


def tilde_price(paths: PathEnsemble, chain: EstimatorChain, payoff: PayoffSpec, config: DpConfig | None = None) -> float:
    """Direct estimate: discounted mean over paths of max(f_1, C_1) at date 1."""
    value, _ = tilde_price_with_se(paths, chain, payoff, config)
    return value


def tilde_price_with_se(paths, chain, payoff, config=None) -> tuple[float, float]:
    config = chain.config if config is None else config
    _check_chain(paths, chain)
    disc = config.discount_per_step
    terms = disc * np.maximum(payoff.values(1, paths.at(1)), chain.first_fit)
    value = float(terms.mean())
    se = float(terms.std(ddof=1) / math.sqrt(len(terms))) if len(terms) > 1 else 0.0
    if config.start_index == 0:
        f0 = float(payoff.values(0, paths.x0.reshape(1, -1))[0])
        if f0 >= value:
            return f0, 0.0
    return value, se


def write_level_csv(chain: EstimatorChain, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "mean_target", "gated_fraction"])
        for k, mean, gated in chain.level_stats:
            w.writerow([k, repr(mean), repr(gated)])
