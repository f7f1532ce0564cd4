"""Suboptimal stopping from estimated continuation values and the low-biased price.

Replication r uses seed ``(master_seed + r * 2**32) mod 2**64``; training paths
take streams ``[0, M)`` and pricing paths streams ``[PRICING_STREAM_OFFSET,
PRICING_STREAM_OFFSET + N)`` of that seed, so both sets are independent and
every replication can be reproduced on its own.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dp import DpConfig, EstimatorChain, backward_induct, tilde_price_with_se
from .errors import InvalidInput
from .models import ExerciseGrid, GbmParams, PathEnsemble, simulate_gbm
from .payoffs import PayoffSpec

PRICING_STREAM_OFFSET = 1 << 40
REPLICATION_STRIDE = 1 << 32


def replication_seed(master_seed: int, r: int) -> int:
    return (master_seed + r * REPLICATION_STRIDE) % (1 << 64)


@dataclass(frozen=True, eq=False)
class StoppingPolicy:
    chain: EstimatorChain | None
    payoff: PayoffSpec
    L: int
    start_index: int = 1
    discount_per_step: float = 1.0

    @classmethod
    def from_chain(cls, chain: EstimatorChain, payoff: PayoffSpec) -> "StoppingPolicy":
        return cls(chain, payoff, chain.L, chain.config.start_index, chain.config.discount_per_step)

    @classmethod
    def european(cls, payoff: PayoffSpec, L: int, discount_per_step: float = 1.0) -> "StoppingPolicy":
        """Never exercise before the last date."""
        return cls(None, payoff, L, L, discount_per_step)

    def continuation(self, k: int, X) -> np.ndarray:
        if self.chain is None:
            return np.full(len(X), np.inf)
        return self.chain.continuation(k, X)


def stop_indices(policy: StoppingPolicy, states: np.ndarray) -> np.ndarray:
    """First k >= start_index with C_k(X_k) <= f_k(X_k) for each path in states (n, L+1, d)."""
    states = np.asarray(states, dtype=float)
    n = states.shape[0]
    out = np.full(n, policy.L, dtype=np.int64)
    alive = np.arange(n)
    for k in range(policy.start_index, policy.L):
        if alive.size == 0:
            break
        X = states[alive, k, :]
        stop = policy.continuation(k, X) <= policy.payoff.values(k, X)
        out[alive[stop]] = k
        alive = alive[~stop]
    return out


def stop_index(policy: StoppingPolicy, path) -> int:
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
    return int(stop_indices(policy, path[None])[0])


@dataclass
class LowerBound:
    v_hat: float
    se_hat: float
    stops: np.ndarray


def lower_bound_price(policy: StoppingPolicy, fresh_paths: PathEnsemble, payoff: PayoffSpec | None = None) -> LowerBound:
    payoff = policy.payoff if payoff is None else payoff
    chain = policy.chain
    if chain is not None and fresh_paths.seed == chain.seed:
        lo, hi = chain.stream_offset, chain.stream_offset + chain.M
        flo, fhi = fresh_paths.stream_offset, fresh_paths.stream_offset + fresh_paths.M
        if flo < hi and lo < fhi:
            raise InvalidInput("pricing paths share random streams with the training ensemble")
    if fresh_paths.grid.L != policy.L:
        raise InvalidInput("pricing paths live on a different exercise grid")
    stops = stop_indices(policy, fresh_paths.states)
    idx = np.arange(fresh_paths.M)
    stopped_states = fresh_paths.states[idx, stops, :]
    cash = np.zeros(fresh_paths.M)
    for k in np.unique(stops):
        sel = stops == k
        cash[sel] = payoff.values(int(k), stopped_states[sel]) * policy.discount_per_step ** int(k)
    se = float(cash.std(ddof=1) / math.sqrt(len(cash))) if len(cash) > 1 else 0.0
    return LowerBound(float(cash.mean()), se, stops)


@dataclass(frozen=True, eq=False)
class Experiment:
    """Everything one train/fit/price cycle needs; simulate(M, seed, stream_offset)."""

    simulate: Callable[[int, int, int], PathEnsemble]
    payoff: PayoffSpec
    dp: DpConfig
    M: int
    N: int
    master_seed: int = 0
    echo: dict = field(default_factory=dict)

    def with_dp(self, dp: DpConfig) -> "Experiment":
        return Experiment(self.simulate, self.payoff, dp, self.M, self.N, self.master_seed, self.echo)


def gbm_experiment(params: GbmParams, x0, grid: ExerciseGrid, payoff: PayoffSpec, dp: DpConfig,
                   M: int, N: int, master_seed: int = 0, echo: dict | None = None) -> Experiment:
    x0 = np.asarray(x0, dtype=float)

    def simulate(n, seed, offset):
        return simulate_gbm(params, x0, grid, n, seed, offset)

    return Experiment(simulate, payoff, dp, M, N, master_seed, dict(echo or {}))


@dataclass
class ReplicationResult:
    replication: int
    seed: int
    v_hat: float
    v_tilde: float
    se_hat: float
    se_tilde: float


@dataclass
class PricingReport:
    v_hat: float
    v_tilde: float
    se_hat: float
    se_tilde: float
    M: int
    N: int
    replications: list
    config: dict
    seeds: list

    def to_dict(self) -> dict:
        out = asdict(self)
        out["replications"] = [asdict(r) for r in self.replications]
        return out


def run_replication(experiment: Experiment, r: int) -> ReplicationResult:
    seed = replication_seed(experiment.master_seed, r)
    train = experiment.simulate(experiment.M, seed, 0)
    chain = backward_induct(train, experiment.payoff, experiment.dp)
    v_tilde, se_tilde = tilde_price_with_se(train, chain, experiment.payoff)
    fresh = experiment.simulate(experiment.N, seed, PRICING_STREAM_OFFSET)
    low = lower_bound_price(StoppingPolicy.from_chain(chain, experiment.payoff), fresh)
    return ReplicationResult(r, seed, low.v_hat, v_tilde, low.se_hat, se_tilde)


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def replicate(experiment: Experiment, R: int, threads: int = 1) -> PricingReport:
    """R independent cycles; results do not depend on ``threads``."""
    if R < 1:
        raise InvalidInput("need at least one replication")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reps = list(pool.map(lambda r: run_replication(experiment, r), range(R)))
    else:
        reps = [run_replication(experiment, r) for r in range(R)]
    if R == 1:
        rep = reps[0]
        v_hat, se_hat, v_tilde, se_tilde = rep.v_hat, rep.se_hat, rep.v_tilde, rep.se_tilde
    else:
        v_hat, se_hat = _mean_se([r.v_hat for r in reps])
        v_tilde, se_tilde = _mean_se([r.v_tilde for r in reps])
    config = dict(experiment.echo)
    config.update(dp=experiment.dp.describe(), payoff=experiment.payoff.describe(),
                  master_seed=experiment.master_seed, replications=R)
    return PricingReport(v_hat, v_tilde, se_hat, se_tilde, experiment.M, experiment.N, reps, config,
                         [r.seed for r in reps])


REPLICATION_COLUMNS = ["replication", "h", "v_hat", "v_tilde", "se_hat", "se_tilde"]


def replication_rows(report: PricingReport, h: float) -> list:
    return [[r.replication, h, r.v_hat, r.v_tilde, r.se_hat, r.se_tilde] for r in report.replications]


def format_replication_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPLICATION_COLUMNS)
    for rep, h, *vals in rows:
        w.writerow([int(rep), repr(float(h))] + [repr(float(v)) for v in vals])
    return buf.getvalue()


def parse_replication_csv(text: str) -> list:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != REPLICATION_COLUMNS:
        raise InvalidInput("not a replication table")
    return [[int(r[0])] + [float(v) for v in r[1:]] for r in rows[1:]]


def write_replication_csv(rows, path) -> None:
    Path(path).write_text(format_replication_csv(rows))
