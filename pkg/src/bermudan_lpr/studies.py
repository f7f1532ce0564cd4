"""Experiment drivers: bandwidth sweeps, convergence rates, boundary exponents."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dp import DpConfig, backward_induct
from .errors import InvalidInput, Unsupported
from .localpoly import KernelSpec, bandwidth_rule
from .oracles import AlphaFit, boundary_alpha_fit
from .pricing import Experiment, PricingReport, replicate, replication_rows, replication_seed


@dataclass(frozen=True)
class RegressionPlan:
    """How to build the regression for a given sample size.

    A fixed ``bandwidth`` wins; otherwise ``bandwidth_rule(M, beta, nu, d)``.
    """

    degree: int = 0
    kernel: str = "triangle"
    bandwidth: float | None = None
    beta: float | None = None
    nu: float = 0.0
    truncation: bool = True
    c_max: float | None = None

    def __post_init__(self):
        if self.bandwidth is None and self.beta is None:
            raise InvalidInput("regression needs either a bandwidth or beta for the bandwidth rule")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise InvalidInput("bandwidth must be positive")

    def bandwidth_for(self, M: int, d: int) -> float:
        if self.bandwidth is not None:
            return float(self.bandwidth)
        return bandwidth_rule(M, self.beta, self.nu, d)

    def dp_config(self, M: int, d: int, discount_per_step: float = 1.0, start_index: int = 1) -> DpConfig:
        return DpConfig(degree=self.degree, kernel=KernelSpec(self.kernel, self.bandwidth_for(M, d)),
                        nu=self.nu, discount_per_step=discount_per_step, truncation=self.truncation,
                        c_max=self.c_max, start_index=start_index)


# ---------------------------------------------------------------- bandwidth sweep


def bandwidth_study(experiment: Experiment, h_grid, R: int, threads: int = 1) -> list[tuple[float, PricingReport]]:
    """Replicate the experiment at each bandwidth with the same seeds (common random numbers)."""
    h_grid = [float(h) for h in h_grid]
    if not h_grid:
        raise InvalidInput("bandwidth grid is empty")
    if any(not h > 0 for h in h_grid):
        raise InvalidInput("bandwidths must be positive")
    out = []
    for h in h_grid:
        dp = experiment.dp
        cfg = DpConfig(dp.degree, dp.kernel.with_bandwidth(h), dp.nu, dp.discount_per_step,
                       dp.truncation, dp.c_max, dp.start_index)
        out.append((h, replicate(experiment.with_dp(cfg), R, threads)))
    return out


def bandwidth_rows(results) -> list:
    rows = []
    for h, report in results:
        rows.extend(replication_rows(report, h))
    return rows


def bandwidth_summary(results) -> list[dict]:
    return [{"h": h, "v_hat": r.v_hat, "se_hat": r.se_hat, "v_tilde": r.v_tilde, "se_tilde": r.se_tilde}
            for h, r in results]


# ---------------------------------------------------------------- rates


@dataclass
class RateRow:
    M: int
    h: float
    bias_hat: float
    bias_hat_se: float
    bias_c: float
    bias_c_se: float


@dataclass
class RateStudy:
    value: float
    rows: list
    slope_hat: float | None
    slope_c: float | None


RATE_COLUMNS = ["M", "h", "bias_hat", "bias_hat_se", "bias_c", "bias_c_se"]


def loglog_slope(x, y) -> float | None:
    """Least-squares slope of log y on log x over the positive entries; None if fewer than two."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return None
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se


def rate_study(model, M_grid, R: int, plan: RegressionPlan, master_seed: int = 0, threads: int = 1) -> RateStudy:
    """Bias of the stopping-rule value and sup error of C_1 as M grows.

    ``model`` must price policies exactly (``policy_value``) and expose exact
    continuation values (``c1_sup_error``); replication r uses the same seed at
    every M.
    """
    if not all(hasattr(model, a) for a in ("policy_value", "c1_sup_error", "value")):
        raise Unsupported("rate study needs a model with an exact price oracle")
    M_grid = [int(m) for m in M_grid]
    if not M_grid:
        raise InvalidInput("M grid is empty")
    if any(b <= a for a, b in zip(M_grid, M_grid[1:])) or M_grid[0] < 2:
        raise InvalidInput("M grid must be increasing and start at 2 or more")
    if R < 1:
        raise InvalidInput("need at least one replication")
    d = model.simulate(1, 0).d
    v0 = model.value

    def task(args):
        M, r = args
        cfg = plan.dp_config(M, d, model.discount_per_step, model.start_index)
        paths = model.simulate(M, replication_seed(master_seed, r), 0)
        est = backward_induct(paths, model.payoff, cfg)
        return v0 - model.policy_value(est), model.c1_sup_error(est)

    jobs = [(M, r) for M in M_grid for r in range(R)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, jobs))
    else:
        results = [task(j) for j in jobs]
    rows = []
    for i, M in enumerate(M_grid):
        chunk = results[i * R:(i + 1) * R]
        bh, bh_se = _mean_se([b for b, _ in chunk])
        bc, bc_se = _mean_se([c for _, c in chunk])
        rows.append(RateRow(M, plan.bandwidth_for(M, d), bh, bh_se, bc, bc_se))
    Ms = [r.M for r in rows]
    return RateStudy(v0, rows, loglog_slope(Ms, [r.bias_hat for r in rows]),
                     loglog_slope(Ms, [r.bias_c for r in rows]))


def rate_rows(study: RateStudy) -> list:
    return [[r.M, r.h, r.bias_hat, r.bias_hat_se, r.bias_c, r.bias_c_se] for r in study.rows]


# ---------------------------------------------------------------- boundary exponent

BOUNDARY_COLUMNS = ["delta", "p", "used"]


def boundary_study(margins, delta_grid, min_hits: int = 20) -> tuple[AlphaFit, list]:
    fit = boundary_alpha_fit(margins, delta_grid, min_hits)
    rows = [[float(dl), float(p), bool(u)] for dl, p, u in zip(delta_grid, fit.p, fit.used)]
    return fit, rows
