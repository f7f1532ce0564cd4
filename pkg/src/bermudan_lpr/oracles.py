"""Independent reference values used to check the regression engine."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.stats import norm

from .errors import InvalidInput, Unsupported
from .models import ExerciseGrid, FiniteChain, GbmParams
from .payoffs import PayoffSpec

# ---------------------------------------------------------------- lattice


@dataclass(frozen=True, eq=False)
class LatticeParams:
    steps: int  # per exercise interval
    gbm: GbmParams
    strike: float
    x0: tuple
    grid: ExerciseGrid
    start_index: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidInput("lattice needs at least one step per interval")


def lattice_max_call_2d(params: LatticeParams) -> float:
    """Bermudan max-call on two independent GBM assets via a product of two CRR trees.

    Exercise is allowed only on grid dates with index >= start_index.
    """
    g = params.gbm
    if g.d != 2:
        raise Unsupported("the lattice oracle handles exactly two assets")
    if g.correlation_factor is not None:
        raise Unsupported("the lattice oracle assumes independent Brownian motions")
    if not params.grid.is_uniform:
        raise Unsupported("the lattice oracle needs equally spaced exercise dates")
    s = params.steps
    L = params.grid.L
    n = L * s
    dt = float(params.grid.steps[0]) / s
    u = math.exp(g.sigma * math.sqrt(dt))
    if u == 1.0:
        return _deterministic_max_call(params)
    dn = 1.0 / u
    p = (math.exp((g.r - g.dividend) * dt) - dn) / (u - dn)
    if not 0.0 < p < 1.0:
        raise InvalidInput("CRR probability outside (0, 1); refine the lattice")
    disc = math.exp(-g.r * dt)
    x1, x2 = (float(v) for v in params.x0)
    K = params.strike
    e = 2.0 * np.arange(n + 1) - n
    a1 = x1 * u**e
    a2 = x2 * u**e
    V = np.maximum(np.maximum(a1[:, None], a2[None, :]) - K, 0.0)
    _crr2_backward(V, n, s, params.start_index, p, disc, x1, x2, u, K)
    return float(V[0, 0])


@njit(nogil=True, cache=True)
def _crr2_backward(V, n, s, start_index, p, disc, x1, x2, u, K):
    """In-place product-tree induction; V[i1, i2] indexes up-moves of each asset."""
    pp = disc * p * p
    pq = disc * p * (1.0 - p)
    qq = disc * (1.0 - p) * (1.0 - p)
    for j in range(n - 1, -1, -1):
        exercise = j % s == 0 and j // s >= start_index
        for a in range(j + 1):
            s1 = x1 * u ** (2.0 * a - j)
            for b in range(j + 1):
                v = pp * V[a + 1, b + 1] + pq * (V[a + 1, b] + V[a, b + 1]) + qq * V[a, b]
                if exercise:
                    s2 = x2 * u ** (2.0 * b - j)
                    ex = max(s1, s2) - K
                    if ex > v:
                        v = ex
                V[a, b] = v


def _deterministic_max_call(params: LatticeParams) -> float:
    g = params.gbm
    best = 0.0
    x = max(float(v) for v in params.x0)
    for k, t in enumerate(params.grid.times):
        if k < params.start_index:
            continue
        t = t - params.grid.times[0]
        best = max(best, math.exp(-g.r * t) * max(x * math.exp((g.r - g.dividend) * t) - params.strike, 0.0))
    return best


def lattice_convergence(params: LatticeParams, steps_list) -> list:
    rows = []
    for s in steps_list:
        p = LatticeParams(int(s), params.gbm, params.strike, params.x0, params.grid, params.start_index)
        rows.append((int(s), lattice_max_call_2d(p)))
    return rows


# ---------------------------------------------------------------- power put


@dataclass(frozen=True)
class PowerPutParams:
    strike: float
    alpha: float
    sigma: float
    delta: float  # t1 - t0

    def __post_init__(self):
        if min(self.strike, self.alpha, self.sigma, self.delta) <= 0:
            raise InvalidInput("power put parameters must be positive")


def power_put_c0(params: PowerPutParams, x):
    """E[(K^{1/a} - X_1^{1/a})^+ | X_0 = x] for zero-rate Black-Scholes X."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa <= 0):
        raise InvalidInput("power put continuation value needs x > 0")
    K, a, sig, dl = params.strike, params.alpha, params.sigma, params.delta
    vol = sig * math.sqrt(dl)
    d1 = (np.log(xa / K) + (1.0 / a - 0.5) * sig**2 * dl) / vol
    d2 = d1 - vol / a
    growth = math.exp(dl * (1.0 / a - 1.0) * sig**2 / (2.0 * a))
    out = K ** (1.0 / a) * norm.cdf(-d2) - xa ** (1.0 / a) * growth * norm.cdf(-d1)
    return float(out) if np.ndim(out) == 0 else out


def black_scholes_put_zero_rate(K, sigma, delta, x):
    vol = sigma * math.sqrt(delta)
    x = np.asarray(x, dtype=float)
    d1 = (np.log(x / K) + 0.5 * vol**2) / vol
    d2 = d1 - vol
    return K * norm.cdf(-d2) - x * norm.cdf(-d1)


def black_scholes_call_zero_rate(K, sigma, delta, x):
    vol = sigma * math.sqrt(delta)
    x = np.asarray(x, dtype=float)
    d1 = (np.log(x / K) + 0.5 * vol**2) / vol
    d2 = d1 - vol
    return x * norm.cdf(d1) - K * norm.cdf(d2)


# ---------------------------------------------------------------- finite chains

MAX_STATES = 50
MAX_DATES = 6
MAX_OUTCOMES = 10**6


@dataclass
class ChainSolution:
    value: object
    continuation: list  # continuation[k][i], k = 0..L with C_L = 0
    values: list  # Snell envelope V_k(i)
    stop: list  # stop[k][i]: C_k(i) <= f_k(i) and k >= start_index


def payoff_table(chain: FiniteChain, payoff) -> list:
    """Payoffs as nested lists [k][i]; tables pass through untouched (keeps exact types)."""
    if isinstance(payoff, PayoffSpec):
        return [list(payoff.values(k, chain.values)) for k in range(chain.L + 1)]
    table = [list(row) for row in payoff]
    if len(table) != chain.L + 1 or any(len(r) != chain.n_states for r in table):
        raise InvalidInput("payoff table must be (L+1) x n_states")
    return table


def _check_size(chain: FiniteChain):
    if chain.n_states > MAX_STATES or chain.L + 1 > MAX_DATES + 1:
        raise Unsupported(f"exact DP limited to {MAX_STATES} states and L <= {MAX_DATES}")


def exact_chain_dp(chain: FiniteChain, payoff, discount=1, start_index: int = 0) -> ChainSolution:
    """Backward induction on the chain; exact when inputs are Fractions."""
    _check_size(chain)
    f = payoff_table(chain, payoff)
    n, L = chain.n_states, chain.L
    P = [[list(row) for row in m] for m in chain.transitions]
    V = [None] * (L + 1)
    C = [None] * (L + 1)
    stop = [None] * (L + 1)
    zero = f[L][0] * 0
    V[L] = list(f[L])
    C[L] = [zero] * n
    stop[L] = [True] * n
    for k in range(L - 1, -1, -1):
        C[k] = [discount * sum((P[k][i][j] * V[k + 1][j] for j in range(n)), zero) for i in range(n)]
        if k >= start_index:
            stop[k] = [C[k][i] <= f[k][i] for i in range(n)]
            V[k] = [f[k][i] if stop[k][i] else C[k][i] for i in range(n)]
        else:
            stop[k] = [False] * n
            V[k] = list(C[k])
    return ChainSolution(V[0][chain.start], C, V, stop)


def evaluate_chain_policy(chain: FiniteChain, payoff, stop, discount=1, start_index: int = 0):
    """Exact value at the start state of stopping at the first k >= start_index with stop[k][i]."""
    f = payoff_table(chain, payoff)
    n, L = chain.n_states, chain.L
    zero = f[L][0] * 0
    W = list(f[L])
    for k in range(L - 1, -1, -1):
        P = chain.transitions[k]
        cont = [discount * sum((P[i][j] * W[j] for j in range(n)), zero) for i in range(n)]
        if k >= start_index:
            W = [f[k][i] if stop[k][i] else cont[i] for i in range(n)]
        else:
            W = cont
    return W[chain.start]


def enumerate_optimal_value(chain: FiniteChain, payoff, discount=1, start_index: int = 0):
    """Supremum over all adapted stopping times by backward induction on the scenario tree.

    Works on full histories rather than states, so it does not assume the
    optimal rule is Markov.
    """
    _check_size(chain)
    if chain.n_states**chain.L > MAX_OUTCOMES:
        raise Unsupported("too many outcomes to enumerate")
    f = payoff_table(chain, payoff)
    L = chain.L
    P = chain.transitions
    zero = f[L][0] * 0

    def value(k, state, weight):
        # weight = cumulative discount to t0
        here = weight * f[k][state]
        if k == L:
            return here
        cont = zero
        for j, pj in enumerate(P[k][state]):
            if pj:
                cont = cont + pj * value(k + 1, j, weight * discount)
        if k < start_index:
            return cont
        return here if here >= cont else cont

    return value(0, chain.start, discount**0)


def max_over_markov_rules(chain: FiniteChain, payoff, discount=1, start_index: int = 0, limit: int = 1 << 14):
    """Brute force over every state-dependent stop table; tiny instances only."""
    n, L = chain.n_states, chain.L
    free = [(k, i) for k in range(start_index, L) for i in range(n)]
    if 2 ** len(free) > limit:
        raise Unsupported("too many Markov rules to enumerate")
    best = None
    for bits in itertools.product((False, True), repeat=len(free)):
        stop = [[False] * n for _ in range(L)] + [[True] * n]
        for (k, i), b in zip(free, bits):
            stop[k][i] = b
        v = evaluate_chain_policy(chain, payoff, stop, discount, start_index)
        if best is None or v > best:
            best = v
    return best


# ---------------------------------------------------------------- boundary exponent


@dataclass
class AlphaFit:
    alpha_hat: float
    intercept: float
    zero_fraction: float  # share of delta-grid points with no mass in (0, delta]
    p: np.ndarray
    used: np.ndarray


def boundary_alpha_fit(margins, delta_grid, min_hits: int = 20) -> AlphaFit:
    """Slope of log P(0 < margin <= delta) against log delta.

    Grid points with fewer than ``min_hits`` samples are dropped.  If no sample
    falls in (0, max delta] the fit reports alpha_hat = inf (a gap around the
    boundary).
    """
    m = np.abs(np.asarray(margins, dtype=float).reshape(-1))
    deltas = np.asarray(delta_grid, dtype=float)
    if m.size < 1000:
        raise InvalidInput("need at least 1000 margin samples")
    if deltas.size < 1 or np.any(deltas <= 0) or np.any(np.diff(deltas) <= 0):
        raise InvalidInput("delta grid must be positive and increasing")
    pos = np.sort(m[m > 0])
    hits = np.searchsorted(pos, deltas, side="right")
    p = hits / m.size
    zero_fraction = float(np.mean(hits == 0))
    if np.all(hits == 0):
        return AlphaFit(math.inf, math.nan, zero_fraction, p, np.zeros(deltas.size, bool))
    used = hits >= min_hits
    if used.sum() < 2:
        raise InvalidInput("fewer than two grid points with enough hits for a slope")
    slope, intercept = np.polyfit(np.log(deltas[used]), np.log(p[used]), 1)
    return AlphaFit(float(slope), float(intercept), zero_fraction, p, used)
