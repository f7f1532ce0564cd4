"""Markov process simulators on an exercise-date grid.

Every path draws its randomness from its own counter-based stream: path ``m``
of an ensemble is a pure function of ``(seed, stream_offset + m)``.  The stream
is numpy's Philox4x64 with the 64-bit seed as key, the stream index in counter
word 0 and a block index in counter word 1, so a whole ensemble is produced by
one ``random_raw`` call per block while any single path can be regenerated on
its own.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .errors import InvalidInput

_U64 = 1 << 64
_MAX_STREAM = 1 << 63


def stream_uniforms(seed: int, stream_offset: int, n_paths: int, n_draws: int) -> np.ndarray:
    """Uniforms on (0, 1), shape ``(n_paths, n_draws)``, one counter stream per row."""
    if not 0 <= seed < _U64:
        raise InvalidInput(f"seed must be an unsigned 64-bit integer, got {seed}")
    if stream_offset < 0 or stream_offset + n_paths >= _MAX_STREAM:
        raise InvalidInput(f"stream range [{stream_offset}, {stream_offset + n_paths}) out of bounds")
    n_blocks = max(1, math.ceil(n_draws / 4))
    raw = np.empty((n_paths, 4 * n_blocks), dtype=np.uint64)
    for j in range(n_blocks):
        # Philox increments the counter before each block, so row m sees word0 = offset + m + 1
        bitgen = np.random.Philox(key=seed, counter=[stream_offset, j, 0, 0])
        raw[:, 4 * j : 4 * j + 4] = bitgen.random_raw(4 * n_paths).reshape(n_paths, 4)
    top53 = (raw[:, :n_draws] >> np.uint64(11)).astype(np.float64)
    return (top53 + 0.5) * 2.0**-53


def stream_normals(seed: int, stream_offset: int, n_paths: int, n_draws: int) -> np.ndarray:
    return ndtri(stream_uniforms(seed, stream_offset, n_paths, n_draws))


@dataclass(frozen=True, eq=False)
class GbmParams:
    d: int
    r: float
    dividend: float
    sigma: float
    correlation: np.ndarray | None = None
    _factor: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.d < 1:
            raise InvalidInput("d must be >= 1")
        if self.sigma < 0:
            raise InvalidInput("sigma must be >= 0")
        if self.correlation is None:
            return
        rho = np.asarray(self.correlation, dtype=float)
        if rho.shape != (self.d, self.d):
            raise InvalidInput(f"correlation must be {self.d}x{self.d}")
        if not np.allclose(rho, rho.T, atol=1e-12) or not np.allclose(np.diag(rho), 1.0, atol=1e-12):
            raise InvalidInput("correlation must be symmetric with unit diagonal")
        evals, evecs = np.linalg.eigh(rho)
        if evals.min() < -1e-10:
            raise InvalidInput("correlation matrix is not positive semidefinite")
        try:
            factor = np.linalg.cholesky(rho)
        except np.linalg.LinAlgError:
            # singular but PSD: symmetric square root
            factor = evecs * np.sqrt(np.clip(evals, 0.0, None))
        object.__setattr__(self, "correlation", rho)
        object.__setattr__(self, "_factor", factor)

    @property
    def correlation_factor(self) -> np.ndarray | None:
        """Lower factor A with A A^T = correlation, or None for independent assets."""
        if self.correlation is None or np.array_equal(self.correlation, np.eye(self.d)):
            return None
        return self._factor


@dataclass(frozen=True)
class ExerciseGrid:
    times: tuple[float, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        if len(times) < 2:
            raise InvalidInput("exercise grid needs t0 and at least one exercise date")
        if times[0] < 0:
            raise InvalidInput("t0 must be >= 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidInput("exercise times must be strictly increasing")

    @classmethod
    def uniform(cls, maturity: float, L: int, t0: float = 0.0) -> "ExerciseGrid":
        if L < 1 or maturity <= 0:
            raise InvalidInput("uniform grid needs L >= 1 and positive maturity")
        return cls(tuple(t0 + i * maturity / L for i in range(L + 1)))

    @property
    def L(self) -> int:
        return len(self.times) - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(np.asarray(self.times))

    @property
    def is_uniform(self) -> bool:
        dt = self.steps
        return bool(np.allclose(dt, dt[0], rtol=1e-12, atol=0.0))


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """``states[m, j]`` is path m at grid date j; read-only after construction."""

    states: np.ndarray
    grid: ExerciseGrid
    x0: np.ndarray
    seed: int
    stream_offset: int

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim != 3 or states.shape[1] != self.grid.L + 1:
            raise InvalidInput("states must have shape (M, L+1, d)")
        if not np.all(np.isfinite(states)):
            raise InvalidInput("non-finite state in ensemble")
        states.setflags(write=False)
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        x0.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "x0", x0)

    @property
    def M(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    def at(self, j: int) -> np.ndarray:
        return self.states[:, j, :]

    def streams(self) -> range:
        return range(self.stream_offset, self.stream_offset + self.M)


def simulate_gbm(params: GbmParams, x0, grid: ExerciseGrid, M: int, seed: int,
                 stream_offset: int = 0) -> PathEnsemble:
    """Exact lognormal transitions of d-asset GBM with drift r - dividend between grid dates."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (params.d,):
        raise InvalidInput(f"x0 must have {params.d} components")
    if np.any(x0 <= 0):
        raise InvalidInput("x0 components must be positive")
    if M < 1:
        raise InvalidInput("M must be >= 1")
    L, d = grid.L, params.d
    z = stream_normals(seed, stream_offset, M, L * d).reshape(M, L, d)
    factor = params.correlation_factor
    if factor is not None:
        z = np.einsum("mld,ed->mle", z, factor)
    dt = grid.steps
    drift = (params.r - params.dividend - 0.5 * params.sigma**2) * dt
    log_inc = drift[None, :, None] + params.sigma * np.sqrt(dt)[None, :, None] * z
    log_path = np.concatenate([np.zeros((M, 1, d)), np.cumsum(log_inc, axis=1)], axis=1)
    states = x0[None, None, :] * np.exp(log_path)
    return PathEnsemble(states, grid, x0, seed, stream_offset)


@dataclass(frozen=True, eq=False)
class FiniteChain:
    """Time-inhomogeneous Markov chain on a finite set of points in R^d.

    ``transitions[k][i, j]`` is P(X(t_{k+1}) = values[j] | X(t_k) = values[i]).
    """

    values: np.ndarray
    transitions: tuple
    start: int
    grid: ExerciseGrid

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)
        n = values.shape[0]
        if not 0 <= self.start < n:
            raise InvalidInput("start index outside state set")
        if len(self.transitions) != self.grid.L:
            raise InvalidInput("need one transition matrix per exercise interval")
        for P in self.transitions:
            P = np.asarray(P, dtype=float)
            if P.shape != (n, n) or np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
                raise InvalidInput("transition matrices must be row-stochastic n x n")

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def L(self) -> int:
        return self.grid.L


def simulate_chain_indices(chain: FiniteChain, M: int, seed: int, stream_offset: int = 0) -> np.ndarray:
    """State indices, shape (M, L+1), by inverse-CDF sampling of each transition row."""
    if M < 1:
        raise InvalidInput("M must be >= 1")
    u = stream_uniforms(seed, stream_offset, M, chain.L)
    idx = np.empty((M, chain.L + 1), dtype=np.int64)
    idx[:, 0] = chain.start
    n = chain.n_states
    for k, P in enumerate(chain.transitions):
        cdf = np.cumsum(np.asarray(P, dtype=float), axis=1)[idx[:, k]]
        nxt = (u[:, k, None] >= cdf).sum(axis=1)
        idx[:, k + 1] = np.minimum(nxt, n - 1)
    return idx


def simulate_chain(chain: FiniteChain, M: int, seed: int, stream_offset: int = 0) -> PathEnsemble:
    idx = simulate_chain_indices(chain, M, seed, stream_offset)
    return PathEnsemble(chain.values[idx], chain.grid, chain.values[chain.start], seed, stream_offset)


def write_ensemble_csv(ensemble: PathEnsemble, path) -> None:
    """One row per (path, date): m, j, t, x1..xd, floats in shortest round-trip form."""
    if hasattr(path, "write"):
        _write_ensemble_rows(ensemble, path)
        return
    with Path(path).open("w", newline="") as fh:
        _write_ensemble_rows(ensemble, fh)


def _write_ensemble_rows(ensemble: PathEnsemble, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["m", "j", "t"] + [f"x{i + 1}" for i in range(ensemble.d)])
    times = ensemble.grid.times
    for m in range(ensemble.M):
        for j, t in enumerate(times):
            writer.writerow([m, j, repr(t)] + [repr(float(v)) for v in ensemble.states[m, j]])


def read_ensemble_states(path) -> tuple[np.ndarray, tuple[float, ...]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    M = max(int(r[0]) for r in body) + 1
    L1 = max(int(r[1]) for r in body) + 1
    d = len(rows[0]) - 3
    states = np.empty((M, L1, d))
    times = [0.0] * L1
    for r in body:
        m, j = int(r[0]), int(r[1])
        times[j] = float(r[2])
        states[m, j] = [float(v) for v in r[3:]]
    return states, tuple(times)
