"""Local polynomial regression with an eigenvalue-gated truncation.

For a query point x the estimator solves the kernel-weighted least-squares
problem in the scaled monomials ``((X_m - x) / h)^u``, ``|u| <= l``:

    Gamma[u1, u2] = 1/(M h^d) sum_m z_m^(u1+u2) K(z_m)
    S[u]          = 1/(M h^d) sum_m y_m z_m^u K(z_m)

and returns the constant coefficient of ``Gamma^{-1} S`` (zero when Gamma is
not positive definite).  Degree 0 is the Nadaraya-Watson ratio and has its own
fast path.  The truncated evaluation clips to ``[0, c_max]`` when the smallest
eigenvalue of Gamma exceeds ``h**nu / log M`` and returns 0 otherwise.

Moment sums run in numba loops with a fixed summation order and no fastmath,
so results do not depend on thread count or SIMD width.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy.special import gamma as gamma_fn

from .errors import InvalidInput

KERNEL_CODES = {"triangle": 0, "gaussian": 1, "indicator-ball": 2, "pyramid": 3}
PD_RTOL = 1e-12
_CHUNK = 4096


def _kernel_constant(kind: str, d: int) -> float:
    if kind == "gaussian":
        return (2.0 * math.pi) ** (-d / 2.0)
    if kind == "indicator-ball":
        return gamma_fn(1.0 + d / 2.0) / math.pi ** (d / 2.0)
    return 1.0


@dataclass(frozen=True)
class KernelSpec:
    """Kernel K on R^d with bandwidth h.

    ``triangle`` is ``(1 - |u|^2)^+`` (unnormalised), ``gaussian`` the standard
    normal density, ``indicator-ball`` the uniform density on the unit ball and
    ``pyramid`` the product of ``(1 - |u_i|)^+``.
    """

    kind: str = "triangle"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_CODES:
            raise InvalidInput(f"unknown kernel {self.kind!r}; choose from {sorted(KERNEL_CODES)}")
        if not self.bandwidth > 0:
            raise InvalidInput("bandwidth must be positive")

    @property
    def code(self) -> int:
        return KERNEL_CODES[self.kind]

    def with_bandwidth(self, h: float) -> "KernelSpec":
        return KernelSpec(self.kind, h)

    def __call__(self, u) -> np.ndarray:
        """K(u) for u of shape (..., d); no bandwidth scaling."""
        u = np.asarray(u, dtype=float)
        d = u.shape[-1]
        sq = np.sum(u * u, axis=-1)
        c = _kernel_constant(self.kind, d)
        if self.kind == "triangle":
            return np.maximum(1.0 - sq, 0.0)
        if self.kind == "gaussian":
            return c * np.exp(-0.5 * sq)
        if self.kind == "indicator-ball":
            return np.where(sq <= 1.0, c, 0.0)
        return np.prod(np.maximum(1.0 - np.abs(u), 0.0), axis=-1)


@dataclass(frozen=True)
class MonomialBasis:
    """All multi-indices of total degree <= l, graded then lexicographically descending."""

    d: int
    l: int
    exponents: tuple = field(init=False)

    def __post_init__(self):
        if self.d < 1 or self.l < 0:
            raise InvalidInput("need d >= 1 and l >= 0")
        exps = []
        for deg in range(self.l + 1):
            block = [u for u in itertools.product(range(deg + 1), repeat=self.d) if sum(u) == deg]
            exps.extend(sorted(block, reverse=True))
        object.__setattr__(self, "exponents", tuple(exps))

    @property
    def size(self) -> int:
        return len(self.exponents)

    def as_array(self) -> np.ndarray:
        return np.array(self.exponents, dtype=np.int64).reshape(self.size, self.d)

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.stack([np.prod(z ** np.array(u), axis=-1) for u in self.exponents], axis=-1)


@dataclass
class LocalFitDiagnostics:
    gamma: np.ndarray
    lambda_min: float
    effective_points: int
    truncated: bool = False


@njit(nogil=True, cache=True)
def _weight(code, sq, pyr, cnorm):
    if code == 0:
        return max(1.0 - sq, 0.0)
    if code == 1:
        return cnorm * math.exp(-0.5 * sq)
    if code == 2:
        return cnorm if sq <= 1.0 else 0.0
    return pyr


@njit(nogil=True, cache=True)
def _nw_sums(queries, xt, y, inv_h, code, cnorm):
    """Numerator sum K y, denominator sum K and support count per query; xt is (d, M)."""
    nq, d = queries.shape
    M = xt.shape[1]
    num = np.zeros(nq)
    den = np.zeros(nq)
    cnt = np.zeros(nq, dtype=np.int64)
    for i in range(nq):
        a = 0.0
        b = 0.0
        c = 0
        for m in range(M):
            sq = 0.0
            pyr = 1.0
            for j in range(d):
                t = (xt[j, m] - queries[i, j]) * inv_h
                sq += t * t
                if code == 3:
                    pyr *= max(1.0 - abs(t), 0.0)
            w = _weight(code, sq, pyr, cnorm)
            a += w * y[m]
            b += w
            if w > 0.0:
                c += 1
        num[i] = a
        den[i] = b
        cnt[i] = c
    return num, den, cnt


@njit(nogil=True, cache=True)
def _moment_sums(queries, xt, y, inv_h, code, cnorm, exps):
    """Unscaled Gamma and S sums per query for the monomials listed in exps (N, d)."""
    nq, d = queries.shape
    M = xt.shape[1]
    N = exps.shape[0]
    G = np.zeros((nq, N, N))
    S = np.zeros((nq, N))
    cnt = np.zeros(nq, dtype=np.int64)
    t = np.empty(d)
    z = np.empty(N)
    for i in range(nq):
        for m in range(M):
            sq = 0.0
            pyr = 1.0
            for j in range(d):
                tj = (xt[j, m] - queries[i, j]) * inv_h
                t[j] = tj
                sq += tj * tj
                if code == 3:
                    pyr *= max(1.0 - abs(tj), 0.0)
            w = _weight(code, sq, pyr, cnorm)
            if w == 0.0:
                continue
            cnt[i] += 1
            for a in range(N):
                p = 1.0
                for j in range(d):
                    for _ in range(exps[a, j]):
                        p *= t[j]
                z[a] = p
            wy = w * y[m]
            for a in range(N):
                wa = w * z[a]
                S[i, a] += wy * z[a]
                for b in range(a, N):
                    G[i, a, b] += wa * z[b]
        for a in range(N):
            for b in range(a + 1, N):
                G[i, b, a] = G[i, a, b]
    return G, S, cnt


def _prepare(sample_x, queries):
    xt = np.ascontiguousarray(np.asarray(sample_x, dtype=float).T)
    q = np.asarray(queries, dtype=float)
    if q.ndim == 1:
        q = q.reshape(-1, xt.shape[0]) if xt.shape[0] > 1 else q[:, None]
    return xt, np.ascontiguousarray(q)


def design_batch(sample_x, sample_y, queries, basis: MonomialBasis, kernel: KernelSpec):
    """Scaled Gamma (q, N, N), S (q, N) and support counts for a batch of queries."""
    xt, q = _prepare(sample_x, queries)
    d, M = xt.shape
    y = np.zeros(M) if sample_y is None else np.ascontiguousarray(sample_y, dtype=float)
    h = kernel.bandwidth
    G, S, cnt = _moment_sums(q, xt, y, 1.0 / h, kernel.code, _kernel_constant(kernel.kind, d),
                             basis.as_array())
    scale = 1.0 / (M * h**d)
    return G * scale, S * scale, cnt


def build_design(sample_x, x, basis: MonomialBasis, kernel: KernelSpec, sample_y=None):
    """Gamma, S and diagnostics at a single query point x."""
    sample_x = np.asarray(sample_x, dtype=float)
    if sample_x.ndim == 1:
        sample_x = sample_x[:, None]
    if sample_x.shape[0] < 1:
        raise InvalidInput("need at least one sample")
    G, S, cnt = design_batch(sample_x, sample_y, np.asarray(x, dtype=float).reshape(1, -1), basis, kernel)
    gamma = G[0]
    lam = float(np.linalg.eigvalsh(gamma)[0])
    return gamma, S[0], LocalFitDiagnostics(gamma, lam, int(cnt[0]))


def _solve_batch(G, S):
    """Constant coefficients of Gamma^{-1} S plus extreme eigenvalues; 0 where Gamma is singular."""
    evals = np.linalg.eigvalsh(G)
    lam_min, lam_max = evals[:, 0], evals[:, -1]
    pd = lam_min > PD_RTOL * np.maximum(1.0, lam_max)
    values = np.zeros(G.shape[0])
    if np.any(pd):
        values[pd] = np.linalg.solve(G[pd], S[pd][..., None])[:, 0, 0]
    return values, lam_min, pd


def bandwidth_rule(M: int, beta: float, nu: float, d: int) -> float:
    """Theory bandwidth h = M^(-1 / (2 (beta + nu) + d))."""
    if M < 2 or beta <= 0:
        raise InvalidInput("bandwidth rule needs M >= 2 and beta > 0")
    if nu < 0 or d < 1:
        raise InvalidInput("bandwidth rule needs nu >= 0 and d >= 1")
    return float(M) ** (-1.0 / (2.0 * (beta + nu) + d))


@dataclass(frozen=True, eq=False)
class ContinuationEstimator:
    """Fitted local polynomial regression of sample_y on sample_x; immutable."""

    sample_x: np.ndarray
    sample_y: np.ndarray
    basis: MonomialBasis
    kernel: KernelSpec
    c_max: float = math.inf
    nu: float = 0.0

    def __post_init__(self):
        x = np.array(self.sample_x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.array(self.sample_y, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0] or x.shape[0] < 1:
            raise InvalidInput("sample_x and sample_y must be non-empty with equal length")
        if x.shape[1] != self.basis.d:
            raise InvalidInput("basis dimension does not match sample")
        if not self.c_max >= 0:
            raise InvalidInput("c_max must be nonnegative")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "sample_x", x)
        object.__setattr__(self, "sample_y", y)
        object.__setattr__(self, "_xt", np.ascontiguousarray(x.T))

    @property
    def M(self) -> int:
        return self.sample_x.shape[0]

    @property
    def d(self) -> int:
        return self.sample_x.shape[1]

    @property
    def gate_threshold(self) -> float:
        logm = math.log(self.M)
        return math.inf if logm == 0.0 else self.kernel.bandwidth**self.nu / logm

    def _queries(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1) if X.shape[0] == self.d else X[:, None]
        if X.shape[1] != self.d:
            raise InvalidInput("query dimension does not match sample")
        return np.ascontiguousarray(X)

    def fit_batch(self, X):
        """Raw fits, smallest Gamma eigenvalues and support counts at each row of X."""
        q = self._queries(X)
        n = q.shape[0]
        values = np.empty(n)
        lam = np.empty(n)
        cnt = np.empty(n, dtype=np.int64)
        h = self.kernel.bandwidth
        cnorm = _kernel_constant(self.kernel.kind, self.d)
        scale = 1.0 / (self.M * h**self.d)
        for s in range(0, n, _CHUNK):
            block = q[s:s + _CHUNK]
            sl = slice(s, s + block.shape[0])
            if self.basis.l == 0:
                num, den, c = _nw_sums(block, self._xt, self.sample_y, 1.0 / h, self.kernel.code, cnorm)
                g = den * scale
                ok = g > PD_RTOL * np.maximum(1.0, g)
                values[sl] = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
                lam[sl] = g
            else:
                G, S, c = _moment_sums(block, self._xt, self.sample_y, 1.0 / h, self.kernel.code,
                                       cnorm, self.basis.as_array())
                values[sl], lam[sl], _ = _solve_batch(G * scale, S * scale)
            cnt[sl] = c
        return values, lam, cnt

    def evaluate(self, X, truncate: bool = True) -> np.ndarray:
        values, lam, _ = self.fit_batch(X)
        if not truncate:
            return values
        return self.apply_truncation(values, lam)

    def apply_truncation(self, values, lam) -> np.ndarray:
        gated = lam <= self.gate_threshold
        return np.where(gated, 0.0, np.clip(values, 0.0, self.c_max))

    def weights(self, x) -> np.ndarray:
        """Weights w_m(x) with fit(x) = sum_m w_m y_m; zeros when Gamma is singular."""
        q = self._queries(x)[:1]
        G, _, _ = design_batch(self.sample_x, None, q, self.basis, self.kernel)
        gamma = G[0]
        evals = np.linalg.eigvalsh(gamma)
        if not evals[0] > PD_RTOL * max(1.0, evals[-1]):
            return np.zeros(self.M)
        h = self.kernel.bandwidth
        z = (self.sample_x - q[0]) / h
        k = self.kernel(z)
        row = np.linalg.solve(gamma, np.eye(self.basis.size)[:, 0])
        return k * (self.basis(z) @ row) / (self.M * h**self.d)


def fit_eval(estimator: ContinuationEstimator, x):
    """Local polynomial estimate at x and its diagnostics (not truncated)."""
    q = estimator._queries(x)[:1]
    values, lam, cnt = estimator.fit_batch(q)
    G, _, _ = design_batch(estimator.sample_x, None, q, estimator.basis, estimator.kernel)
    return float(values[0]), LocalFitDiagnostics(G[0], float(lam[0]), int(cnt[0]))


def truncate_eval(estimator: ContinuationEstimator, x) -> float:
    q = estimator._queries(x)[:1]
    return float(estimator.evaluate(q, truncate=True)[0])


def write_diagnostics_csv(estimator: ContinuationEstimator, queries, path) -> None:
    """Rows of query point, lambda_min, effective points and gate flag."""
    q = estimator._queries(queries)
    _, lam, cnt = estimator.fit_batch(q)
    gated = lam <= estimator.gate_threshold
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(estimator.d)] + ["lambda_min", "effective_points", "truncated"])
        for row, l_, c_, g_ in zip(q, lam, cnt, gated):
            w.writerow([repr(float(v)) for v in row] + [repr(float(l_)), int(c_), int(g_)])
