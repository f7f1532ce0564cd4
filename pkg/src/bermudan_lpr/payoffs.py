"""Exercise payoffs f_k.  All values are undiscounted; discounting lives in dp/pricing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import InvalidInput

KINDS = ("max_call", "power_put", "digital", "vanilla_put", "custom")


@dataclass(frozen=True, eq=False)
class PayoffSpec:
    """Payoff family plus optional per-date overrides.

    ``custom`` takes ``func(k, X) -> values`` with X of shape (n, d).  ``digital``
    pays ``level + gap`` below ``threshold`` and ``level - gap`` at or above it on
    dates before ``terminal_date``, and ``terminal`` from ``terminal_date`` on.
    """

    kind: str
    strike: float = 0.0
    alpha: float = 1.0
    threshold: float = 0.0
    level: float = 0.0
    gap: float = 0.0
    terminal: "PayoffSpec | None" = None
    terminal_date: int = 1
    func: Callable | None = None
    overrides: Mapping[int, Callable] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown payoff kind {self.kind!r}")
        if self.kind in ("max_call", "power_put", "vanilla_put") and self.strike <= 0:
            raise InvalidInput("strike must be positive")
        if self.kind == "power_put" and self.alpha <= 0:
            raise InvalidInput("alpha must be positive")
        if self.kind == "digital":
            if self.gap <= 0:
                raise InvalidInput("digital gap must be positive")
            if self.level - self.gap < 0:
                raise InvalidInput("digital payoff must stay nonnegative (level >= gap)")
            if self.terminal is None:
                raise InvalidInput("digital payoff needs a terminal payoff")
        if self.kind == "custom" and self.func is None:
            raise InvalidInput("custom payoff needs func")

    @classmethod
    def max_call(cls, strike: float) -> "PayoffSpec":
        return cls("max_call", strike=strike)

    @classmethod
    def power_put(cls, strike: float, alpha: float) -> "PayoffSpec":
        return cls("power_put", strike=strike, alpha=alpha)

    @classmethod
    def vanilla_put(cls, strike: float) -> "PayoffSpec":
        return cls("vanilla_put", strike=strike)

    @classmethod
    def digital(cls, threshold: float, level: float, gap: float, terminal: "PayoffSpec",
                terminal_date: int = 1) -> "PayoffSpec":
        return cls("digital", threshold=threshold, level=level, gap=gap, terminal=terminal,
                   terminal_date=terminal_date)

    @classmethod
    def custom(cls, func: Callable) -> "PayoffSpec":
        return cls("custom", func=func)

    @classmethod
    def zero(cls) -> "PayoffSpec":
        return cls("custom", func=lambda k, X: np.zeros(len(X)))

    def values(self, k: int, X) -> np.ndarray:
        """Vectorised payoff at date k for states X of shape (n, d)."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if k in self.overrides:
            return np.asarray(self.overrides[k](X), dtype=float)
        kind = self.kind
        if kind == "max_call":
            return np.maximum(X.max(axis=1) - self.strike, 0.0)
        if kind == "custom":
            return np.asarray(self.func(k, X), dtype=float)
        if X.shape[1] != 1:
            raise InvalidInput(f"{kind} payoff is one-dimensional, got d={X.shape[1]}")
        x = X[:, 0]
        if kind == "vanilla_put":
            return np.maximum(self.strike - x, 0.0)
        if kind == "power_put":
            a = 1.0 / self.alpha
            return np.maximum(self.strike**a - np.maximum(x, 0.0) ** a, 0.0)
        # digital
        if k >= self.terminal_date:
            return self.terminal.values(k, X)
        return np.where(x < self.threshold, self.level + self.gap, self.level - self.gap)

    def max_values(self, k: int, X) -> float:
        vals = self.values(k, X)
        return float(vals.max()) if vals.size else 0.0

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.kind in ("max_call", "power_put", "vanilla_put"):
            out["strike"] = self.strike
        if self.kind == "power_put":
            out["alpha"] = self.alpha
        if self.kind == "digital":
            out.update(threshold=self.threshold, level=self.level, gap=self.gap,
                       terminal_date=self.terminal_date, terminal=self.terminal.describe())
        return out


def evaluate(spec: PayoffSpec, k: int, x) -> float:
    """Payoff at date k for a single state vector x."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(spec.values(k, x)[0])
