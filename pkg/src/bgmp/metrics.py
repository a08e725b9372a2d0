"""MSE / USE metrics, dB conversion, and streaming trial averages."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

Z95 = 1.959963984540054


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgument(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(x_true, x_hat) -> float:
    """(1/K) ||x - x_hat||^2"""
    a, b = _pair(x_true, x_hat)
    return float(np.mean((a - b) ** 2))


def use_rate(lambda_true, lambda_hat) -> float:
    """(1/K) ||lam - lam_hat||_1, the user-state error rate."""
    a, b = _pair(lambda_true, lambda_hat)
    return float(np.mean(np.abs(a - b)))


def to_db(linear: float) -> float:
    if not linear > 0:
        raise InvalidArgument(f"dB conversion needs a positive value, got {linear}")
    return 10.0 * math.log10(linear)


def from_db(db: float) -> float:
    return 10.0 ** (db / 10.0)


@dataclass
class TrialMetrics:
    mse: float
    use_rate: float | None
    rsnr_db: float
    iterations_used: int = 0
    edge_updates: int = 0
    sparsity: float = float("nan")


class RunningMean:
    """Welford accumulator; feed values in a fixed order for reproducible sums."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self._m2 = 0.0

    def add(self, value: float) -> None:
        self.n += 1
        delta = value - self.mean
        self.mean += delta / self.n
        self._m2 += delta * (value - self.mean)

    @property
    def variance(self) -> float:
        return self._m2 / (self.n - 1) if self.n > 1 else 0.0

    def half_width(self, z: float = Z95) -> float:
        """Normal-approximation confidence half-width of the mean."""
        return z * math.sqrt(self.variance / self.n) if self.n else float("nan")
