"""Bernoulli-Gaussian user signals, received vectors, and RSNR calibration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .seeding import children


@dataclass(frozen=True)
class SourceRealization:
    lam: np.ndarray
    g: np.ndarray
    x: np.ndarray
    p_tx: float
    sigma_n2: float
    y: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.lam)


def sample_source(k_users: int, rho: float, seed=None):
    """Draw ``(lam, g, x)`` with ``lam ~ Bernoulli(rho)``, ``g ~ N(0, 1/rho)``, ``x = lam * g``.

    Activity and amplitude use separate streams: ``seed`` is either an
    ``(activity, signal)`` pair or a single seed split into two children.
    ``g`` is drawn for every user, including inactive ones.
    """
    if not 0 < rho < 1:
        raise InvalidArgument(f"rho must lie in (0, 1), got {rho}")
    if k_users < 1:
        raise InvalidArgument(f"k_users must be >= 1, got {k_users}")
    act_ss, sig_ss = seed if isinstance(seed, tuple) else children(seed, 2)
    lam = (np.random.default_rng(act_ss).random(k_users) < rho).astype(np.int8)
    g = np.random.default_rng(sig_ss).standard_normal(k_users) / np.sqrt(rho)
    return lam, g, lam * g


def transmit(h_full: np.ndarray, x: np.ndarray, p_tx: float, sigma_n2: float, seed=None) -> np.ndarray:
    """``y = sqrt(P) H x + z`` with ``z ~ N(0, sigma_n2 I)`` over the full channel."""
    h_full = np.asarray(h_full, dtype=float)
    x = np.asarray(x, dtype=float)
    if h_full.shape[1] != x.shape[0]:
        raise InvalidArgument(f"channel has {h_full.shape[1]} columns but x has {x.shape[0]} entries")
    z = np.random.default_rng(seed).standard_normal(h_full.shape[0])
    return np.sqrt(p_tx) * (h_full @ x) + np.sqrt(sigma_n2) * z


def channel_power(h_full, norm: str = "frobenius", n_antennas: int | None = None) -> float:
    """Average of sum_m ||H^m||^2 over the supplied realizations.

    ``h_full`` is one MN x K matrix or a stack of them.  The spectral reading
    needs ``n_antennas`` to split rows into per-RRH blocks.
    """
    h = np.asarray(h_full, dtype=float)
    if h.ndim == 2:
        h = h[None]
    if norm == "frobenius":
        return float(np.mean(np.sum(h**2, axis=(1, 2))))
    if norm == "spectral":
        if not n_antennas:
            raise InvalidArgument("spectral norm needs n_antennas")
        blocks = h.reshape(h.shape[0], -1, n_antennas, h.shape[2])
        sv = np.linalg.norm(blocks, ord=2, axis=(2, 3))
        return float(np.mean(np.sum(sv**2, axis=1)))
    raise InvalidArgument(f"unknown norm {norm!r}")


def calibrate_noise(h_full, p_tx: float, rsnr_db: float, norm: str = "frobenius",
                    n_antennas: int | None = None) -> float:
    """Noise power giving the requested average receive SNR."""
    if not np.isfinite(rsnr_db):
        raise InvalidArgument(f"rsnr_db must be finite, got {rsnr_db}")
    h = np.asarray(h_full, dtype=float)
    power = channel_power(h, norm, n_antennas)
    if power == 0:
        raise InvalidArgument("cannot calibrate noise on an all-zero channel")
    mn = h.shape[-2]
    return p_tx * power / (mn * 10.0 ** (rsnr_db / 10.0))


def realized_rsnr_db(h_full, p_tx: float, sigma_n2: float, norm: str = "frobenius",
                     n_antennas: int | None = None) -> float:
    h = np.asarray(h_full, dtype=float)
    return 10.0 * np.log10(p_tx * channel_power(h, norm, n_antennas) / (h.shape[-2] * sigma_n2))
