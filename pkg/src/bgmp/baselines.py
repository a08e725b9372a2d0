"""Linear MMSE benchmarks and an exact posterior for small instances."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import logsumexp

from .errors import InvalidArgument, NumericalFailure

ORACLE_MAX_USERS = 12


def _ridge(a: np.ndarray, y: np.ndarray, reg: float) -> np.ndarray:
    """Solve ``(A^T A + reg I) x = A^T y`` by Cholesky."""
    gram = a.T @ a
    gram[np.diag_indices_from(gram)] += reg
    try:
        factor = cho_factor(gram, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"regularized normal matrix is not positive definite: {exc}") from exc
    return cho_solve(factor, a.T @ y)


def _support(support, k: int) -> np.ndarray:
    if isinstance(support, (set, frozenset)):
        support = sorted(support)
    idx = np.asarray(support)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    idx = np.unique(idx.astype(np.int64))
    if idx.size and (idx[0] < 0 or idx[-1] >= k):
        raise InvalidArgument(f"support indices must lie in [0, {k})")
    return idx


def ga_mmse(h_full, y, support, sigma_n2: float, rho: float, p_tx: float = 1.0) -> np.ndarray:
    """Genie-aided MMSE on the full channel, restricted to the true support."""
    h = np.sqrt(p_tx) * np.asarray(h_full, dtype=float)
    k = h.shape[1]
    idx = _support(support, k)
    x = np.zeros(k)
    if idx.size:
        x[idx] = _ridge(h[:, idx], np.asarray(y, dtype=float), sigma_n2 * rho)
    return x


def _whitened(h_sparse, y, eta_variance, p_tx, mode):
    h = np.sqrt(p_tx) * np.asarray(h_sparse, dtype=float)
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta_variance, dtype=float)
    if mode == "whitened":
        if np.any(eta <= 0):
            raise NumericalFailure("whitening needs strictly positive interference variances")
        scale = 1.0 / np.sqrt(eta)
        return h * scale[:, None], y * scale, 1.0
    if mode == "scalar":
        return h, y, float(np.mean(eta))
    raise InvalidArgument(f"regularizer mode must be 'whitened' or 'scalar', got {mode!r}")


def ga_smmse(h_sparse, y, support, eta_variance, rho: float, p_tx: float = 1.0,
             mode: str = "whitened") -> np.ndarray:
    """Genie-aided MMSE on the sparsified channel with interference-aware regularization.

    ``mode="whitened"`` divides each row by its interference standard deviation
    and regularizes with ``rho``; ``mode="scalar"`` keeps the rows and uses
    ``rho * mean(eta_variance)``.
    """
    a, yw, scale = _whitened(h_sparse, y, eta_variance, p_tx, mode)
    k = a.shape[1]
    idx = _support(support, k)
    x = np.zeros(k)
    if idx.size:
        x[idx] = _ridge(a[:, idx], yw, rho * scale)
    return x


def smmse(h_sparse, y, eta_variance, rho: float, p_tx: float = 1.0,
          mode: str = "whitened") -> np.ndarray:
    """Sparse MMSE over all users (no activity knowledge)."""
    a, yw, scale = _whitened(h_sparse, y, eta_variance, p_tx, mode)
    return _ridge(a, yw, rho * scale)


@dataclass
class ExactPosterior:
    prob_active: np.ndarray     # P(lam_k = 1 | y)
    mean: np.ndarray            # E[x | y]
    patterns: np.ndarray        # 2^K x K activity patterns
    pattern_probs: np.ndarray   # P(pattern | y)


def exact_posterior_oracle(h, y, sigma2_per_row, rho: float) -> ExactPosterior:
    """Exact Bernoulli-Gaussian posterior by enumerating all activity patterns.

    ``h`` must already include ``sqrt(P)``; noise is independent per row with
    the given variances.
    """
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    noise = np.broadcast_to(np.asarray(sigma2_per_row, dtype=float), y.shape)
    k = h.shape[1]
    if k > ORACLE_MAX_USERS:
        raise InvalidArgument(f"exact enumeration limited to K <= {ORACLE_MAX_USERS}, got K={k}")
    if not 0 < rho < 1:
        raise InvalidArgument(f"rho must lie in (0, 1), got {rho}")

    patterns = np.array(list(product((0, 1), repeat=k)), dtype=np.int8).reshape(-1, k)
    log_w = np.empty(len(patterns))
    means = np.zeros((len(patterns), k))
    for j, pat in enumerate(patterns):
        s = np.flatnonzero(pat)
        hs = h[:, s]
        cov = np.diag(noise) + (hs @ hs.T) / rho
        c, low = cho_factor(cov, lower=True)
        alpha = cho_solve((c, low), y)
        logdet = 2.0 * np.sum(np.log(np.diag(c)))
        log_ev = -0.5 * (y @ alpha + logdet + len(y) * np.log(2 * np.pi))
        log_w[j] = log_ev + len(s) * np.log(rho) + (k - len(s)) * np.log1p(-rho)
        means[j, s] = hs.T @ alpha / rho
    post = np.exp(log_w - logsumexp(log_w))
    return ExactPosterior(post @ patterns, post @ means, patterns, post)
