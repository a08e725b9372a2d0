"""Network geometry and the full / sparsified / residual channel matrices.

Rows of every channel matrix are ordered RRH-major: row ``m * N + n`` is
antenna ``n`` of RRH ``m``.  Distances are in km.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidArgument

# coincident RRH/user pairs are clamped to 1 m
MIN_DISTANCE_KM = 1e-3


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class NetworkGeometry:
    rrh_positions: np.ndarray
    user_positions: np.ndarray
    side_length: float
    alpha: float = 2.25
    d0: float = 3.5

    def __post_init__(self):
        rrh = _frozen(self.rrh_positions).reshape(-1, 2)
        usr = _frozen(self.user_positions).reshape(-1, 2)
        object.__setattr__(self, "rrh_positions", rrh)
        object.__setattr__(self, "user_positions", usr)
        if len(rrh) < 1 or len(usr) < 1:
            raise InvalidArgument("geometry needs at least one RRH and one user")
        if self.alpha <= 0 or self.d0 < 0 or self.side_length <= 0:
            raise InvalidArgument("need alpha > 0, d0 >= 0, side_length > 0")
        for pts in (rrh, usr):
            if np.any(pts < 0) or np.any(pts > self.side_length):
                raise InvalidArgument("positions must lie inside the square")

    @property
    def m_rrh(self) -> int:
        return len(self.rrh_positions)

    @property
    def k_users(self) -> int:
        return len(self.user_positions)

    def distances(self) -> np.ndarray:
        """M x K Euclidean distances, clamped below at ``MIN_DISTANCE_KM``."""
        diff = self.rrh_positions[:, None, :] - self.user_positions[None, :, :]
        return np.maximum(np.hypot(diff[..., 0], diff[..., 1]), MIN_DISTANCE_KM)

    def with_d0(self, d0: float) -> "NetworkGeometry":
        return replace(self, d0=d0)


@dataclass(frozen=True)
class ChannelSet:
    h_full: np.ndarray
    h_sparse: np.ndarray
    h_residual: np.ndarray
    n_antennas: int
    sparsity: float
    eta_variance: np.ndarray | None = field(default=None)

    def __post_init__(self):
        for name in ("h_full", "h_sparse", "h_residual", "eta_variance"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(val))

    @property
    def shape(self):
        return self.h_full.shape

    def with_interference(self, p_tx: float, sigma_n2: float) -> "ChannelSet":
        eta = interference_variances(self.h_residual, p_tx, sigma_n2)
        return replace(self, eta_variance=eta)


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def place_nodes(m_rrh: int, k_users: int, side_length: float, seed=None,
                alpha: float = 2.25, d0: float = 3.5) -> NetworkGeometry:
    """Drop RRHs and users i.i.d. uniformly on a ``side_length`` square."""
    if m_rrh < 1 or k_users < 1:
        raise InvalidArgument(f"counts must be >= 1, got m_rrh={m_rrh}, k_users={k_users}")
    if not side_length > 0:
        raise InvalidArgument(f"side_length must be positive, got {side_length}")
    rng = _rng(seed)
    rrh = rng.uniform(0.0, side_length, size=(m_rrh, 2))
    users = rng.uniform(0.0, side_length, size=(k_users, 2))
    return NetworkGeometry(rrh, users, float(side_length), alpha, d0)


def path_gain(geom: NetworkGeometry) -> np.ndarray:
    """M x K amplitude gains ``d ** -alpha``."""
    return geom.distances() ** (-geom.alpha)


def build_channel(geom: NetworkGeometry, n_antennas: int, seed=None) -> np.ndarray:
    """Full MN x K channel: independent N(0, 1/K) fading per antenna times d^-alpha."""
    if n_antennas < 1:
        raise InvalidArgument(f"n_antennas must be >= 1, got {n_antennas}")
    m, k = geom.m_rrh, geom.k_users
    rng = _rng(seed)
    fading = rng.standard_normal((m, n_antennas, k)) / np.sqrt(k)
    h = fading * path_gain(geom)[:, None, :]
    return h.reshape(m * n_antennas, k)


def support_mask(geom: NetworkGeometry, n_antennas: int, d0: float | None = None) -> np.ndarray:
    """Boolean MN x K mask of entries kept by the strict ``d < d0`` rule."""
    d0 = geom.d0 if d0 is None else d0
    near = geom.distances() < d0
    return np.repeat(near, n_antennas, axis=0)


def sparsify(h_full: np.ndarray, geom: NetworkGeometry, d0: float | None = None) -> ChannelSet:
    """Split ``h_full`` into the kept (d < d0) part and the residual.

    ``eta_variance`` is left unset; call :meth:`ChannelSet.with_interference`.
    """
    h_full = np.asarray(h_full, dtype=float)
    mn, k = h_full.shape
    if k != geom.k_users or mn % geom.m_rrh:
        raise InvalidArgument(
            f"channel shape {h_full.shape} inconsistent with M={geom.m_rrh}, K={geom.k_users}")
    n = mn // geom.m_rrh
    mask = support_mask(geom, n, d0)
    h_sparse = np.where(mask, h_full, 0.0)
    h_residual = np.where(mask, 0.0, h_full)
    sparsity = np.count_nonzero(h_sparse) / h_full.size
    return ChannelSet(h_full, h_sparse, h_residual, n, float(sparsity))


def interference_variances(h_residual: np.ndarray, p_tx: float, sigma_n2: float) -> np.ndarray:
    """Per-antenna variance of truncated interference plus noise (E[x_k^2] = 1)."""
    if not p_tx > 0 or sigma_n2 < 0:
        raise InvalidArgument("need p_tx > 0 and sigma_n2 >= 0")
    h_residual = np.asarray(h_residual, dtype=float)
    return p_tx * np.einsum("ij,ij->i", h_residual, h_residual) + sigma_n2


def pair_distance_cdf(r: float) -> float:
    """P(|U - V| < r) for U, V independent uniform on the unit square."""
    if r <= 0:
        return 0.0
    if r <= 1:
        return np.pi * r**2 - 8 * r**3 / 3 + r**4 / 2
    if r < np.sqrt(2):
        s = np.sqrt(r**2 - 1)
        return (1 / 3 + (np.pi - 2) * r**2 - r**4 / 2 + 4 * s * (2 * r**2 + 1) / 3
                - 4 * r**2 * np.arccos(1 / r))
    return 1.0


def d0_for_sparsity(target: float, side_length: float) -> float:
    """Threshold whose expected sparsity over uniform geometries equals ``target``."""
    if not 0 < target < 1:
        raise InvalidArgument(f"target sparsity must be in (0, 1), got {target}")
    r = brentq(lambda r: pair_distance_cdf(r) - target, 0.0, np.sqrt(2))
    return r * side_length


def dump_channel(path, geom: NetworkGeometry, channel: ChannelSet) -> None:
    """Write geometry and channel to JSON (matrices as row-major flat lists)."""
    mn, k = channel.shape
    doc = {
        "m_rrh": geom.m_rrh,
        "k_users": geom.k_users,
        "n_antennas": channel.n_antennas,
        "side_length_km": geom.side_length,
        "alpha": geom.alpha,
        "d0_km": geom.d0,
        "rrh_positions": geom.rrh_positions.tolist(),
        "user_positions": geom.user_positions.tolist(),
        "rows": mn,
        "cols": k,
        "sparsity": channel.sparsity,
        "h_full": channel.h_full.ravel().tolist(),
        "h_sparse": channel.h_sparse.ravel().tolist(),
        "eta_variance": None if channel.eta_variance is None else channel.eta_variance.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_channel(path) -> tuple[NetworkGeometry, ChannelSet]:
    doc = json.loads(Path(path).read_text())
    geom = NetworkGeometry(doc["rrh_positions"], doc["user_positions"],
                           doc["side_length_km"], doc["alpha"], doc["d0_km"])
    shape = (doc["rows"], doc["cols"])
    h_full = np.array(doc["h_full"], dtype=float).reshape(shape)
    channel = sparsify(h_full, geom)
    if doc.get("eta_variance") is not None:
        channel = replace(channel, eta_variance=np.array(doc["eta_variance"]))
    return geom, channel
