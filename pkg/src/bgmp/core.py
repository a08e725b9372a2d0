"""Bernoulli-Gaussian message passing (BGMP) on a sparsified channel graph.

Each user's signal is split as ``x_k = lam_k * g_k``.  Edges carry a Gaussian
message about ``g_k`` and a Bernoulli message about ``lam_k`` in both
directions.  Variable-to-sum Gaussian messages are kept in precision form so
the initial ``v = +inf`` is exactly representable as precision 0.

One iteration is a flooding pass: every sum node, then every variable node.
All per-node sums are ``np.bincount`` reductions, which accumulate in edge
order and are therefore deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import InvalidArgument, NumericalFailure
from .graph import FactorGraph

LLR_CLIP = 30.0
PROB_FLOOR = 1e-12
VAR_CAP = 1e12
VAR_FLOOR = 1e-12


def prob_from_llr(llr, clip: float | None = LLR_CLIP):
    llr = np.asarray(llr, dtype=float)
    if clip is not None:
        llr = np.clip(llr, -clip, clip)
    return expit(llr)


def llr_from_prob(p, floor: float | None = PROB_FLOOR):
    p = np.asarray(p, dtype=float)
    if floor is not None:
        p = np.clip(p, floor, 1.0 - floor)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class Priors:
    mean: np.ndarray
    variance: np.ndarray
    prob: np.ndarray

    @classmethod
    def from_rho(cls, k_users: int, rho: float) -> "Priors":
        if not 0 < rho < 1:
            raise InvalidArgument(f"rho must lie in (0, 1), got {rho}")
        return cls(np.zeros(k_users), np.full(k_users, 1.0 / rho), np.full(k_users, rho))

    @property
    def llr(self) -> np.ndarray:
        return llr_from_prob(self.prob)

    @property
    def precision(self) -> np.ndarray:
        return 1.0 / self.variance

    def permuted(self, perm) -> "Priors":
        return Priors(self.mean[perm], self.variance[perm], self.prob[perm])


@dataclass
class BGMPConfig:
    tau_max: int = 50
    tol: float = 1e-6
    damping: float = 0.0
    estimate: str = "soft"          # "soft": lam * p * e, "hard": lam * e
    domain: str = "llr"             # Bernoulli arithmetic: "llr" or "probability"
    init: str = "infinite"          # "infinite": v=+inf, p=0.5; "prior": start from the prior
    llr_clip: float | None = LLR_CLIP
    var_cap: float = VAR_CAP
    var_floor: float = VAR_FLOOR

    def validate(self):
        problems = []
        if self.tau_max < 1:
            problems.append("tau_max must be >= 1")
        if not self.tol >= 0:
            problems.append("tol must be >= 0")
        if not 0 <= self.damping < 1:
            problems.append("damping must lie in [0, 1)")
        if self.estimate not in ("soft", "hard"):
            problems.append(f"estimate must be 'soft' or 'hard', got {self.estimate!r}")
        if self.domain not in ("llr", "probability"):
            problems.append(f"domain must be 'llr' or 'probability', got {self.domain!r}")
        if self.init not in ("infinite", "prior"):
            problems.append(f"init must be 'infinite' or 'prior', got {self.init!r}")
        if problems:
            raise InvalidArgument("; ".join(problems))
        return self


@dataclass
class MessageState:
    """Messages on every edge, indexed like ``graph.rows``."""
    t: int
    # variable -> sum
    v2s_precision: np.ndarray
    v2s_precision_mean: np.ndarray
    v2s_llr: np.ndarray
    # sum -> variable (None before the first sum-node pass)
    s2v_mean: np.ndarray | None = None
    s2v_variance: np.ndarray | None = None
    s2v_llr: np.ndarray | None = None
    v2s_prob: np.ndarray | None = None   # only used in the probability domain
    s2v_prob: np.ndarray | None = None

    def v2s_moments(self, var_cap: float = VAR_CAP):
        """Mean and variance of variable->sum messages, variance capped."""
        prec = self.v2s_precision
        with np.errstate(divide="ignore", invalid="ignore"):
            var = np.where(prec > 0, 1.0 / prec, np.inf)
            mean = np.where(prec > 0, self.v2s_precision_mean / prec, 0.0)
        return mean, np.minimum(var, var_cap)


@dataclass
class DetectionResult:
    posterior_mean: np.ndarray       # of g_k, combining prior and all sum nodes
    posterior_variance: np.ndarray
    posterior_llr: np.ndarray
    posterior_prob: np.ndarray
    lambda_hat: np.ndarray
    x_hat: np.ndarray
    iterations_used: int = 0
    converged: bool = False
    edge_updates: int = 0
    trajectory: list[dict] = field(default_factory=list)

    @property
    def x_soft(self) -> np.ndarray:
        """Approximate conditional mean ``E[x | y] = p * e``."""
        return self.posterior_prob * self.posterior_mean


def initialize(graph: FactorGraph, priors: Priors | None = None,
               mode: str = "infinite") -> MessageState:
    """Variable->sum means 0, variances +inf (precision 0), LLRs 0.

    ``mode="prior"`` starts every edge at the prior instead.
    """
    e = graph.num_edges
    if mode == "prior":
        cols = graph.cols
        prec = priors.precision[cols].copy()
        return MessageState(0, prec, prec * priors.mean[cols], priors.llr[cols].copy())
    return MessageState(0, np.zeros(e), np.zeros(e), np.zeros(e))


def bernoulli_llr(residual, eta_var, coef, e_in, v_in):
    """Sum-node activity LLR in closed form.

    ``residual = y_i - E_eta``; ``eta_var`` is the leave-one-out interference
    variance; ``e_in, v_in`` is the incoming Gaussian message for ``g_k``.
    Equals log f(y; h e + E, h^2 v + V) - log f(y; E, V).
    """
    a = coef**2 * v_in
    b = coef * e_in
    denom = 2.0 * eta_var * (eta_var + a)
    return (-0.5 * np.log1p(a / eta_var)
            + a * residual**2 / denom
            + b * eta_var * (2.0 * residual - b) / denom)


def bernoulli_prob(residual, eta_var, coef, e_in, v_in):
    """Same message as :func:`bernoulli_llr`, as ``[1 + f0 / f1]^-1`` of two densities."""
    s1 = eta_var + coef**2 * v_in
    f1 = np.exp(-0.5 * (residual - coef * e_in) ** 2 / s1) / np.sqrt(2 * np.pi * s1)
    f0 = np.exp(-0.5 * residual**2 / eta_var) / np.sqrt(2 * np.pi * eta_var)
    return 1.0 / (1.0 + f0 / f1)


def sum_node_update(graph: FactorGraph, y, eta_variance, state: MessageState,
                    config: BGMPConfig | None = None) -> MessageState:
    """Sum-node pass: fills the sum->variable messages of ``state``."""
    cfg = config or BGMPConfig()
    rows, coef = graph.rows, graph.coef
    mn = graph.num_sum_nodes
    e_in, v_in = state.v2s_moments(cfg.var_cap)
    if cfg.domain == "probability" and state.v2s_prob is not None:
        p_in = state.v2s_prob
    else:
        p_in = prob_from_llr(state.v2s_llr, cfg.llr_clip)

    u = coef * p_in * e_in
    w = coef**2 * p_in * (v_in + (1.0 - p_in) * e_in**2)
    u_tot = np.bincount(rows, weights=u, minlength=mn)
    w_tot = np.bincount(rows, weights=w, minlength=mn)
    eta_mean = u_tot[rows] - u
    # leave-one-out totals are nonnegative in exact arithmetic
    eta_var = np.maximum(w_tot[rows] - w, 0.0) + np.asarray(eta_variance)[rows]
    eta_var = np.maximum(eta_var, cfg.var_floor)

    residual = np.asarray(y)[rows] - eta_mean
    state.s2v_mean = residual / coef
    state.s2v_variance = eta_var / coef**2
    if cfg.domain == "probability":
        state.s2v_prob = bernoulli_prob(residual, eta_var, coef, e_in, v_in)
        state.s2v_llr = llr_from_prob(state.s2v_prob, None)
    else:
        state.s2v_llr = bernoulli_llr(residual, eta_var, coef, e_in, v_in)
    return state


def _node_totals(graph: FactorGraph, state: MessageState):
    k = graph.num_var_nodes
    prec = 1.0 / state.s2v_variance
    pm = state.s2v_mean * prec
    cols = graph.cols
    return (prec, pm,
            np.bincount(cols, weights=prec, minlength=k),
            np.bincount(cols, weights=pm, minlength=k),
            np.bincount(cols, weights=state.s2v_llr, minlength=k))


def variable_node_update(graph: FactorGraph, priors: Priors, state: MessageState,
                         config: BGMPConfig | None = None) -> MessageState:
    """Variable-node pass: leave-one-out combination with the prior."""
    cfg = config or BGMPConfig()
    cols = graph.cols
    prec, pm, prec_tot, pm_tot, llr_tot = _node_totals(graph, state)

    new_prec = priors.precision[cols] + np.maximum(prec_tot[cols] - prec, 0.0)
    new_pm = priors.mean[cols] * priors.precision[cols] + pm_tot[cols] - pm
    new_prec = np.minimum(new_prec, 1.0 / cfg.var_floor)
    if cfg.domain == "probability":
        new_prob = _loo_prob(graph, priors, state.s2v_prob)
        new_llr = llr_from_prob(new_prob, None)
    else:
        new_llr = priors.llr[cols] + llr_tot[cols] - state.s2v_llr
        if cfg.llr_clip is not None:
            new_llr = np.clip(new_llr, -cfg.llr_clip, cfg.llr_clip)
        new_prob = None

    beta = cfg.damping
    if beta > 0 and state.t > 0:
        new_prec = (1 - beta) * new_prec + beta * state.v2s_precision
        new_pm = (1 - beta) * new_pm + beta * state.v2s_precision_mean
        new_llr = (1 - beta) * new_llr + beta * state.v2s_llr

    state.v2s_precision = new_prec
    state.v2s_precision_mean = new_pm
    state.v2s_llr = new_llr
    state.v2s_prob = new_prob
    state.t += 1
    return state


def _loo_prob(graph: FactorGraph, priors: Priors, s2v_prob):
    """Leave-one-out activity probability from products of incoming probabilities."""
    cols, k = graph.cols, graph.num_var_nodes
    on = np.ones(k)
    off = np.ones(k)
    # explicit products; only meant for moderate node degrees
    np.multiply.at(on, cols, s2v_prob)
    np.multiply.at(off, cols, 1.0 - s2v_prob)
    num = priors.prob[cols] * on[cols] / s2v_prob
    den = (1.0 - priors.prob[cols]) * off[cols] / (1.0 - s2v_prob)
    return 1.0 / (1.0 + den / num)


def finalize(graph: FactorGraph, priors: Priors, state: MessageState,
             config: BGMPConfig | None = None) -> DetectionResult:
    """Full (not leave-one-out) combination and hard decision."""
    cfg = config or BGMPConfig()
    if state.s2v_mean is None:
        raise InvalidArgument("finalize needs at least one sum-node pass")
    _, _, prec_tot, pm_tot, llr_tot = _node_totals(graph, state)
    prec = priors.precision + prec_tot
    var = 1.0 / np.minimum(prec, 1.0 / cfg.var_floor)
    mean = var * (priors.mean * priors.precision + pm_tot)
    if cfg.domain == "probability":
        on = np.ones(graph.num_var_nodes)
        off = np.ones(graph.num_var_nodes)
        np.multiply.at(on, graph.cols, state.s2v_prob)
        np.multiply.at(off, graph.cols, 1.0 - state.s2v_prob)
        prob = 1.0 / (1.0 + (1 - priors.prob) * off / (priors.prob * on))
        llr = llr_from_prob(prob, None)
    else:
        llr = priors.llr + llr_tot
        prob = prob_from_llr(llr, cfg.llr_clip)
    lam = (llr > 0).astype(np.int8)
    x_hat = lam * mean if cfg.estimate == "hard" else lam * prob * mean
    return DetectionResult(mean, var, llr, prob, lam, x_hat)


def _check_finite(state: MessageState, t: int, graph: FactorGraph, phase: str):
    names = (("s2v_mean", "s2v_variance", "s2v_llr") if phase == "sum"
             else ("v2s_precision", "v2s_precision_mean", "v2s_llr"))
    for name in names:
        arr = getattr(state, name)
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            e = int(bad[0])
            raise NumericalFailure(
                f"non-finite {name} at iteration {t}, edge {e} "
                f"(sum node {int(graph.rows[e])}, user {int(graph.cols[e])})")


def run_bgmp(y, graph: FactorGraph, eta_variance, priors: Priors,
             config: BGMPConfig | None = None, truth=None,
             on_iteration: Callable[[dict], None] | None = None) -> DetectionResult:
    """Iterate BGMP until ``tau_max`` or until the posterior stops moving.

    Convergence: max |dp_k| and max |de_k| / (1 + |e_k|) between consecutive
    iterations both below ``config.tol``.  ``truth`` is an optional
    ``(x, lam)`` pair used only to record MSE/USE in the trajectory.
    """
    cfg = (config or BGMPConfig()).validate()
    y = np.asarray(y, dtype=float)
    eta_variance = np.asarray(eta_variance, dtype=float)
    if y.shape != (graph.num_sum_nodes,) or eta_variance.shape != y.shape:
        raise InvalidArgument(
            f"y and eta_variance must have length {graph.num_sum_nodes}, "
            f"got {y.shape} and {eta_variance.shape}")
    if len(priors.mean) != graph.num_var_nodes:
        raise InvalidArgument("priors length does not match the number of users")

    state = initialize(graph, priors, cfg.init)
    prev = None
    result = None
    edge_updates = 0
    trajectory = []
    converged = False
    for t in range(1, cfg.tau_max + 1):
        sum_node_update(graph, y, eta_variance, state, cfg)
        _check_finite(state, t, graph, "sum")
        result = finalize(graph, priors, state, cfg)
        variable_node_update(graph, priors, state, cfg)
        _check_finite(state, t, graph, "var")
        edge_updates += 2 * graph.num_edges

        record = {"iteration": t}
        if prev is not None:
            dp = float(np.max(np.abs(result.posterior_prob - prev.posterior_prob), initial=0.0))
            de = float(np.max(np.abs(result.posterior_mean - prev.posterior_mean)
                              / (1.0 + np.abs(result.posterior_mean)), initial=0.0))
            converged = dp < cfg.tol and de < cfg.tol
        else:
            dp = de = float("nan")
        record["max_dp"] = dp
        record["max_de"] = de
        if truth is not None:
            x_true, lam_true = truth
            record["mse"] = float(np.mean((np.asarray(x_true) - result.x_hat) ** 2))
            record["use"] = float(np.mean(np.abs(np.asarray(lam_true) - result.lambda_hat)))
        trajectory.append(record)
        if on_iteration is not None:
            on_iteration(record)
        prev = result
        if converged:
            break

    result.iterations_used = t
    result.converged = converged
    result.edge_updates = edge_updates
    result.trajectory = trajectory
    return result
