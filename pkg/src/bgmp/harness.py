"""Monte-Carlo experiment orchestration, oracle cross-checks, and result emission."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baselines
from .channel import build_channel, place_nodes, sparsify
from .core import BGMPConfig, Priors, run_bgmp
from .errors import InvalidArgument
from .graph import build_graph
from .metrics import RunningMean, mse, to_db, use_rate
from .seeding import child, trial_streams
from .source import calibrate_noise, sample_source, transmit

DETECTORS = ("bgmp", "ga_mmse", "ga_smmse", "smmse")
WORKERS_ENV = "BGMP_WORKERS"


@dataclass
class ExperimentConfig:
    m_rrh: int = 120
    k_users: int = 200
    n_antennas: int = 10
    rho: float = 0.3
    alpha: float = 2.25
    side_length_km: float = 5.0
    d0_km: list[float] = field(default_factory=lambda: [3.5])
    rsnr_db_list: list[float] = field(default_factory=lambda: [20.0, 30.0, 40.0, 50.0, 60.0])
    tau_max: int = 50
    tol: float = 1e-6
    trials: int = 100
    seed: int = 0
    detectors: list[str] = field(default_factory=lambda: list(DETECTORS))
    regularizer_mode: str = "whitened"
    estimate_mode: str = "soft"
    damping: float = 0.0
    init_mode: str = "infinite"
    p_tx: float = 1.0
    rsnr_norm: str = "frobenius"
    fixed_geometry: bool = False

    def problems(self) -> list[str]:
        out = []
        for name in ("m_rrh", "k_users", "n_antennas", "tau_max", "trials"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1 (got {getattr(self, name)})")
        if not 0 < self.rho < 1:
            out.append(f"rho must lie in (0, 1) (got {self.rho})")
        if not self.alpha > 0:
            out.append(f"alpha must be > 0 (got {self.alpha})")
        if not self.side_length_km > 0:
            out.append(f"side_length_km must be > 0 (got {self.side_length_km})")
        if not self.d0_km:
            out.append("d0_km needs at least one value")
        elif any(not d >= 0 for d in self.d0_km):
            out.append(f"d0_km values must be >= 0 (got {self.d0_km})")
        if not self.rsnr_db_list:
            out.append("rsnr_db_list needs at least one value")
        elif any(not math.isfinite(r) for r in self.rsnr_db_list):
            out.append("rsnr_db_list values must be finite")
        if not self.tol >= 0:
            out.append(f"tol must be >= 0 (got {self.tol})")
        bad = [d for d in self.detectors if d not in DETECTORS]
        if bad or not self.detectors:
            out.append(f"detectors must be a nonempty subset of {DETECTORS} (got {self.detectors})")
        if self.regularizer_mode not in ("whitened", "scalar"):
            out.append(f"regularizer_mode must be whitened|scalar (got {self.regularizer_mode!r})")
        if self.estimate_mode not in ("soft", "hard"):
            out.append(f"estimate_mode must be soft|hard (got {self.estimate_mode!r})")
        if not 0 <= self.damping < 1:
            out.append(f"damping must lie in [0, 1) (got {self.damping})")
        if self.init_mode not in ("infinite", "prior"):
            out.append(f"init_mode must be infinite|prior (got {self.init_mode!r})")
        if not self.p_tx > 0:
            out.append(f"p_tx must be > 0 (got {self.p_tx})")
        if self.rsnr_norm not in ("frobenius", "spectral"):
            out.append(f"rsnr_norm must be frobenius|spectral (got {self.rsnr_norm!r})")
        return out

    def validate(self) -> "ExperimentConfig":
        problems = self.problems()
        if problems:
            raise InvalidArgument("invalid configuration:\n  " + "\n  ".join(problems))
        return self

    def bgmp_config(self) -> BGMPConfig:
        return BGMPConfig(tau_max=self.tau_max, tol=self.tol, damping=self.damping,
                          estimate=self.estimate_mode, init=self.init_mode)

    def as_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, list):
                val = ",".join(str(v) for v in val)
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"


_LIST_FIELDS = {"d0_km": float, "rsnr_db_list": float, "detectors": str}


def _coerce(name: str, raw):
    if name in _LIST_FIELDS:
        if isinstance(raw, (list, tuple)):
            items = list(raw)
        else:
            items = [s.strip() for s in str(raw).split(",") if s.strip()]
        return [_LIST_FIELDS[name](v) for v in items]
    kind = {f.name: f.type for f in fields(ExperimentConfig)}[name]
    if kind == "bool":
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text not in ("1", "0", "true", "false", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        return text in ("1", "true", "yes")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return str(raw).strip()


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines (``#`` comments) into raw strings."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"line {lineno}: expected 'key = value', got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = val
    return out


def make_config(overrides: dict | None = None, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a validated config, reporting every bad key or value at once."""
    cfg = base or ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    problems = []
    values = asdict(cfg)
    for key, raw in (overrides or {}).items():
        if key not in known:
            problems.append(f"unknown key {key!r}")
            continue
        try:
            values[key] = _coerce(key, raw)
        except (TypeError, ValueError) as exc:
            problems.append(f"{key}: {exc}")
    if not problems:
        problems = ExperimentConfig(**values).problems()
    if problems:
        raise InvalidArgument("invalid configuration:\n  " + "\n  ".join(problems))
    return ExperimentConfig(**values)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    raw = parse_config_text(Path(path).read_text())
    raw.update(overrides or {})
    return make_config(raw)


# ---------------------------------------------------------------- trials


@dataclass
class TrialRecord:
    d0_index: int
    rsnr_index: int
    detector: str
    mse: float
    use: float | None
    sparsity: float
    iterations: int
    edge_updates: int


def draw_realization(cfg: ExperimentConfig, trial: int):
    """Geometry, full channel, and Bernoulli-Gaussian source for one trial."""
    streams = trial_streams(cfg.seed, trial, cfg.fixed_geometry)
    geom = place_nodes(cfg.m_rrh, cfg.k_users, cfg.side_length_km, streams["geometry"],
                       alpha=cfg.alpha, d0=cfg.d0_km[0])
    h_full = build_channel(geom, cfg.n_antennas, streams["fading"])
    lam, g, x = sample_source(cfg.k_users, cfg.rho, (streams["activity"], streams["signal"]))
    return geom, h_full, lam, x, streams["noise"]


def run_trial(cfg: ExperimentConfig, trial: int) -> list[TrialRecord]:
    """Every (d0, RSNR, detector) point for one realization.

    All detectors and sweep points share the geometry, fading, source, and the
    standard-normal noise pattern (rescaled per RSNR).
    """
    geom, h_full, lam, x, noise_seed = draw_realization(cfg, trial)
    support = np.flatnonzero(lam)
    priors = Priors.from_rho(cfg.k_users, cfg.rho)
    bgmp_cfg = cfg.bgmp_config()
    out = []
    for di, d0 in enumerate(cfg.d0_km):
        base = sparsify(h_full, geom, d0)
        graph = build_graph(np.sqrt(cfg.p_tx) * base.h_sparse)
        for ri, rsnr in enumerate(cfg.rsnr_db_list):
            s2 = calibrate_noise(h_full, cfg.p_tx, rsnr, cfg.rsnr_norm, cfg.n_antennas)
            y = transmit(h_full, x, cfg.p_tx, s2, noise_seed)
            channel = base.with_interference(cfg.p_tx, s2)
            for det in cfg.detectors:
                iters = edges = 0
                use = 0.0
                if det == "bgmp":
                    res = run_bgmp(y, graph, channel.eta_variance, priors, bgmp_cfg)
                    x_hat = res.x_hat
                    use = use_rate(lam, res.lambda_hat)
                    iters, edges = res.iterations_used, res.edge_updates
                elif det == "ga_mmse":
                    x_hat = baselines.ga_mmse(h_full, y, support, s2, cfg.rho, cfg.p_tx)
                elif det == "ga_smmse":
                    x_hat = baselines.ga_smmse(channel.h_sparse, y, support, channel.eta_variance,
                                               cfg.rho, cfg.p_tx, cfg.regularizer_mode)
                else:
                    x_hat = baselines.smmse(channel.h_sparse, y, channel.eta_variance,
                                            cfg.rho, cfg.p_tx, cfg.regularizer_mode)
                    use = None
                out.append(TrialRecord(di, ri, det, mse(x, x_hat), use, channel.sparsity,
                                       iters, edges))
    return out


def _trial_job(args):
    cfg, trial = args
    return run_trial(cfg, trial)


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, workers)


def iter_trials(cfg: ExperimentConfig, workers: int | None = None):
    """Yield per-trial record lists in trial-index order."""
    workers = worker_count(workers)
    jobs = ((cfg, t) for t in range(cfg.trials))
    if workers == 1:
        yield from map(_trial_job, jobs)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_trial_job, jobs)


# ---------------------------------------------------------------- results

RESULT_FIELDS = ("d0", "realized_gamma_mean", "rsnr_db", "detector", "mse_db_mean", "mse_ci",
                 "use_mean", "use_ci", "iters_mean", "edge_updates_total")


@dataclass
class ResultRow:
    d0: float
    realized_gamma_mean: float
    rsnr_db: float
    detector: str
    mse_db_mean: float
    mse_ci: float
    use_mean: float | None
    use_ci: float | None
    iters_mean: float
    edge_updates_total: int


@dataclass
class ResultsTable:
    rows: list[ResultRow] = field(default_factory=list)

    def select(self, **criteria) -> list[ResultRow]:
        return [r for r in self.rows
                if all(getattr(r, k) == v for k, v in criteria.items())]

    def get(self, **criteria) -> ResultRow:
        found = self.select(**criteria)
        if len(found) != 1:
            raise KeyError(f"{len(found)} rows match {criteria}")
        return found[0]


class _Cell:
    def __init__(self):
        self.mse = RunningMean()
        self.use = RunningMean()
        self.gamma = RunningMean()
        self.iters = RunningMean()
        self.edges = 0
        self.has_use = True

    def add(self, rec: TrialRecord):
        self.mse.add(rec.mse)
        self.gamma.add(rec.sparsity)
        self.iters.add(rec.iterations)
        self.edges += rec.edge_updates
        if rec.use is None:
            self.has_use = False
        else:
            self.use.add(rec.use)


def aggregate(cfg: ExperimentConfig, trial_records) -> ResultsTable:
    """Fold per-trial records (in trial order) into one row per sweep point and detector."""
    cells = {}
    for records in trial_records:
        for rec in records:
            cells.setdefault((rec.d0_index, rec.rsnr_index, rec.detector), _Cell()).add(rec)
    table = ResultsTable()
    for di, d0 in enumerate(cfg.d0_km):
        for ri, rsnr in enumerate(cfg.rsnr_db_list):
            for det in cfg.detectors:
                c = cells[(di, ri, det)]
                mean = c.mse.mean
                # delta-method half-width in dB
                mse_db = to_db(mean) if mean > 0 else float("-inf")
                mse_ci = 10 / math.log(10) * c.mse.half_width() / mean if mean > 0 else 0.0
                table.rows.append(ResultRow(
                    d0=float(d0), realized_gamma_mean=c.gamma.mean, rsnr_db=float(rsnr),
                    detector=det, mse_db_mean=mse_db, mse_ci=mse_ci,
                    use_mean=c.use.mean if c.has_use else None,
                    use_ci=c.use.half_width() if c.has_use else None,
                    iters_mean=c.iters.mean, edge_updates_total=c.edges))
    return table


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ResultsTable:
    cfg.validate()
    return aggregate(cfg, iter_trials(cfg, workers))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return f"{float(value):.9g}"


def _json_value(value):
    if value is None or isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return int(value)
    value = float(f"{float(value):.9g}")
    return value if math.isfinite(value) else None


def emit(table: ResultsTable, fmt: str, path) -> Path:
    """Write ``table`` as CSV (fixed header) or a JSON array of row objects.

    Missing values (USE of detectors without an activity decision) are empty
    CSV cells and JSON nulls.
    """
    path = Path(path)
    if fmt not in ("csv", "json"):
        raise InvalidArgument(f"format must be csv or json, got {fmt!r}")
    try:
        with path.open("w", newline="") as fh:
            if fmt == "csv":
                writer = csv.writer(fh)
                writer.writerow(RESULT_FIELDS)
                for row in table.rows:
                    writer.writerow([_fmt(getattr(row, f)) for f in RESULT_FIELDS])
            else:
                doc = [{f: _json_value(getattr(row, f)) for f in RESULT_FIELDS} for row in table.rows]
                json.dump(doc, fh, indent=1)
                fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_csv(path) -> list[dict]:
    """Parse an emitted CSV back into typed dicts (empty cells become None)."""
    out = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for key, val in rec.items():
                if key == "detector":
                    row[key] = val
                elif val == "":
                    row[key] = None
                elif key == "edge_updates_total":
                    row[key] = int(val)
                else:
                    row[key] = float(val)
            out.append(row)
    return out


# ---------------------------------------------------------------- oracle check


def block_instance(k_users: int, rho: float, sigma2: float, seed=None, antennas_per_user: int = 1,
                   isolated: int = 0):
    """Instance whose every antenna observes exactly one user.

    Users ``k_users - isolated ..`` get no antennas at all.  Returns
    ``(h, x, lam, y)`` with ``y = h x + z``.
    """
    rng = np.random.default_rng(seed)
    observed = k_users - isolated
    h = np.zeros((observed * antennas_per_user, k_users))
    for k in range(observed):
        rows = slice(k * antennas_per_user, (k + 1) * antennas_per_user)
        h[rows, k] = rng.normal(0.0, 1.0, antennas_per_user) + rng.choice([-1, 1], antennas_per_user) * 0.2
    lam, _, x = sample_source(k_users, rho, child(seed if seed is not None else 0, 1))
    y = h @ x + np.sqrt(sigma2) * rng.standard_normal(h.shape[0])
    return h, x, lam, y


@dataclass
class OracleReport:
    trial: int
    max_prob_gap: float
    max_mean_gap: float
    mse_bgmp: float
    mse_oracle: float

    @property
    def mse_gap(self) -> float:
        return self.mse_bgmp - self.mse_oracle


def compare_to_oracle(h, y, eta_variance, rho, x_true, trial: int = 0,
                      bgmp_config: BGMPConfig | None = None) -> OracleReport:
    """Run BGMP and the exact posterior on the same (already sqrt(P)-scaled) model."""
    k = h.shape[1]
    res = run_bgmp(y, build_graph(h), eta_variance, Priors.from_rho(k, rho), bgmp_config)
    exact = baselines.exact_posterior_oracle(h, y, eta_variance, rho)
    return OracleReport(
        trial=trial,
        max_prob_gap=float(np.max(np.abs(res.posterior_prob - exact.prob_active))),
        max_mean_gap=float(np.max(np.abs(res.x_soft - exact.mean))),
        mse_bgmp=mse(x_true, res.x_soft),
        mse_oracle=mse(x_true, exact.mean))


def oracle_check(cfg: ExperimentConfig, block: bool = False, sigma2: float = 0.1) -> list[OracleReport]:
    """Per-trial BGMP-vs-exact-posterior gaps on small instances (K <= 12).

    ``block=True`` uses one antenna per user, where BGMP is exact.  Otherwise
    a random network drawn from ``cfg`` is used with the model BGMP assumes
    (sparsified channel plus independent interference), and the gap is only
    diagnostic.
    """
    if cfg.k_users > baselines.ORACLE_MAX_USERS:
        raise InvalidArgument(
            f"oracle check needs k_users <= {baselines.ORACLE_MAX_USERS}, got {cfg.k_users}")
    cfg.validate()
    reports = []
    for t in range(cfg.trials):
        if block:
            h, x, lam, y = block_instance(cfg.k_users, cfg.rho, sigma2, child(cfg.seed, t))
            eta = np.full(h.shape[0], sigma2)
        else:
            geom, h_full, lam, x, noise_seed = draw_realization(cfg, t)
            rsnr = cfg.rsnr_db_list[-1]
            s2 = calibrate_noise(h_full, cfg.p_tx, rsnr, cfg.rsnr_norm, cfg.n_antennas)
            channel = sparsify(h_full, geom, cfg.d0_km[0]).with_interference(cfg.p_tx, s2)
            h = np.sqrt(cfg.p_tx) * channel.h_sparse
            eta = channel.eta_variance
            y = h @ x + np.sqrt(eta) * np.random.default_rng(noise_seed).standard_normal(len(eta))
        reports.append(compare_to_oracle(h, y, eta, cfg.rho, x, t, cfg.bgmp_config()))
    return reports
