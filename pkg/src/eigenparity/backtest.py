"""Rolling-window trend-following backtest and the per-eigenmode risk experiment."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.stats import random_correlation

from .data import ReturnsPanel, normalize_panel
from .estimators import CorrelationModel, QModel, RIEConfig, empirical_correlation, materialize_q, rie_clean
from .matlib import EigenDecomposition, sym_eigen
from .portfolio import EigenRiskProfile, eigenrisk_profile
from .signals import trend_indicator

logger = logging.getLogger(__name__)

__all__ = [
    "BacktestConfig",
    "BacktestError",
    "BacktestReport",
    "eigenrisk_experiment",
    "max_threads",
    "parse_method",
    "planted_correlation",
    "run_backtest",
    "run_many",
    "summarize",
    "summary_stats",
]

TRADING_DAYS = 252
STD_FLOOR = 1e-12
FLOOR_RELATIVE = 1e-8
BASE_METHODS = ("equal", "markowitz_raw", "markowitz_rie", "arp", "erp")


class BacktestError(RuntimeError):
    pass


def max_threads() -> int:
    """Parallelism cap from EIGENPARITY_THREADS (default: CPU count)."""
    env = os.environ.get("EIGENPARITY_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning("ignoring non-integer EIGENPARITY_THREADS=%r", env)
    return os.cpu_count() or 1


def parse_method(name: str, default_phi: float) -> tuple[str, float | None]:
    """'erp' or 'erp:0.3' -> ('erp', phi); other methods carry no parameter."""
    base, _, arg = name.partition(":")
    if base not in BASE_METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(BASE_METHODS)}")
    if base == "erp":
        phi = float(arg) if arg else default_phi
        if not 0.0 <= phi <= 1.0:
            raise ValueError(f"erp shrinkage must lie in [0, 1], got {phi}")
        return base, phi
    if arg:
        raise ValueError(f"method {base!r} takes no parameter")
    return base, None


def _method_label(name: str, default_phi: float) -> str:
    base, phi = parse_method(name, default_phi)
    return f"erp:{phi:g}" if base == "erp" else base


@dataclass
class BacktestConfig:
    """Backtest settings.

    Positions are recomputed every ``rebalance_every`` days from the current
    indicator; correlation models are re-estimated every
    ``reestimate_every`` days on the trailing ``estimation_window`` rows.
    ``vol_target`` is the common annualized volatility all reported P&L
    series are rescaled to.
    """

    estimation_window: int = 1000
    reestimate_every: int = 21
    rebalance_every: int = 1
    methods: tuple[str, ...] = ("equal", "markowitz_raw", "markowitz_rie", "arp")
    phi: float = 0.5
    vol_target: float = 0.10
    lookback: int = 252
    norm_window: int = 504
    vol_window: int = 100
    rie_eta: float | None = None
    rie_isotonic: bool = True
    max_failure_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.methods = tuple(self.methods)
        if not self.methods:
            raise ValueError("at least one method is required")
        for m in self.methods:
            parse_method(m, self.phi)
        labels = [_method_label(m, self.phi) for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate methods: {labels}")
        if self.rebalance_every < 1 or self.reestimate_every < 1:
            raise ValueError("rebalance and re-estimation frequencies must be >= 1")
        if self.estimation_window < 2:
            raise ValueError("estimation_window must be >= 2")
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError("phi must lie in [0, 1]")
        if self.vol_target <= 0:
            raise ValueError("vol_target must be positive")

    @property
    def labels(self) -> list[str]:
        return [_method_label(m, self.phi) for m in self.methods]

    @property
    def rie(self) -> RIEConfig:
        return RIEConfig(eta=self.rie_eta, isotonic=self.rie_isotonic)

    def warmup(self) -> int:
        """Row index of the first traded day."""
        return self.vol_window + max(self.estimation_window, self.lookback + self.norm_window - 1)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BacktestConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown backtest config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["methods"] = list(self.methods)
        return out


@dataclass
class BacktestReport:
    dates: NDArray[np.datetime64]
    assets: tuple[str, ...]
    labels: list[str]
    pnl: dict[str, NDArray[np.float64]]
    pnl_raw: dict[str, NDArray[np.float64]]
    positions: dict[str, NDArray[np.float64]]
    eigenrisk: dict[str, EigenRiskProfile]
    cross_prediction: NDArray[np.float64]
    config: dict[str, Any]
    failures: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    # factor applied to pnl_raw (and the unit-ex-ante positions) to reach vol_target
    scales: dict[str, float] = field(default_factory=dict)
    # unit ex-ante volatility positions, before the whole-sample rescale
    positions_raw: dict[str, NDArray[np.float64]] = field(default_factory=dict)

    def summary(self) -> dict[str, dict[str, float]]:
        return summarize(self)


def _floored_decomposition(model: CorrelationModel) -> EigenDecomposition:
    dec = model.decomposition
    lam = dec.eigenvalues
    floor = FLOOR_RELATIVE * lam[0]
    if lam[-1] > floor:
        return dec
    return EigenDecomposition(np.maximum(lam, floor), dec.eigenvectors)


def _window_correlation(window: NDArray[np.float64]) -> CorrelationModel:
    """Empirical correlation where stale (zero-variance) columns are treated as uncorrelated."""
    complete = window[~np.any(np.isnan(window), axis=1)]
    n = window.shape[1]
    live = np.ptp(complete, axis=0) > 0 if complete.shape[0] else np.zeros(n, bool)
    if np.all(live):
        return empirical_correlation(window)
    m = np.eye(n)
    if np.sum(live) >= 2:
        sub = empirical_correlation(complete[:, live])
        m[np.ix_(live, live)] = sub.matrix
    meta = {"rank_deficient": complete.shape[0] <= n, "stale_columns": np.flatnonzero(~live).tolist()}
    return CorrelationModel(m, "empirical", (complete.shape[0], n), meta)


def _operators(window: NDArray[np.float64], cfg: BacktestConfig, parsed) -> tuple[dict, dict]:
    """Per-method linear maps p -> pi and the risk matrix used for ex-ante vol targeting."""
    raw = _window_correlation(window)
    n = raw.dim
    need_rie = any(base != "markowitz_raw" for base, _ in parsed)
    rie = None
    if need_rie:
        rcfg = cfg.rie
        if raw.sample_shape[0] <= n:
            rcfg = RIEConfig(eta=rcfg.eta, isotonic=rcfg.isotonic, floor=FLOOR_RELATIVE)
        rie = rie_clean(raw, rcfg)
    ops, risk = {}, {}
    for (base, phi), label in zip(parsed, cfg.labels):
        if base == "equal":
            ops[label] = np.eye(n)
            risk[label] = rie.matrix
        elif base == "markowitz_raw":
            ops[label] = _floored_decomposition(raw).power(-1.0, eps=0.0)
            risk[label] = raw.matrix
        elif base == "markowitz_rie":
            ops[label] = rie.power(-1.0)
            risk[label] = rie.matrix
        elif base == "arp":
            ops[label] = rie.power(-0.5)
            risk[label] = rie.matrix
        else:
            q = materialize_q(QModel("shrunk", phi), rie)
            ops[label] = rie.power(-0.5) @ sym_eigen(q).power(-0.5)
            risk[label] = rie.matrix
    return ops, {"raw": raw, "rie": rie, "risk": risk}


def run_backtest(panel: ReturnsPanel, cfg: BacktestConfig | None = None) -> BacktestReport:
    """Simulate every configured method on one panel.

    Returns are vol-normalized causally, the trend indicator is built on the
    normalized returns and each day's positions use only data from earlier
    days. Positions are scaled to unit ex-ante volatility; the reported
    ``pnl`` is additionally rescaled so every method has the same realized
    volatility (``vol_target``). ``pnl_raw`` holds the series before that
    final, whole-sample rescaling.
    """
    cfg = cfg or BacktestConfig()
    parsed = [parse_method(m, cfg.phi) for m in cfg.methods]
    labels = cfg.labels
    norm = panel if panel.normalized else normalize_panel(panel, cfg.vol_window)
    x = norm.returns
    t_total, n = x.shape
    start = cfg.warmup()
    if start >= t_total:
        raise BacktestError(f"insufficient history: {t_total} rows, warm-up needs {start + 1}")
    if cfg.estimation_window < n:
        logger.warning("estimation window %d < N = %d: raw correlation is singular", cfg.estimation_window, n)
    ind = trend_indicator(norm, cfg.lookback, cfg.norm_window)
    p_all = np.nan_to_num(ind.values, nan=0.0)
    x0 = np.nan_to_num(x, nan=0.0)

    days = t_total - start
    pos = {lab: np.zeros((days, n)) for lab in labels}
    pnl_raw = {lab: np.zeros(days) for lab in labels}
    cross = np.zeros((n, n))
    cross_count = 0
    failures: list[str] = []
    n_est = 0
    ops = state = None

    for blk in range(start, t_total, cfg.reestimate_every):
        end = min(blk + cfg.reestimate_every, t_total)
        n_est += 1
        window = x[blk - cfg.estimation_window: blk]
        try:
            ops, state = _operators(window, cfg, parsed)
        except (ValueError, ArithmeticError) as exc:
            failures.append(f"{norm.dates[blk]}: {exc}")
            logger.warning("estimation failed at %s (%s); keeping previous allocation", norm.dates[blk], exc)
            if ops is None:
                raise BacktestError(f"estimation failed on first date {norm.dates[blk]}: {exc}") from exc
        rows = np.arange(blk, end)
        rebal = start + ((rows - start) // cfg.rebalance_every) * cfg.rebalance_every
        p = p_all[rebal]
        for lab in labels:
            m = ops[lab]
            raw_pos = np.einsum("ij,tj->ti", m, p)
            c = state["risk"][lab]
            var = np.einsum("ti,ij,tj->t", raw_pos, c, raw_pos)
            scale = np.where(var > 0, 1.0 / np.sqrt(np.where(var > 0, var, 1.0)), 0.0)
            block_pos = raw_pos * scale[:, None]
            pos[lab][rows - start] = block_pos
            pnl_raw[lab][rows - start] = np.einsum("ti,ti->t", block_pos, x0[rows])
        if state is not None and state["rie"] is not None:
            rh = np.einsum("ij,tj->ti", state["rie"].power(-0.5), x0[rows])
            cross += np.einsum("ta,tb->ab", p, rh)
            cross_count += len(rows)

    if failures and len(failures) > cfg.max_failure_rate * n_est:
        raise BacktestError(f"{len(failures)} of {n_est} estimation dates failed")

    daily_target = cfg.vol_target / math.sqrt(TRADING_DAYS)
    pnl, scales, pos_raw = {}, {}, dict(pos)
    for lab in labels:
        sd = float(np.std(pnl_raw[lab], ddof=1)) if days > 1 else 0.0
        k = daily_target / sd if sd > STD_FLOOR else 0.0
        pnl[lab] = pnl_raw[lab] * k
        pos[lab] = pos[lab] * k
        scales[lab] = k

    traded = x[start:]
    ref = empirical_correlation(traded) if traded.shape[0] > 1 and np.all(np.nanstd(traded, axis=0) > 0) else None
    eig = {}
    if ref is not None and ref.is_spd:
        for lab in labels:
            eig[lab] = eigenrisk_profile(pos[lab], ref, omega=1.0, method=lab)

    notes = [
        "Sharpe levels depend on the universe, the period and the strength of its trends; "
        "compare methods by their ordering and risk profiles, not by absolute magnitudes."
    ]
    return BacktestReport(
        dates=norm.dates[start:],
        assets=norm.assets,
        labels=labels,
        pnl=pnl,
        pnl_raw=pnl_raw,
        positions=pos,
        eigenrisk=eig,
        cross_prediction=cross / max(cross_count, 1),
        config=cfg.to_dict(),
        failures=failures,
        notes=notes,
        scales=scales,
        positions_raw=pos_raw,
    )


def summary_stats(series: Sequence[float] | NDArray[np.float64]) -> dict[str, float]:
    """Annualized Sharpe and vol, t-stat, and max drawdown of the cumulative sum."""
    s = np.asarray(series, dtype=np.float64)
    n = s.shape[0]
    if n < 2:
        raise ValueError("need at least 2 observations")
    mean = float(np.mean(s))
    sd = float(np.std(s, ddof=1))
    degenerate = sd < STD_FLOOR
    sd_eff = max(sd, STD_FLOOR)
    cum = np.cumsum(s)
    peak = np.maximum.accumulate(np.concatenate(([0.0], cum)))[1:]
    return {
        "mean": mean,
        "vol": sd * math.sqrt(TRADING_DAYS),
        "sharpe": mean / sd_eff * math.sqrt(TRADING_DAYS),
        "t_stat": mean / sd_eff * math.sqrt(n),
        "max_drawdown": float(np.max(peak - cum)),
        "total": float(cum[-1]),
        "n_days": n,
        "degenerate": bool(degenerate),
    }


def summarize(report: BacktestReport) -> dict[str, dict[str, float]]:
    out = {}
    for lab in report.labels:
        st = summary_stats(report.pnl[lab])
        if lab in report.eigenrisk:
            st["eigenrisk_dispersion"] = report.eigenrisk[lab].dispersion()
        out[lab] = st
    return out


def planted_correlation(n: int, condition: float, seed: int | np.random.Generator | None = 0) -> CorrelationModel:
    """Random correlation matrix with geometrically spaced eigenvalues of the given condition number."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if n == 1:
        return CorrelationModel.identity(1)
    lam = condition ** (-np.arange(n) / (n - 1))
    lam *= n / lam.sum()
    m = random_correlation.rvs(lam, random_state=rng, tol=1e-12)
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 1.0)
    return CorrelationModel(m, "true", None, {"condition": condition})


def eigenrisk_experiment(n: int = 20, draws: int = 50_000, condition: float = 100.0, seed: int = 0,
                         sigma_p: float = 1.0, omega: float = 1.0,
                         c_true: CorrelationModel | None = None):
    """Realized per-mode risk of equal, Markowitz and ARP allocations.

    Indicators are drawn with realized covariance sigma_p I and all methods
    use the planted correlation. Returns ``(profiles, c_true)`` where profiles
    maps ``equal``, ``markowitz`` and ``arp`` to EigenRiskProfile. Under this
    setting the expected curves are omega^2 lambda_a, omega^2 / lambda_a and
    omega^2 respectively.
    """
    rng = np.random.default_rng(seed)
    if c_true is None:
        c_true = planted_correlation(n, condition, rng)
    n = c_true.dim
    p = math.sqrt(sigma_p) * rng.standard_normal((draws, n))
    maps = {
        "equal": np.eye(n),
        "markowitz": c_true.power(-1.0),
        "arp": c_true.power(-0.5),
    }
    # reference level omega^2 sigma_p absorbs the indicator scale
    ref_omega = omega * math.sqrt(sigma_p)
    profiles = {}
    for name, m in maps.items():
        positions = omega * (p @ m)
        profiles[name] = eigenrisk_profile(positions, c_true, omega=ref_omega, method=name)
    return profiles, c_true


def run_many(make_panel: Callable[[int], ReturnsPanel], cfg: BacktestConfig, seeds: Iterable[int],
             threads: int | None = None) -> list[BacktestReport]:
    """Run independent backtests (one per seed) concurrently; results in seed order."""
    seeds = list(seeds)
    threads = threads or max_threads()

    def one(s):
        return run_backtest(make_panel(s), cfg)

    if threads <= 1 or len(seeds) <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, seeds))
