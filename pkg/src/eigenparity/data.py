"""Return panels: CSV ingestion, causal vol normalization and synthetic factor markets."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray

logger = logging.getLogger(__name__)

__all__ = [
    "DataError",
    "ReturnsPanel",
    "SyntheticSpec",
    "generate_synthetic",
    "load_csv",
    "normalize_panel",
    "save_csv",
]

STD_FLOOR = 1e-8
MISSING_TOKENS = frozenset({"", "na", "n/a", "nan", "null"})


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ReturnsPanel:
    """T x N returns with dates and asset labels. Missing cells are NaN."""

    dates: NDArray[np.datetime64]
    assets: tuple[str, ...]
    returns: NDArray[np.float64]
    normalized: bool = False

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        rets = np.asarray(self.returns, dtype=np.float64)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "assets", tuple(str(a) for a in self.assets))
        object.__setattr__(self, "returns", rets)
        if rets.ndim != 2:
            raise DataError(f"returns must be 2-D, got shape {rets.shape}")
        if rets.shape != (len(dates), len(self.assets)):
            raise DataError(
                f"shape mismatch: returns {rets.shape}, {len(dates)} dates, {len(self.assets)} assets"
            )
        if len(dates) > 1 and not np.all(np.diff(dates) > np.timedelta64(0, "D")):
            raise DataError("dates must be strictly increasing")
        if np.any(np.isinf(rets)):
            raise DataError("returns contain infinite values")

    @property
    def shape(self) -> tuple[int, int]:
        return self.returns.shape

    @property
    def mask(self) -> NDArray[np.bool_]:
        """True where a return is present."""
        return ~np.isnan(self.returns)

    def head(self, n: int) -> "ReturnsPanel":
        return replace(self, dates=self.dates[:n], returns=self.returns[:n])

    def select(self, assets: Sequence[str]) -> "ReturnsPanel":
        idx = [self.assets.index(a) for a in assets]
        return replace(self, assets=tuple(assets), returns=self.returns[:, idx])


def _parse_date(text: str, row: int) -> np.datetime64:
    try:
        return np.datetime64(text.strip(), "D")
    except ValueError as exc:
        raise DataError(f"row {row}: bad ISO-8601 date {text!r}") from exc


def load_csv(path: str | Path, allow_missing: bool = True, missing_tokens=MISSING_TOKENS) -> ReturnsPanel:
    """Read a ``date,ASSET1,ASSET2,...`` panel.

    Empty cells are missing. Other missing spellings (``n/a``, ``NaN``...) are
    accepted only with ``allow_missing``; otherwise any non-numeric cell is a
    parse error reporting its row and column.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        assets = [h.strip() for h in header[1:]]
        if len(assets) < 2:
            raise DataError(f"{path}: need at least 2 assets, found {len(assets)}")
        if len(set(assets)) != len(assets):
            raise DataError(f"{path}: duplicate asset labels")
        dates, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, found {len(rec)}")
            dates.append(_parse_date(rec[0], lineno))
            vals = []
            for col, cell in enumerate(rec[1:], start=1):
                token = cell.strip()
                if token == "":
                    vals.append(math.nan)
                    continue
                if token.lower() in missing_tokens:
                    if not allow_missing:
                        raise DataError(f"{path}:{lineno}: column {col} ({assets[col - 1]}): missing value {cell!r}")
                    vals.append(math.nan)
                    continue
                try:
                    v = float(token)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {col} ({assets[col - 1]}): malformed cell {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{lineno}: column {col} ({assets[col - 1]}): non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    d = np.array(dates, dtype="datetime64[D]")
    r = np.array(rows, dtype=np.float64)
    if len(np.unique(d)) != len(d):
        dup = d[np.argmax(np.diff(np.sort(d)) == np.timedelta64(0, "D"))]
        raise DataError(f"{path}: duplicate date {dup}")
    order = np.argsort(d, kind="stable")
    return ReturnsPanel(d[order], tuple(assets), r[order])


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def save_csv(panel: ReturnsPanel, path: str | Path) -> None:
    """Write a panel; floats use the shortest round-trip repr so reload is bit-exact."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *panel.assets])
        for d, row in zip(panel.dates, panel.returns):
            w.writerow([str(d), *(_fmt(v) for v in row)])


def _trailing_std(x: NDArray[np.float64], window: int) -> NDArray[np.float64]:
    """Std (ddof=1) over rows [t-window, t-1]; NaN for t < window or < 2 observations."""
    t, n = x.shape
    out = np.full((t, n), np.nan)
    if t <= window:
        return out
    win = sliding_window_view(x[:-1], window, axis=0)  # (t-window, n, window)
    count = np.sum(~np.isnan(win), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sd = np.nanstd(win, axis=-1, ddof=1) if np.any(np.isnan(win)) else np.std(win, axis=-1, ddof=1)
    sd = np.where(count >= 2, sd, np.nan)
    out[window:] = sd
    return out


def normalize_panel(panel: ReturnsPanel, window: int = 100, full_sample: bool = False) -> ReturnsPanel:
    """Divide returns by a trailing standard deviation.

    The rolling variant uses returns strictly before ``t`` so it is causal;
    the first ``window`` rows come out missing. ``full_sample`` divides each
    column by its whole-sample std instead (not causal, for tests).
    """
    if window < 2:
        raise DataError("normalization window must be >= 2")
    x = panel.returns
    if full_sample:
        sd = np.nanstd(x, axis=0, ddof=1)[None, :] * np.ones_like(x)
    else:
        sd = _trailing_std(x, window)
    low = sd < STD_FLOOR
    if np.any(low):
        bad = [panel.assets[j] for j in np.flatnonzero(np.any(low, axis=0))]
        logger.warning("zero trailing dispersion floored at %g for %s", STD_FLOOR, ", ".join(bad))
        sd = np.where(low, STD_FLOOR, sd)
    return replace(panel, returns=x / sd, normalized=True)


@dataclass
class SyntheticSpec:
    """Gaussian factor market r_t = drift_t + B f_t + eps_t.

    ``loadings`` overrides the random (``loading_mean``, ``loading_std``)
    draw when given. The drift of each asset follows an AR(1) process with
    coefficient ``drift_ar`` and stationary std ``drift_vol``; optionally a
    common-factor drift with stationary std ``factor_drift_vol``.
    ``regime_length`` > 0 redraws the loadings every that many days.
    """

    n_assets: int = 10
    n_days: int = 2000
    n_factors: int = 1
    loadings: list[list[float]] | None = None
    loading_mean: float = 0.5
    loading_std: float = 0.2
    factor_vol: float | list[float] = 1.0
    idio_vol: float = 1.0
    drift_ar: float = 0.0
    drift_vol: float = 0.0
    factor_drift_vol: float = 0.0
    regime_length: int = 0
    start_date: str = "2000-01-03"
    seed: int = 0
    asset_prefix: str = "A"

    def __post_init__(self):
        if self.n_assets < 1 or self.n_days < 1 or self.n_factors < 0:
            raise DataError("n_assets, n_days must be >= 1 and n_factors >= 0")
        if not 0.0 <= self.drift_ar < 1.0:
            raise DataError("drift_ar must be in [0, 1)")
        if self.idio_vol <= 0:
            raise DataError("idio_vol must be positive")

    @classmethod
    def from_json(cls, path_or_text: str | Path | dict) -> "SyntheticSpec":
        if isinstance(path_or_text, dict):
            data = path_or_text
        else:
            p = Path(path_or_text)
            data = json.loads(p.read_text()) if p.exists() else json.loads(str(path_or_text))
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"unknown SyntheticSpec fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def factor_vols(self) -> NDArray[np.float64]:
        fv = np.broadcast_to(np.asarray(self.factor_vol, dtype=np.float64), (self.n_factors,))
        return np.array(fv)


def _draw_loadings(spec: SyntheticSpec, rng: np.random.Generator) -> NDArray[np.float64]:
    return spec.loading_mean + spec.loading_std * rng.standard_normal((spec.n_assets, spec.n_factors))


def _implied_correlation(b: NDArray[np.float64], fv: NDArray[np.float64], idio: float) -> NDArray[np.float64]:
    cov = (b * fv**2) @ b.T + idio**2 * np.eye(b.shape[0])
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    np.fill_diagonal(corr, 1.0)
    return 0.5 * (corr + corr.T)


def generate_synthetic(spec: SyntheticSpec):
    """Simulate a panel and return it with the exact implied correlation model.

    Returns ``(panel, truth)`` where truth is a ``CorrelationModel`` with
    provenance ``"true"``. With regime switching, truth is the correlation of
    the final regime and ``truth.meta["regimes"]`` holds the regime count.
    """
    from .estimators import CorrelationModel

    rng = np.random.default_rng(spec.seed)
    n, t, k = spec.n_assets, spec.n_days, spec.n_factors
    fv = spec.factor_vols()
    if spec.loadings is not None:
        b0 = np.asarray(spec.loadings, dtype=np.float64).reshape(n, k)
    else:
        b0 = _draw_loadings(spec, rng)

    f = rng.standard_normal((t, k)) * fv
    eps = spec.idio_vol * rng.standard_normal((t, n))

    if spec.regime_length > 0 and spec.loadings is None:
        n_reg = -(-t // spec.regime_length)
        bs = [b0] + [_draw_loadings(spec, rng) for _ in range(n_reg - 1)]
    else:
        bs = [b0]
    regime_of = np.minimum(np.arange(t) // spec.regime_length, len(bs) - 1) if len(bs) > 1 else np.zeros(t, int)

    drift = np.zeros((t, n))
    if spec.drift_vol > 0 or spec.factor_drift_vol > 0:
        a = spec.drift_ar
        innov_scale = math.sqrt(1.0 - a * a)
        mu = spec.drift_vol * rng.standard_normal(n)
        fmu = spec.factor_drift_vol * rng.standard_normal(k)
        ei = rng.standard_normal((t, n))
        ef = rng.standard_normal((t, k))
        for s in range(t):
            drift[s] = mu + bs[regime_of[s]] @ fmu
            mu = a * mu + spec.drift_vol * innov_scale * ei[s]
            fmu = a * fmu + spec.factor_drift_vol * innov_scale * ef[s]

    r = drift + eps
    for g, b in enumerate(bs):
        rows = regime_of == g
        r[rows] += f[rows] @ b.T

    start = np.datetime64(spec.start_date, "D")
    dates = np.busday_offset(start, np.arange(t), roll="forward")
    width = max(2, len(str(n)))
    assets = tuple(f"{spec.asset_prefix}{i + 1:0{width}d}" for i in range(n))
    panel = ReturnsPanel(dates, assets, r)

    corrs = [_implied_correlation(b, fv, spec.idio_vol) for b in bs]
    truth = CorrelationModel.from_matrix(corrs[-1], provenance="true", meta={"regimes": len(corrs)})
    return panel, truth
