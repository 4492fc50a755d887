"""Trend indicators built from flat moving averages of past returns."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray

from .data import DataError, ReturnsPanel

logger = logging.getLogger(__name__)

__all__ = ["IndicatorPanel", "indicator_covariance", "trend_indicator"]

STD_FLOOR = 1e-8
MIN_PRESENT = 0.8


@dataclass(frozen=True)
class IndicatorPanel:
    """Indicator values p (T x N); NaN marks dates where an asset has no value."""

    dates: NDArray[np.datetime64]
    assets: tuple[str, ...]
    values: NDArray[np.float64]
    lookback: int
    norm_window: int

    @property
    def available(self) -> NDArray[np.bool_]:
        return ~np.isnan(self.values)

    @property
    def warmup(self) -> int:
        """Index of the first date at which a fully observed panel yields values."""
        return self.lookback + self.norm_window - 1

    def as_panel(self) -> ReturnsPanel:
        """Same CSV layout as a returns panel."""
        return ReturnsPanel(self.dates, self.assets, self.values)


def _nanmean(win: NDArray[np.float64]) -> NDArray[np.float64]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(win, axis=-1)


def _first_valid(x: NDArray[np.float64]) -> NDArray[np.intp]:
    has = ~np.isnan(x)
    return np.where(np.any(has, axis=0), np.argmax(has, axis=0), x.shape[0])


def _flat_mean(x: NDArray[np.float64], lookback: int) -> NDArray[np.float64]:
    """Mean of x over rows [t-lookback, t-1].

    NaN until a full window has elapsed since the column's first observation,
    and wherever less than 80% of the window is present.
    """
    t, n = x.shape
    out = np.full((t, n), np.nan)
    if t <= lookback:
        return out
    win = sliding_window_view(x[:-1], lookback, axis=0)
    present = np.sum(~np.isnan(win), axis=-1)
    if present.min() == lookback:
        m = np.mean(win, axis=-1)
    else:
        m = _nanmean(win)
        rows = np.arange(lookback, t)[:, None]
        ok = (present >= MIN_PRESENT * lookback) & (rows >= _first_valid(x)[None, :] + lookback)
        m = np.where(ok, m, np.nan)
    out[lookback:] = m
    return out


def _trailing_rms(x: NDArray[np.float64], window: int) -> NDArray[np.float64]:
    """Root mean square of x over rows [t-window+1, t].

    Zero-mean dispersion: demeaning a slow moving average inside a window
    of a few lookbacks removes most of its variance. A value needs a full
    window since the column's first observation, the current value, and at
    least 80% of the window present.
    """
    t, n = x.shape
    out = np.full((t, n), np.nan)
    if t < window:
        return out
    win = sliding_window_view(x, window, axis=0)
    present = np.sum(~np.isnan(win), axis=-1)
    if present.min() == window:
        out[window - 1:] = np.sqrt(np.mean(win**2, axis=-1))
        return out
    rms = np.sqrt(_nanmean(win**2))
    rows = np.arange(window - 1, t)[:, None]
    ok = (present >= MIN_PRESENT * window) & (rows >= _first_valid(x)[None, :] + window - 1) & ~np.isnan(x[window - 1:])
    out[window - 1:] = np.where(ok, rms, np.nan)
    return out


def trend_indicator(panel: ReturnsPanel, lookback: int = 252, norm_window: int = 504) -> IndicatorPanel:
    """Flat moving average of past returns, scaled to unit trailing dispersion.

    The raw value at ``t`` averages returns over ``[t - lookback, t - 1]``.
    It is divided by the root mean square of the raw indicator over its
    last ``norm_window`` values (all computed from returns before ``t``), so no
    value depends on the return at or after its own date.
    """
    if lookback < 2:
        raise DataError("lookback must be >= 2")
    if norm_window < 2:
        raise DataError("norm_window must be >= 2")
    t = panel.shape[0]
    if t <= lookback + norm_window:
        raise DataError(
            f"insufficient history: {t} rows, need more than lookback + norm_window = {lookback + norm_window}"
        )
    raw = _flat_mean(panel.returns, lookback)
    sd = _trailing_rms(raw, norm_window)
    low = sd < STD_FLOOR
    if np.any(low):
        bad = [panel.assets[j] for j in np.flatnonzero(np.any(low, axis=0))]
        logger.warning("indicator dispersion floored at %g for %s", STD_FLOOR, ", ".join(bad))
        sd = np.where(low, STD_FLOOR, sd)
    return IndicatorPanel(panel.dates, panel.assets, raw / sd, lookback, norm_window)


def indicator_covariance(ind: IndicatorPanel | NDArray[np.float64]) -> NDArray[np.float64]:
    """Second-moment matrix E[p p^T] over fully available rows (no demeaning)."""
    v = np.asarray(getattr(ind, "values", ind), dtype=np.float64)
    rows = v[~np.any(np.isnan(v), axis=1)]
    if rows.shape[0] < 2:
        raise DataError(f"need at least 2 available indicator rows, got {rows.shape[0]}")
    q = rows.T @ rows / rows.shape[0]
    return 0.5 * (q + q.T)
