"""Whitening, allocators, gains and per-eigenmode risk.

All allocators map an indicator vector p to physical positions pi:

    equal       pi = omega p
    markowitz   pi = omega C^{-1} p
    erp         pi = omega C^{-1/2} Q^{-1/2} p
    arp         pi = omega C^{-1/2} p          (erp with Q = I)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .estimators import CorrelationModel
from .matlib import check_rotation, sym_eigen

logger = logging.getLogger(__name__)

__all__ = [
    "AllocationVector",
    "EigenRiskProfile",
    "GainRecord",
    "allocate_arp",
    "allocate_equal",
    "allocate_erp",
    "allocate_markowitz",
    "eigenrisk_profile",
    "gain_record",
    "realized_gain",
    "rotation_invariance_check",
    "volatility_target",
    "whiten_indicators",
    "whiten_returns",
]

METHODS = ("erp", "arp", "markowitz", "equal_weight")


@dataclass(frozen=True)
class AllocationVector:
    positions: NDArray[np.float64]
    omega: float = 1.0
    method: str = "arp"
    date: np.datetime64 | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        object.__setattr__(self, "positions", pos)
        if pos.ndim != 1:
            raise ValueError("positions must be a vector")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class GainRecord:
    total: float
    per_mode: NDArray[np.float64]
    date: np.datetime64 | None = None


@dataclass(frozen=True)
class EigenRiskProfile:
    """R_a for each eigenmode of the reference correlation, descending eigenvalue order."""

    eigenvalues: NDArray[np.float64]
    per_mode_risk: NDArray[np.float64]
    omega2_reference: float = 1.0
    method: str = ""

    def normalized(self) -> NDArray[np.float64]:
        return self.per_mode_risk / self.omega2_reference

    def dispersion(self) -> float:
        """Variance of R_a relative to its mean (scale-free flatness measure)."""
        r = self.per_mode_risk / np.mean(self.per_mode_risk)
        return float(np.var(r))


def _vec(x: ArrayLike, n: int, name: str) -> NDArray[np.float64]:
    v = np.asarray(x, dtype=np.float64)
    if v.shape[-1] != n:
        raise ValueError(f"{name} has length {v.shape[-1]}, expected {n}")
    return v


def _model(c) -> CorrelationModel:
    return c if isinstance(c, CorrelationModel) else CorrelationModel.from_matrix(c)


def whiten_returns(r: ArrayLike, c: CorrelationModel | ArrayLike) -> NDArray[np.float64]:
    """C^{-1/2} r. Accepts a single vector or a T x N block of row vectors."""
    c = _model(c)
    r = _vec(r, c.dim, "r")
    return r @ c.power(-0.5)  # symmetric, so row form equals C^{-1/2} r


def whiten_indicators(p: ArrayLike, q: ArrayLike) -> NDArray[np.float64]:
    """Q^{-1/2} p for a general SPD indicator covariance (not necessarily unit diagonal)."""
    qd = sym_eigen(q)
    p = _vec(p, qd.dim, "p")
    return p @ qd.power(-0.5)


def allocate_erp(p: ArrayLike, c: CorrelationModel | ArrayLike, q: ArrayLike | None = None,
                 omega: float = 1.0, date=None) -> AllocationVector:
    """Eigenrisk parity: omega C^{-1/2} Q^{-1/2} p. ``q=None`` means Q = I."""
    c = _model(c)
    p = _vec(p, c.dim, "p")
    ph = p if q is None else whiten_indicators(p, q)
    pos = omega * (c.power(-0.5) @ ph)
    return AllocationVector(pos, omega, "erp" if q is not None else "arp", date)


def allocate_arp(p: ArrayLike, c: CorrelationModel | ArrayLike, omega: float = 1.0, date=None) -> AllocationVector:
    c = _model(c)
    if c.provenance not in ("rie", "true", "identity"):
        logger.warning("ARP on a %s correlation model; a cleaned (rie) model is intended", c.provenance)
    return allocate_erp(p, c, None, omega, date)


def allocate_markowitz(p: ArrayLike, c: CorrelationModel | ArrayLike, omega: float = 1.0, date=None) -> AllocationVector:
    c = _model(c)
    p = _vec(p, c.dim, "p")
    return AllocationVector(omega * (c.power(-1.0) @ p), omega, "markowitz", date)


def allocate_equal(p: ArrayLike, omega: float = 1.0, date=None) -> AllocationVector:
    return AllocationVector(omega * np.asarray(p, dtype=np.float64), omega, "equal_weight", date)


def realized_gain(a: AllocationVector | ArrayLike, r: ArrayLike) -> float:
    pos = a.positions if isinstance(a, AllocationVector) else np.asarray(a, dtype=np.float64)
    return float(np.dot(pos, _vec(r, pos.shape[0], "r")))


def gain_record(p: ArrayLike, c: CorrelationModel | ArrayLike, q: ArrayLike | None, r: ArrayLike,
                omega: float = 1.0, date=None) -> GainRecord:
    """Gain decomposed over the synthetic assets: G_alpha = omega p_hat_alpha r_hat_alpha."""
    c = _model(c)
    p = _vec(p, c.dim, "p")
    ph = p if q is None else whiten_indicators(p, q)
    rh = whiten_returns(r, c)
    per_mode = omega * ph * rh
    return GainRecord(float(np.sum(per_mode)), per_mode, date)


def rotation_invariance_check(p: ArrayLike, c: CorrelationModel | ArrayLike, q: ArrayLike | None,
                              r: ArrayLike, rot: ArrayLike) -> tuple[float, float]:
    """Gain before and after rotating both whitened vectors by ``rot``."""
    c = _model(c)
    rot = check_rotation(rot)
    p = _vec(p, c.dim, "p")
    ph = p if q is None else whiten_indicators(p, q)
    rh = whiten_returns(r, c)
    g = float(np.dot(ph, rh))
    g_rot = float(np.dot(rot @ ph, rot @ rh))
    return g, g_rot


def eigenrisk_profile(positions: ArrayLike, c_true: CorrelationModel | ArrayLike,
                      omega: float = 1.0, method: str = "") -> EigenRiskProfile:
    """R_a = mean_t[(pi_t . v_a)^2] lambda_a over a sample of allocations (rows)."""
    c_true = _model(c_true)
    pos = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    pos = pos[~np.any(np.isnan(pos), axis=1)]
    if pos.shape[0] == 0:
        raise ValueError("eigenrisk_profile needs at least one allocation")
    dec = c_true.decomposition
    proj = pos @ dec.eigenvectors
    risk = np.mean(proj**2, axis=0) * dec.eigenvalues
    return EigenRiskProfile(dec.eigenvalues, risk, omega**2, method)


def volatility_target(a: AllocationVector, c: CorrelationModel | ArrayLike, target: float) -> AllocationVector:
    """Rescale so that pi^T C pi = target^2; the scale is folded into omega."""
    if target <= 0:
        raise ValueError("target must be positive")
    c = _model(c)
    var = float(a.positions @ c.matrix @ a.positions)
    if var <= 0:
        return a
    scale = target / math.sqrt(var)
    return replace(a, positions=a.positions * scale, omega=a.omega * scale)
