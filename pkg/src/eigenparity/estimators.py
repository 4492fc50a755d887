"""Correlation models: empirical, RIE-cleaned and shrunk, plus the indicator-covariance model Q."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import isotonic_regression

from .matlib import EigenDecomposition, SPDError, sym_eigen

logger = logging.getLogger(__name__)

__all__ = [
    "CorrelationModel",
    "EstimationError",
    "QModel",
    "RIEConfig",
    "empirical_correlation",
    "materialize_q",
    "rie_clean",
    "rie_eigenvalues",
    "shrink_correlation",
]

FLOOR_RELATIVE = 1e-8


class EstimationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CorrelationModel:
    """A unit-diagonal correlation matrix with its cached eigendecomposition.

    ``provenance`` is one of ``empirical``, ``rie``, ``shrunk``, ``identity``
    or ``true`` (generator ground truth). ``meta`` carries free-form details
    such as the shrinkage weight, the RIE configuration or rank warnings.
    """

    matrix: NDArray[np.float64]
    provenance: str = "empirical"
    sample_shape: tuple[int, int] | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_matrix(cls, m: ArrayLike, provenance: str = "empirical", **kw) -> "CorrelationModel":
        a = np.array(m, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise EstimationError(f"correlation matrix must be square, got {a.shape}")
        if np.max(np.abs(np.diag(a) - 1.0), initial=0.0) > 1e-10:
            raise EstimationError("correlation matrix must have unit diagonal")
        return cls(a, provenance, **kw)

    @classmethod
    def identity(cls, n: int) -> "CorrelationModel":
        return cls(np.eye(n), "identity")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def decomposition(self) -> EigenDecomposition:
        return sym_eigen(self.matrix)

    @property
    def is_spd(self) -> bool:
        lam = self.decomposition.eigenvalues
        return bool(lam[-1] > 1e-10 * lam[0])

    def power(self, exponent: float) -> NDArray[np.float64]:
        """Matrix power, memoized per exponent."""
        cache = self.__dict__.setdefault("_powers", {})
        if exponent not in cache:
            cache[exponent] = self.decomposition.power(exponent)
        return cache[exponent]


def empirical_correlation(panel) -> CorrelationModel:
    """Pearson correlation of a ReturnsPanel (or a bare T x N array).

    Rows holding any missing value are dropped. When T <= N the result is
    singular; this is recorded in ``meta["rank_deficient"]``.
    """
    x = np.asarray(getattr(panel, "returns", panel), dtype=np.float64)
    assets = getattr(panel, "assets", None) or tuple(str(i) for i in range(x.shape[1]))
    complete = ~np.any(np.isnan(x), axis=1)
    if not np.all(complete):
        logger.info("dropping %d incomplete rows before correlation", int(np.sum(~complete)))
        x = x[complete]
    t, n = x.shape
    if t < 2:
        raise EstimationError(f"need at least 2 complete rows, got {t}")
    xc = x - x.mean(axis=0)
    sd = np.sqrt(np.einsum("ij,ij->j", xc, xc) / (t - 1))
    flat = sd <= 1e-14 * np.maximum(np.max(np.abs(x), axis=0), 1e-300)
    if np.any(flat | (sd == 0)):
        bad = [assets[j] for j in np.flatnonzero(flat | (sd == 0))]
        raise EstimationError(f"zero-variance asset(s): {', '.join(bad)}")
    z = xc / sd
    c = (z.T @ z) / (t - 1)
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    meta = {"rank_deficient": t <= n}
    return CorrelationModel(c, "empirical", (t, n), meta)


@dataclass(frozen=True)
class RIEConfig:
    """Parameters of the rotationally invariant eigenvalue cleaner.

    ``q`` defaults to N/T of the model being cleaned, ``eta`` to
    N^{-1/2} (lambda_max - lambda_min) / 2. ``floor`` (relative to the top
    cleaned eigenvalue) is required when q >= 1.
    """

    q: float | None = None
    eta: float | None = None
    isotonic: bool = True
    floor: float | None = None

    def __post_init__(self):
        if self.q is not None and self.q <= 0:
            raise EstimationError("q must be positive")
        if self.eta is not None and self.eta <= 0:
            raise EstimationError("eta must be positive")
        if self.floor is not None and self.floor <= 0:
            raise EstimationError("floor must be positive")


def rie_eigenvalues(model: CorrelationModel, cfg: RIEConfig | None = None):
    """Cleaned spectrum on the sample eigenvectors.

    Returns ``(xi, U, q)``. ``U`` is the model's own eigenvector matrix; the
    cleaned matrix before unit-diagonal rescaling is ``U diag(xi) U^T``.
    """
    cfg = cfg or RIEConfig()
    dec = model.decomposition
    lam = np.clip(dec.eigenvalues, 0.0, None)
    n = dec.dim
    if cfg.q is not None:
        q = cfg.q
    elif model.sample_shape is not None:
        t = model.sample_shape[0]
        q = n / t
    else:
        raise EstimationError("RIE needs q: pass RIEConfig(q=...) or a model with sample_shape")
    if q >= 1.0 and cfg.floor is None:
        raise EstimationError(
            f"q = N/T = {q:.3g} >= 1: use a longer estimation window or set an explicit eigenvalue floor"
        )
    eta = cfg.eta if cfg.eta is not None else max(n**-0.5 * (lam[0] - lam[-1]) / 2.0, 1e-12)
    z = lam - 1j * eta
    diff = z[:, None] - lam[None, :]
    np.fill_diagonal(diff, np.inf)  # self-term excluded
    g = np.sum(1.0 / diff, axis=1) / n
    xi = lam / np.abs(1.0 - q + q * z * g) ** 2
    if cfg.isotonic:
        xi = isotonic_regression(xi, increasing=False).x
    floor_rel = cfg.floor if cfg.floor is not None else FLOOR_RELATIVE
    xi = np.maximum(xi, floor_rel * max(float(xi[0]), 1e-300))
    return xi, dec.eigenvectors, q


def _unit_diagonal(m: NDArray[np.float64]) -> NDArray[np.float64]:
    d = np.sqrt(np.diag(m))
    out = m / np.outer(d, d)
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 1.0)
    return out


def rie_clean(model: CorrelationModel, cfg: RIEConfig | None = None) -> CorrelationModel:
    """Ledoit-Peche style cleaning of an empirical correlation model."""
    cfg = cfg or RIEConfig()
    if model.provenance != "empirical":
        raise EstimationError(f"rie_clean expects an empirical model, got {model.provenance!r}")
    xi, u, q = rie_eigenvalues(model, cfg)
    cleaned = _unit_diagonal((u * xi) @ u.T)
    meta = {
        "q": q,
        "config": {"q": cfg.q, "eta": cfg.eta, "isotonic": cfg.isotonic, "floor": cfg.floor},
        "cleaned_eigenvalues": xi,
        "rank_deficient": model.meta.get("rank_deficient", False),
    }
    out = CorrelationModel(cleaned, "rie", model.sample_shape, meta)
    if not out.is_spd:
        raise SPDError(float(out.decomposition.eigenvalues[-1]), 1e-10 * out.decomposition.eigenvalues[0])
    return out


def shrink_correlation(model: CorrelationModel, phi: float) -> CorrelationModel:
    """phi * C + (1 - phi) * I."""
    if not 0.0 <= phi <= 1.0:
        raise EstimationError(f"shrinkage weight must lie in [0, 1], got {phi}")
    if phi == 1.0:
        return model
    n = model.dim
    if phi == 0.0:
        return CorrelationModel(np.eye(n), "shrunk", model.sample_shape, {"phi": 0.0})
    m = phi * model.matrix + (1.0 - phi) * np.eye(n)
    np.fill_diagonal(m, 1.0)
    return CorrelationModel(m, "shrunk", model.sample_shape, {"phi": phi, "base": model.provenance})


@dataclass(frozen=True)
class QModel:
    """Indicator covariance model: ``identity`` (agnostic), ``proportional_to_C`` or ``shrunk``."""

    kind: str = "identity"
    phi: float = 0.0
    sigma_p: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "proportional_to_C", "shrunk"):
            raise EstimationError(f"unknown Q kind {self.kind!r}")
        if not 0.0 <= self.phi <= 1.0:
            raise EstimationError(f"phi must lie in [0, 1], got {self.phi}")
        if self.sigma_p <= 0:
            raise EstimationError("sigma_p must be positive")


def materialize_q(qm: QModel, c: CorrelationModel) -> NDArray[np.float64]:
    if qm.kind == "identity":
        return qm.sigma_p * np.eye(c.dim)
    if qm.kind == "proportional_to_C":
        return qm.sigma_p * c.matrix
    return qm.sigma_p * shrink_correlation(c, qm.phi).matrix
