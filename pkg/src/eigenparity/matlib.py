"""Dense symmetric-matrix kernels: eigendecomposition and spectral matrix functions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "EigenDecomposition",
    "NotSymmetricError",
    "SPDError",
    "SPD_RELATIVE_EPS",
    "check_rotation",
    "mahalanobis_distance",
    "mahalanobis_gap",
    "random_rotation",
    "spd_power",
    "sym_eigen",
]

SPD_RELATIVE_EPS = 1e-10
SYMMETRY_RTOL = 1e-12


class NotSymmetricError(ValueError):
    pass


class SPDError(ValueError):
    """Raised when a matrix expected to be positive definite is not."""

    def __init__(self, eigenvalue: float, threshold: float):
        self.eigenvalue = eigenvalue
        self.threshold = threshold
        super().__init__(
            f"matrix is not SPD: eigenvalue {eigenvalue:.6g} <= threshold {threshold:.6g}"
        )


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues sorted descending, eigenvectors as columns."""

    eigenvalues: NDArray[np.float64]
    eigenvectors: NDArray[np.float64]

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> NDArray[np.float64]:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T

    def power(self, exponent: float, eps: float | None = None) -> NDArray[np.float64]:
        """Spectral power sum_a lambda_a**exponent u_a u_a^T.

        ``eps`` is the absolute SPD threshold; defaults to
        ``SPD_RELATIVE_EPS * max(lambda)``.
        """
        lam = self.eigenvalues
        if eps is None:
            eps = SPD_RELATIVE_EPS * max(float(lam[0]), 0.0)
        if lam[-1] <= eps:
            raise SPDError(float(lam[-1]), eps)
        u = self.eigenvectors
        out = (u * lam**exponent) @ u.T
        return 0.5 * (out + out.T)


def _as_symmetric(m: ArrayLike) -> NDArray[np.float64]:
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetricError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotSymmetricError("matrix has non-finite entries")
    scale = max(float(np.max(np.abs(a))), 1.0) if a.size else 1.0
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > SYMMETRY_RTOL * scale:
        raise NotSymmetricError(f"matrix is not symmetric (max |m - m^T| = {asym:.3g})")
    return a


def sym_eigen(m: ArrayLike) -> EigenDecomposition:
    """Eigendecomposition of a real symmetric matrix with a canonical layout.

    Eigenvalues come out descending. Each eigenvector is signed so that its
    first component that is not numerically zero is positive, which makes the
    result reproducible across calls.
    """
    a = _as_symmetric(m)
    a = 0.5 * (a + a.T)
    try:
        lam, u = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigen-solver did not converge: {exc}") from exc
    order = np.argsort(-lam, kind="stable")  # ties keep solver order
    lam = lam[order]
    u = u[:, order]
    n = a.shape[0]
    if n:
        tol = 1e-12
        lead = np.argmax(np.abs(u) > tol, axis=0)
        signs = np.sign(u[lead, np.arange(n)])
        signs[signs == 0] = 1.0
        u *= signs
    return EigenDecomposition(lam, u)


def spd_power(m: ArrayLike | EigenDecomposition, exponent: float) -> NDArray[np.float64]:
    """Positive-definite matrix power; exponent -1/2 gives the whitening matrix."""
    dec = m if isinstance(m, EigenDecomposition) else sym_eigen(m)
    return dec.power(exponent)


def check_rotation(r: ArrayLike, atol: float = 1e-10) -> NDArray[np.float64]:
    """Validate an orthogonal matrix, or a stack of them with shape (k, n, n)."""
    rot = np.asarray(r, dtype=np.float64)
    if rot.ndim not in (2, 3) or rot.shape[-1] != rot.shape[-2]:
        raise ValueError(f"rotation must be square, got shape {rot.shape}")
    err = float(np.max(np.abs(rot @ np.swapaxes(rot, -1, -2) - np.eye(rot.shape[-1]))))
    if err > atol:
        raise ValueError(f"matrix is not orthogonal (max |R R^T - I| = {err:.3g})")
    return rot


def random_rotation(dim: int, seed: int | np.random.Generator | None = None,
                    size: int | None = None) -> NDArray[np.float64]:
    """Haar-distributed orthogonal matrix (proper or improper) from a seeded Gaussian.

    With ``size`` a stack of shape (size, dim, dim) is returned.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = (dim, dim) if size is None else (size, dim, dim)
    q, r = np.linalg.qr(rng.standard_normal(shape))
    # sign fix on R's diagonal makes Q Haar rather than QR-biased
    d = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    d[d == 0] = 1.0
    return q * d[..., None, :]


def mahalanobis_distance(c: ArrayLike, r: ArrayLike, weight: str = "inverse") -> float:
    """Expected weighted squared distance between R C^{-1/2} x and x.

    ``x`` has zero mean and correlation ``c``. With weight matrix W the
    expectation is Tr[W] + Tr[W C] - 2 Tr[R C^{1/2} W]. ``weight`` selects
    W = C^{-1} ("inverse") or W = I ("identity").
    """
    dec = sym_eigen(c)
    rot = check_rotation(r)
    if rot.ndim != 2 or rot.shape[0] != dec.dim:
        raise ValueError("rotation and matrix dimensions differ")
    cm = dec.reconstruct()
    if weight == "inverse":
        w = dec.power(-1.0)
    elif weight == "identity":
        w = np.eye(dec.dim)
    else:
        raise ValueError(f"unknown weight {weight!r}")
    m = rot @ dec.power(-0.5) - np.eye(dec.dim)
    return float(np.trace(w @ m @ cm @ m.T))


def mahalanobis_gap(c: ArrayLike, r: ArrayLike, weight: str = "inverse") -> float | NDArray[np.float64]:
    """d(R) - d(I); non-negative for every rotation when c is SPD.

    ``r`` may be a stack of rotations, giving one gap per rotation.
    """
    dec = sym_eigen(c)
    rot = check_rotation(r)
    if rot.shape[-1] != dec.dim:
        raise ValueError("rotation and matrix dimensions differ")
    if weight not in ("inverse", "identity"):
        raise ValueError(f"unknown weight {weight!r}")
    half = dec.power(0.5)
    w = dec.power(-1.0) if weight == "inverse" else np.eye(dec.dim)
    m = half @ w
    # the R-independent terms cancel exactly
    if rot.ndim == 3:
        return 2.0 * (np.trace(m) - np.einsum("kij,ji->k", rot, m))
    return float(2.0 * np.trace((np.eye(dec.dim) - rot) @ m))
