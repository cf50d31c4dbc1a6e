"""Dense matrix kernel and the geometry of positive-definite matrices.

All tolerances used for matrix validation live here so every module shares
one set of constants.
"""

from __future__ import annotations

import numpy as np

# Validation tolerances (single source of truth).
SYMMETRY_RTOL = 1e-12       # max |m_ij - m_ji| <= SYMMETRY_RTOL * ||m||
SPD_EIG_RTOL = 1e-14        # smallest eigenvalue > dim * SPD_EIG_RTOL * largest
PSD_EIG_RTOL = 1e-12        # eigenvalues >= -dim * PSD_EIG_RTOL * largest
CONDITION_LIMIT = 1e14      # invert_spd refuses above this condition estimate
METRIC_ATOL = 1e-8          # slack used by the metric property checks


class NotSpdError(ValueError):
    """Input expected to be symmetric positive (semi)definite is not."""


class SingularMatrixError(ValueError):
    """Matrix is numerically singular for the requested operation."""


def as_square(m, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return m


def sym(m: np.ndarray) -> np.ndarray:
    """Symmetrize (works on batched stacks as well)."""
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def check_symmetric(m, name: str = "matrix") -> np.ndarray:
    m = as_square(m, name)
    scale = spectral_norm(m)
    skew = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if skew > SYMMETRY_RTOL * max(scale, 1e-300):
        raise ValueError(f"{name} is not symmetric: max asymmetry {skew:.3e}")
    return sym(m)


def validate_spd(m, name: str = "matrix") -> np.ndarray:
    """Return the symmetrized matrix, raising NotSpdError if not SPD."""
    m = check_symmetric(m, name)
    eigs = np.linalg.eigvalsh(m)
    dim = m.shape[0]
    if eigs[0] <= dim * SPD_EIG_RTOL * max(eigs[-1], 0.0):
        raise NotSpdError(f"{name} is not positive definite (eigenvalues {eigs[0]:.3e}..{eigs[-1]:.3e})")
    return m


def validate_psd(m, name: str = "matrix") -> np.ndarray:
    """Return the symmetrized matrix, raising NotSpdError if not PSD."""
    m = check_symmetric(m, name)
    eigs = np.linalg.eigvalsh(m)
    dim = m.shape[0]
    if eigs[0] < -dim * PSD_EIG_RTOL * max(eigs[-1], 0.0):
        raise NotSpdError(f"{name} is not positive semidefinite (min eigenvalue {eigs[0]:.3e})")
    return m


def symmetric_eigenvalues(m) -> np.ndarray:
    """Eigenvalues of a symmetric matrix in descending order."""
    m = check_symmetric(m)
    return np.linalg.eigvalsh(m)[::-1]


def spectral_norm(m) -> float:
    """Largest singular value."""
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if m.ndim == 1:
        return float(np.linalg.norm(m))
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))


def spectral_radius(m) -> float:
    """Largest eigenvalue modulus (eigenvalues via LAPACK's Schur-based solver)."""
    m = as_square(m)
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def frobenius_norm(m) -> float:
    m = np.asarray(m, dtype=float)
    return float(np.sqrt(np.sum(m * m)))


def invert_spd(m) -> np.ndarray:
    """Inverse of an SPD matrix via eigendecomposition, with a condition guard."""
    m = check_symmetric(m)
    eigs, vecs = np.linalg.eigh(m)
    dim = m.shape[0]
    if eigs[0] <= 0.0:
        raise NotSpdError(f"matrix is not positive definite (eigenvalues {eigs[0]:.3e}..{eigs[-1]:.3e})")
    if eigs[-1] / eigs[0] > CONDITION_LIMIT:
        raise SingularMatrixError(f"condition estimate {eigs[-1] / eigs[0]:.3e} exceeds {CONDITION_LIMIT:.0e}")
    if eigs[0] <= dim * SPD_EIG_RTOL * eigs[-1]:
        raise NotSpdError(f"matrix is not positive definite (eigenvalues {eigs[0]:.3e}..{eigs[-1]:.3e})")
    return sym((vecs / eigs) @ vecs.T)


def spd_sqrt(m) -> np.ndarray:
    """Symmetric square root V sqrt(L) V' of an SPD matrix."""
    m = validate_spd(m)
    eigs, vecs = np.linalg.eigh(m)
    return sym((vecs * np.sqrt(eigs)) @ vecs.T)


def _spd_inv_sqrt(m: np.ndarray) -> np.ndarray:
    eigs, vecs = np.linalg.eigh(m)
    return sym((vecs / np.sqrt(eigs)) @ vecs.T)


def riemannian_distance(p, q) -> float:
    """Distance between SPD matrices: sqrt of summed squared log-eigenvalues of P Q^-1.

    Computed from the symmetric congruence Q^{-1/2} P Q^{-1/2}, whose spectrum
    equals that of P Q^-1, so only symmetric eigensolvers are involved.
    """
    p = validate_spd(p, "p")
    q = validate_spd(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    w = _spd_inv_sqrt(q)
    eigs = np.linalg.eigvalsh(sym(w @ p @ w))
    eigs = np.maximum(eigs, np.finfo(float).tiny)
    return float(np.sqrt(np.sum(np.log(eigs) ** 2)))
