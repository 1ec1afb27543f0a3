"""Dense symmetric eigendecomposition utilities.

Everything downstream (pseudoinverses, PSD square roots, covariances, trace
forms) is driven by one full ``eigh`` wrapped in :class:`SpectralOperator`.
Eigenvalues below a relative cutoff are treated as exact zeros, which is what
makes Moore-Penrose semantics on rank-deficient Laplacians reliable.

Dense O(m^3) is the contract here; the complexes this package works with stay
small.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import NumericalError
from .validation import check_symmetric

DEFAULT_RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class SpectralOperator:
    """A symmetric matrix with its cached eigendecomposition.

    ``eigenvalues`` are ascending and ``eigenvectors`` holds the matching
    orthonormal columns, so ``matrix == Q diag(lam) Q.T`` up to round-off.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    rank_tolerance: float = DEFAULT_RANK_TOLERANCE

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def zero_cutoff(self) -> float:
        """Absolute threshold below which an eigenvalue counts as zero."""
        scale = float(np.abs(self.eigenvalues).max()) if self.size else 0.0
        return self.rank_tolerance * scale

    @property
    def support_mask(self) -> np.ndarray:
        return np.abs(self.eigenvalues) > self.zero_cutoff

    @property
    def rank(self) -> int:
        return int(self.support_mask.sum())


def decompose(a, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> SpectralOperator:
    """Full eigendecomposition of a symmetric matrix.

    The input must be symmetric within 1e-8 (it is exactly symmetrized before
    factorization) and finite.  ``rank_tolerance`` is the relative cutoff
    under which eigenvalues are treated as zero by downstream operations.
    """
    if rank_tolerance <= 0:
        raise NumericalError(f"rank_tolerance must be positive, got {rank_tolerance}")
    sym = check_symmetric(a, tol=1e-8, name="matrix")
    eigenvalues, eigenvectors = np.linalg.eigh(sym)
    return SpectralOperator(sym, eigenvalues, eigenvectors, rank_tolerance)


def reconstruct(op: SpectralOperator) -> np.ndarray:
    """``Q diag(lam) Q.T``, symmetrized."""
    m = (op.eigenvectors * op.eigenvalues) @ op.eigenvectors.T
    return (m + m.T) / 2.0


def _rebuild(op: SpectralOperator, transformed: np.ndarray) -> np.ndarray:
    m = (op.eigenvectors * transformed) @ op.eigenvectors.T
    return (m + m.T) / 2.0


def _check_psd(op: SpectralOperator, context: str) -> np.ndarray:
    """Clamp round-off negatives to zero; genuine negatives are an error."""
    cutoff = op.zero_cutoff
    smallest = float(op.eigenvalues[0]) if op.size else 0.0
    if smallest < -cutoff:
        raise NumericalError(
            f"{context} requires a positive semidefinite operator; "
            f"eigenvalue {smallest:.6e} is below the tolerance cutoff {-cutoff:.6e}")
    return np.clip(op.eigenvalues, 0.0, None)


def pinv(op: SpectralOperator) -> np.ndarray:
    """Moore-Penrose pseudoinverse: invert the spectrum away from zero."""
    inv = np.zeros_like(op.eigenvalues)
    mask = op.support_mask
    inv[mask] = 1.0 / op.eigenvalues[mask]
    return _rebuild(op, inv)


def sqrt_psd(op: SpectralOperator) -> np.ndarray:
    """PSD square root ``Q diag(sqrt(lam)) Q.T`` (negatives within tolerance
    are clamped to zero first)."""
    clamped = _check_psd(op, "sqrt_psd")
    return _rebuild(op, np.sqrt(clamped))


def pinv_sqrt(op: SpectralOperator) -> np.ndarray:
    """Pseudo-inverse square root: ``lam -> lam^{-1/2}`` on the support,
    zero elsewhere."""
    clamped = _check_psd(op, "pinv_sqrt")
    out = np.zeros_like(clamped)
    mask = op.support_mask
    out[mask] = 1.0 / np.sqrt(clamped[mask])
    return _rebuild(op, out)
