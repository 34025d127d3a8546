"""Tangent-kernel Gram matrices and the lazy-regime radius.

The kernel object used throughout is the n x n Gram K = Dh Dh^T of the output
Jacobian on the training batch. ``lambda_sq`` denotes the minimum eigenvalue
of K itself; square roots are taken explicitly wherever a formula consumes
the corresponding singular value lambda = sqrt(lambda_sq), e.g. the lazy
radius r = lambda / Lip(Dh).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SymmetryError",
    "gram",
    "min_eigenvalue",
    "lazy_radius",
    "LazyRadius",
    "layerwise_gram",
]

DENSE_EIG_LIMIT = 2000


class SymmetryError(ValueError):
    """Matrix handed to the symmetric eigensolver is not symmetric."""


def gram(jacobian: np.ndarray) -> np.ndarray:
    """K = J J^T for J of shape (n, p), symmetrized against roundoff."""
    jac = np.asarray(jacobian, dtype=float)
    if jac.ndim != 2:
        raise ValueError(f"expected a 2-d Jacobian, got shape {jac.shape}")
    k = jac @ jac.T
    return 0.5 * (k + k.T)


def _power_min_eig(mat: np.ndarray, iters: int = 10_000, tol: float = 1e-13) -> float:
    """Smallest eigenvalue via power iteration on (shift I - K).

    Two phases: first estimate lambda_max by plain power iteration, then run
    on the reflected matrix with shift just above that estimate. A tight
    shift keeps the convergence ratio away from 1; the Gershgorin bound alone
    can exceed lambda_max by orders of magnitude on dense matrices and stall
    the iteration. Accuracy still degrades when the bottom of the spectrum is
    clustered; this path is a large-n diagnostic, not a dense solve.
    """
    n = mat.shape[0]
    rng = np.random.default_rng(0)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(200):
        w = mat @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
        est = float(v @ (mat @ v))
    gersh = float(np.abs(mat).sum(axis=1).max())
    # Rayleigh quotients under-estimate lambda_max; doubling covers the slack
    # while staying near the true scale. Gershgorin caps it from above.
    shift = min(gersh, 2.0 * est) if est > 0.0 else gersh
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    top = 0.0
    for _ in range(iters):
        w = shift * v - mat @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return shift  # K = shift I on this vector; eigenvalue equals shift
        w /= nw
        new_top = float(w @ (shift * w - mat @ w))
        if abs(new_top - top) <= tol * max(abs(new_top), 1.0):
            top = new_top
            break
        top = new_top
        v = w
    return shift - top


def min_eigenvalue(gram_matrix: np.ndarray) -> float:
    """Minimum eigenvalue of a symmetric PSD Gram matrix.

    Dense solve up to n = 2000; beyond that a shifted power iteration is used
    so that huge batches do not force an O(n^3) factorization.
    """
    mat = np.asarray(gram_matrix, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    scale = max(float(np.abs(mat).max()), 1.0)
    if float(np.abs(mat - mat.T).max()) > 1e-10 * scale:
        raise SymmetryError("matrix is not symmetric")
    if mat.shape[0] <= DENSE_EIG_LIMIT:
        return float(np.linalg.eigvalsh(mat)[0])
    return _power_min_eig(mat)


@dataclass(frozen=True)
class LazyRadius:
    """Radius of the parameter ball on which the kernel floor is protected."""

    radius: float
    lambda_sq: float
    lambda_min_sv: float   # sqrt(lambda_sq): smallest singular value of Dh
    lip_dh: float


def lazy_radius(lambda_sq: float, lip_dh: float) -> LazyRadius:
    """r = sqrt(lambda_sq) / Lip(Dh)."""
    if lambda_sq < 0.0:
        raise ValueError(f"lambda_sq must be nonnegative, got {lambda_sq}")
    if lip_dh <= 0.0:
        raise ValueError(f"Jacobian Lipschitz bound must be positive, got {lip_dh}")
    sv = float(np.sqrt(lambda_sq))
    return LazyRadius(radius=sv / lip_dh, lambda_sq=lambda_sq,
                      lambda_min_sv=sv, lip_dh=lip_dh)


def layerwise_gram(net, params: np.ndarray, inputs: np.ndarray,
                   layer: int) -> np.ndarray:
    """Per-layer Gram G^(k) of a deep net; layers 1..H are weights, H+1 the readout.

    The full Gram is the sum of the per-layer Grams, since the layer blocks
    partition the Jacobian columns.
    """
    return net.layer_gram(params, inputs, layer)
