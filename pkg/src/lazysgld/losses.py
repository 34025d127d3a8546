"""Squared loss and empirical risk over a finite sample.

The training objective everywhere in this package is the averaged squared
residual R(u) = (1/n) * sum_i (u_i - y_i)^2 over model outputs u in R^n.
Two sets of convexity constants coexist for this objective and both are
needed downstream:

* per sample: ell(u, y) = (u - y)^2 is 2-strongly convex with 2-Lipschitz
  gradient in the scalar argument u;
* averaged: R is (2/n)-strongly convex with (2/n)-Lipschitz gradient in the
  Euclidean inner product on R^n, because the 1/n average rescales both
  constants.

Rate formulas that mix ||grad R||^2 with the optimality gap only close under
the averaged pair, so `risk_constants` makes the choice explicit instead of
baking one in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SquaredLoss",
    "RiskValue",
    "GapDegenerateError",
    "empirical_risk",
    "risk_gradient",
    "pl_ratio",
]


class GapDegenerateError(ValueError):
    """Raised when a quantity is normalized by a zero optimality gap."""


@dataclass(frozen=True)
class SquaredLoss:
    """Per-sample squared loss ell(u, y) = (u - y)^2.

    ``mu_strong`` and ``lip_grad`` are the per-sample constants (both exactly
    2); the averaged-risk constants come from :meth:`risk_constants`.
    """

    mu_strong: float = 2.0
    lip_grad: float = 2.0

    def value(self, outputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
        outputs = np.asarray(outputs, dtype=float)
        targets = np.asarray(targets, dtype=float)
        return (outputs - targets) ** 2

    def grad(self, outputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """d ell / d u, elementwise: 2 (u - y)."""
        outputs = np.asarray(outputs, dtype=float)
        targets = np.asarray(targets, dtype=float)
        return 2.0 * (outputs - targets)

    def risk_constants(self, n: int, convention: str = "averaged") -> tuple[float, float]:
        """(strong convexity, gradient Lipschitz) pair for the n-sample risk.

        ``per_sample`` returns (2, 2); ``averaged`` returns (2/n, 2/n), the
        pair under which norm identities for the averaged risk are exact.
        """
        if n <= 0:
            raise ValueError(f"sample count must be positive, got {n}")
        if convention == "per_sample":
            return self.mu_strong, self.lip_grad
        if convention == "averaged":
            return self.mu_strong / n, self.lip_grad / n
        raise ValueError(f"unknown convention {convention!r}")


@dataclass(frozen=True)
class RiskValue:
    """Empirical risk together with the optimality gap R - R*.

    For the squared loss against fixed targets the best attainable risk is 0
    (interpolation), so ``gap`` equals ``risk``; the field exists so that
    downstream bound evaluators never have to re-derive that convention.
    """

    risk: float
    gap: float


def empirical_risk(outputs: np.ndarray, targets: np.ndarray) -> RiskValue:
    """Averaged squared residual (1/n) * sum_i (u_i - y_i)^2."""
    outputs = np.asarray(outputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if outputs.shape != targets.shape:
        raise ValueError(f"shape mismatch: outputs {outputs.shape} vs targets {targets.shape}")
    if outputs.size == 0:
        raise ValueError("empty sample")
    r = float(np.mean((outputs - targets) ** 2))
    return RiskValue(risk=r, gap=r)


def risk_gradient(outputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Gradient of the averaged risk with respect to the output vector: (2/n)(u - y)."""
    outputs = np.asarray(outputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if outputs.shape != targets.shape:
        raise ValueError(f"shape mismatch: outputs {outputs.shape} vs targets {targets.shape}")
    n = outputs.size
    if n == 0:
        raise ValueError("empty sample")
    return (2.0 / n) * (outputs - targets)


def pl_ratio(outputs: np.ndarray, targets: np.ndarray) -> float:
    """||grad R||^2 / (2 * mu * gap) under the averaged constants.

    Identically 1 for the squared loss: ||(2/n)(u-y)||^2 = (4/n^2)||u-y||^2
    and 2 * (2/n) * gap = (4/n^2)||u-y||^2. Kept as a computed diagnostic so
    that any normalization drift in callers shows up as a ratio != 1.
    """
    outputs = np.asarray(outputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    rv = empirical_risk(outputs, targets)
    if rv.gap <= 0.0:
        raise GapDegenerateError("optimality gap is zero; ratio undefined at interpolation")
    g = risk_gradient(outputs, targets)
    mu_avg, _ = SquaredLoss().risk_constants(outputs.size, "averaged")
    return float(np.dot(g, g) / (2.0 * mu_avg * rv.gap))
