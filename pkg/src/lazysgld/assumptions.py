"""Closed-form regularity certificates and their numeric witnesses.

The bounds here are analytic statements about single-hidden-layer models with
a smooth activation; each verifier pairs the closed form with an independent
numeric witness (sampled difference quotients, dense Hessian spectra) and
reports whether the witness stays under the bound. Witnesses are evidence,
never inputs to the production dynamics.

The curvature bound deserves a note. Writing r_i = alpha h_i - y_i, the
Hessian of omega -> R(alpha h(omega)) for the averaged squared risk is

    (2 alpha^2 / n) sum_i J_i J_i^T + (2 alpha / n) sum_i r_i Hess h_i,

both terms carrying the factor 2 from d ell / du = 2(u - y). Bounding
|J_i|^2 <= |x|_max^2 |c|^2 / m, |r_i| <= alpha |c|_1 / sqrt(m) + |y|_inf
(doubled for a centered model, whose output is a difference of two such
sums), and the block-diagonal output Hessian by
sup|sigma''| |c|_inf |x|_max^2 / sqrt(m) gives the dominating closed form in
``curvature_bound``. Domination is exact: the verifier asserts it with no
tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .losses import SquaredLoss, risk_gradient
from .models import CenteredPredictor, ShallowTanhNet, dense_parameter_hessian
from . import ntk

__all__ = [
    "AssumptionEntry",
    "AssumptionReport",
    "jacobian_lipschitz_bound",
    "curvature_bound",
    "select_eta",
    "verify_loss_constants",
    "verify_ntk_positive",
    "verify_jacobian_lipschitz",
    "verify_curvature",
    "verify_step_rule",
    "verify_all",
]


@dataclass(frozen=True)
class AssumptionEntry:
    id: str
    analytic: float | None
    witness: float | None
    holds: bool
    detail: dict

    def to_json_dict(self) -> dict:
        return {"id": self.id, "analytic": self.analytic, "witness": self.witness,
                "holds": self.holds, "detail": self.detail}


@dataclass(frozen=True)
class AssumptionReport:
    entries: tuple[AssumptionEntry, ...]

    @property
    def all_hold(self) -> bool:
        return all(e.holds for e in self.entries)

    def entry(self, entry_id: str) -> AssumptionEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(entry_id)

    def to_json_dict(self) -> dict:
        return {"all_hold": self.all_hold,
                "entries": [e.to_json_dict() for e in self.entries]}


def _unwrap_shallow(model) -> tuple[ShallowTanhNet, bool]:
    base = model.base if isinstance(model, CenteredPredictor) else model
    if not isinstance(base, ShallowTanhNet):
        raise TypeError(
            "closed-form regularity bounds cover single-hidden-layer models only"
        )
    return base, isinstance(model, CenteredPredictor)


def jacobian_lipschitz_bound(output_weights: np.ndarray, inputs: np.ndarray,
                             smoothness: float | None = None) -> float:
    """Upper bound on the Frobenius Lipschitz modulus of omega -> Dh(omega).

    Per neuron j the row block moves at most (sup|sigma''| / sqrt(m)) |c_j|
    |x_i|^2 |delta omega_j|; taking the worst sample and aggregating the
    blocks through an l2 envelope over j gives
    (sup|sigma''| / sqrt(m)) max_i |x_i|^2 |c|_2. The sampled-quotient
    verifier guards this aggregation empirically.
    """
    from .models import TANH_SMOOTHNESS

    c = np.asarray(output_weights, dtype=float).ravel()
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ValueError("need a nonempty (n, d) input batch")
    if smoothness is None:
        smoothness = TANH_SMOOTHNESS
    xmax_sq = float((inputs * inputs).sum(axis=1).max())
    return smoothness / math.sqrt(c.size) * xmax_sq * float(np.linalg.norm(c))


def curvature_bound(alpha: float, output_weights: np.ndarray, inputs: np.ndarray,
                    targets: np.ndarray, centered: bool = False,
                    smoothness: float | None = None) -> float:
    """Dominating bound on lambda_max of the Hessian of omega -> R(alpha h(omega)).

    See the module docstring for the derivation; set ``centered`` when h is a
    centered model (its reach term alpha |c|_1 / sqrt(m) doubles).
    """
    from .models import TANH_SMOOTHNESS

    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    c = np.asarray(output_weights, dtype=float).ravel()
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if smoothness is None:
        smoothness = TANH_SMOOTHNESS
    m = c.size
    xmax_sq = float((inputs * inputs).sum(axis=1).max())
    y_inf = float(np.abs(targets).max()) if targets.size else 0.0
    gauss_newton = 2.0 * alpha**2 * float(c @ c) * xmax_sq / m
    reach = alpha * float(np.abs(c).sum()) / math.sqrt(m)
    if centered:
        reach *= 2.0
    residual_term = (2.0 * alpha * smoothness * float(np.abs(c).max())
                     / math.sqrt(m) * xmax_sq * (reach + y_inf))
    return gauss_newton + residual_term


def select_eta(alpha: float, curvature_bound_value: float) -> float:
    """Largest admissible noise scale: curvature <= alpha^2 / eta iff eta <= alpha^2 / curvature."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if curvature_bound_value < 0:
        raise ValueError("curvature bound cannot be negative")
    if curvature_bound_value == 0.0:
        return math.inf
    return alpha * alpha / curvature_bound_value


# --------------------------------------------------------------------------
# verifiers


def verify_loss_constants(loss: SquaredLoss, rng: np.random.Generator,
                          n_pairs: int = 10_000, probe_dim: int = 5) -> AssumptionEntry:
    """Probe the exact constants: curvature pairing 2|h1-h2|^2 and gradient
    step 2|h1-h2| per sample, and their 2/n counterparts for the averaged risk."""
    dev = 0.0
    for _ in range(n_pairs):
        h1, h2, y = rng.standard_normal(3)
        g1, g2 = loss.grad(h1, y), loss.grad(h2, y)
        dev = max(dev, abs((g1 - g2) * (h1 - h2) - 2.0 * (h1 - h2) ** 2))
        dev = max(dev, abs(abs(g1 - g2) - 2.0 * abs(h1 - h2)))
    n_vec = max(1, n_pairs // 100)
    for _ in range(n_vec):
        u1 = rng.standard_normal(probe_dim)
        u2 = rng.standard_normal(probe_dim)
        y = rng.standard_normal(probe_dim)
        gdiff = risk_gradient(u1, y) - risk_gradient(u2, y)
        du = u1 - u2
        dev = max(dev, abs(float(gdiff @ du) - 2.0 / probe_dim * float(du @ du)))
        dev = max(dev, abs(float(np.linalg.norm(gdiff))
                           - 2.0 / probe_dim * float(np.linalg.norm(du))))
    mu, lip = loss.mu_strong, loss.lip_grad
    return AssumptionEntry(
        id="loss_constants", analytic=0.0, witness=dev, holds=dev <= 1e-12,
        detail={"n_pairs": n_pairs, "mu_per_sample": mu, "lip_per_sample": lip,
                "averaged_constants": "both scale by 1/n"})


def verify_ntk_positive(model, params0: np.ndarray, inputs: np.ndarray,
                        floor: float = 1e-12) -> AssumptionEntry:
    """Smallest kernel eigenvalue at the anchor point against a positivity floor."""
    lam_sq = ntk.min_eigenvalue(ntk.gram(model.jacobian(params0, inputs)))
    return AssumptionEntry(
        id="kernel_positive", analytic=floor, witness=lam_sq,
        holds=lam_sq > floor,
        detail={"lambda": math.sqrt(max(lam_sq, 0.0))})


def verify_jacobian_lipschitz(model, params0: np.ndarray, inputs: np.ndarray,
                              rng: np.random.Generator, n_pairs: int = 200,
                              spread: float = 1.0) -> AssumptionEntry:
    """Sampled quotients |J(w1) - J(w2)|_F / |w1 - w2| against the closed form."""
    base, _ = _unwrap_shallow(model)
    bound = jacobian_lipschitz_bound(base.output_weights, inputs,
                                     base.activation.smoothness)
    params0 = np.asarray(params0, dtype=float)
    worst = 0.0
    for _ in range(n_pairs):
        w1 = params0 + spread * rng.standard_normal(params0.size)
        w2 = params0 + spread * rng.standard_normal(params0.size)
        denom = float(np.linalg.norm(w1 - w2))
        if denom == 0.0:
            continue
        num = float(np.linalg.norm(model.jacobian(w1, inputs)
                                   - model.jacobian(w2, inputs)))
        worst = max(worst, num / denom)
    return AssumptionEntry(
        id="jacobian_lipschitz", analytic=bound, witness=worst,
        holds=worst <= bound,
        detail={"n_pairs": n_pairs, "spread": spread})


def verify_curvature(model, params0: np.ndarray, inputs: np.ndarray,
                     targets: np.ndarray, loss: SquaredLoss, alpha: float,
                     rng: np.random.Generator, n_points: int = 20) -> AssumptionEntry:
    """Dense-Hessian top eigenvalue against the closed-form bound.

    Samples inside the kernel-floor ball around params0 plus a thin shell
    just outside it (the shallow bound is global, so both must dominate);
    domination is asserted exactly, no tolerance.
    """
    base, centered = _unwrap_shallow(model)
    bound = curvature_bound(alpha, base.output_weights, inputs, targets,
                            centered=centered,
                            smoothness=base.activation.smoothness)
    params0 = np.asarray(params0, dtype=float)
    lam_sq = ntk.min_eigenvalue(ntk.gram(model.jacobian(params0, inputs)))
    lip = jacobian_lipschitz_bound(base.output_weights, inputs,
                                   base.activation.smoothness)
    radius = math.sqrt(max(lam_sq, 0.0)) / lip if lip > 0 else 1.0
    n_shell = max(1, n_points // 4)
    worst = -math.inf
    for k in range(n_points + n_shell):
        direction = rng.standard_normal(params0.size)
        direction /= float(np.linalg.norm(direction))
        if k < n_points:
            rad = radius * float(rng.uniform())
        else:
            rad = radius * float(rng.uniform(1.0, 1.25))
        point = params0 + rad * direction
        hess = dense_parameter_hessian(model, point, inputs, targets, loss, alpha)
        worst = max(worst, float(np.linalg.eigvalsh(hess)[-1]))
    return AssumptionEntry(
        id="curvature_domination", analytic=bound, witness=worst,
        holds=worst <= bound,
        detail={"n_inside": n_points, "n_shell": n_shell, "radius": radius,
                "lambda_sq": lam_sq, "centered": centered})


def verify_step_rule(alpha: float, curvature_bound_value: float,
                     eta: float) -> AssumptionEntry:
    """Is the configured noise scale admissible for this curvature level?

    An inadmissible eta does not block runs; it marks them as running outside
    the certified regime.
    """
    admissible = select_eta(alpha, curvature_bound_value)
    return AssumptionEntry(
        id="step_rule", analytic=admissible, witness=eta,
        holds=eta <= admissible,
        detail={"alpha": alpha, "curvature_bound": curvature_bound_value})


def verify_all(model, params0: np.ndarray, inputs: np.ndarray,
               targets: np.ndarray, loss: SquaredLoss, alpha: float, eta: float,
               rng: np.random.Generator, *, floor: float = 1e-12,
               loss_pairs: int = 10_000, lip_pairs: int = 200,
               curvature_points: int = 20) -> AssumptionReport:
    """Run every verifier on one concrete instance."""
    base, centered = _unwrap_shallow(model)
    bound = curvature_bound(alpha, base.output_weights, inputs, targets,
                            centered=centered,
                            smoothness=base.activation.smoothness)
    entries = (
        verify_loss_constants(loss, rng, n_pairs=loss_pairs),
        verify_ntk_positive(model, params0, inputs, floor=floor),
        verify_jacobian_lipschitz(model, params0, inputs, rng, n_pairs=lip_pairs),
        verify_curvature(model, params0, inputs, targets, loss, alpha, rng,
                         n_points=curvature_points),
        verify_step_rule(alpha, bound, eta),
    )
    return AssumptionReport(entries=entries)
