"""Differentiable predictors with closed-form Jacobians.

Every model maps a flat parameter vector omega in R^p and an input batch
X in R^{n x d} to outputs h(omega) in R^n, and exposes the full output
Jacobian D h(omega) in R^{n x p}. Training dynamics act on alpha * h for an
output scale alpha that the models themselves never see: the scale enters
only through the loss composition helpers at the bottom of this module.

Parameter layout conventions:

* ShallowTanhNet: omega = flattened hidden weight matrix W in R^{m x d}
  (row j is neuron j); the output weights c are fixed data of the model.
* DeepNet: omega = [vec(W^1), ..., vec(W^H), a] with W^1 in R^{m x d},
  W^k in R^{m x m} for k >= 2, and output weights a in R^m. Hidden layers
  are x^k = sqrt(c_sigma / m) * sigma(W^k x^{k-1}) with c_sigma chosen so a
  unit Gaussian pre-activation has unit second moment after rescaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .losses import SquaredLoss, risk_gradient

__all__ = [
    "DimensionMismatchError",
    "CapacityError",
    "Activation",
    "TANH",
    "ShallowTanhNet",
    "DeepNet",
    "CenteredPredictor",
    "LinearizedPredictor",
    "per_sample_loss_gradient",
    "per_sample_loss_gradients",
    "dense_parameter_hessian",
    "random_sign_vector",
    "gaussian_shallow_init",
    "symmetric_shallow_init",
    "gaussian_deep_init",
]

DENSE_HESSIAN_CAP = 2000  # dense p x p work refuses above this many parameters


class DimensionMismatchError(ValueError):
    """Parameter or batch shape does not match the model layout."""


class CapacityError(RuntimeError):
    """A dense O(p^2) operation was requested above the size cap."""


# --------------------------------------------------------------------------
# activations


@lru_cache(maxsize=None)
def _gauss_hermite_second_moment(name: str) -> float:
    """E[sigma(z)^2] for z ~ N(0,1), via 128-node Gauss-Hermite quadrature."""
    nodes, weights = np.polynomial.hermite.hermgauss(128)
    z = math.sqrt(2.0) * nodes
    w = weights / math.sqrt(math.pi)
    if name == "tanh":
        vals = np.tanh(z) ** 2
    else:
        raise ValueError(f"unknown activation {name!r}")
    return float(np.sum(w * vals))


@dataclass(frozen=True)
class Activation:
    """Scalar activation with first/second derivative and smoothness data."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    lipschitz: float       # sup |sigma'|
    smoothness: float      # sup |sigma''|, i.e. Lip(sigma')
    d1_from_fn: Callable[[np.ndarray], np.ndarray] | None = None
    # sigma' recovered from already-computed sigma values, when the algebra
    # allows it; spares the hot loop a second transcendental pass

    @property
    def c_sigma(self) -> float:
        """Normalizer 1 / E[sigma(z)^2], z ~ N(0,1)."""
        return 1.0 / _gauss_hermite_second_moment(self.name)


def _tanh_d1(z: np.ndarray) -> np.ndarray:
    t = np.tanh(z)
    return 1.0 - t * t


def _tanh_d2(z: np.ndarray) -> np.ndarray:
    t = np.tanh(z)
    return -2.0 * t * (1.0 - t * t)


# max |tanh''| = 4 / (3 sqrt 3), attained at tanh(z) = 1/sqrt(3)
TANH_SMOOTHNESS = 4.0 / (3.0 * math.sqrt(3.0))

TANH = Activation(
    name="tanh",
    fn=np.tanh,
    d1=_tanh_d1,
    d2=_tanh_d2,
    lipschitz=1.0,
    smoothness=TANH_SMOOTHNESS,
    d1_from_fn=lambda t: 1.0 - t * t,
)


# --------------------------------------------------------------------------
# predictors


def _check_batch(inputs: np.ndarray, input_dim: int) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != input_dim:
        raise DimensionMismatchError(
            f"expected batch of shape (n, {input_dim}), got {inputs.shape}"
        )
    if inputs.shape[0] == 0:
        raise DimensionMismatchError("empty input batch")
    return inputs


class ShallowTanhNet:
    """One hidden layer: h(omega)(x) = (1/sqrt(m)) * sum_j c_j tanh(omega_j^T x).

    Only the hidden weights omega are trainable; c is fixed. The Jacobian row
    for sample i is the concatenation over j of (c_j/sqrt(m)) sigma'(omega_j^T
    x_i) x_i^T, and the output Hessian w.r.t. omega is block diagonal with
    blocks (c_j/sqrt(m)) sigma''(omega_j^T x_i) x_i x_i^T.
    """

    def __init__(self, input_dim: int, output_weights: np.ndarray,
                 activation: Activation = TANH):
        c = np.asarray(output_weights, dtype=float).ravel()
        if c.size == 0:
            raise DimensionMismatchError("need at least one hidden unit")
        if input_dim <= 0:
            raise DimensionMismatchError(f"input_dim must be positive, got {input_dim}")
        self.input_dim = int(input_dim)
        self.width = int(c.size)
        self.output_weights = c
        self.activation = activation
        self._scale = 1.0 / math.sqrt(self.width)

    @property
    def num_params(self) -> int:
        return self.width * self.input_dim

    def _weights(self, params: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.num_params,):
            raise DimensionMismatchError(
                f"expected params of shape ({self.num_params},), got {params.shape}"
            )
        return params.reshape(self.width, self.input_dim)

    def preactivations(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """Z[i, j] = omega_j^T x_i, shape (n, m)."""
        inputs = _check_batch(inputs, self.input_dim)
        return inputs @ self._weights(params).T

    def predict(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        z = self.preactivations(params, inputs)
        return self._scale * (self.activation.fn(z) @ self.output_weights)

    def jacobian(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        inputs = _check_batch(inputs, self.input_dim)
        z = self.preactivations(params, inputs)                  # (n, m)
        gate = self._scale * self.output_weights * self.activation.d1(z)  # (n, m)
        n = inputs.shape[0]
        # row i, block j = gate[i, j] * x_i
        jac = gate[:, :, None] * inputs[:, None, :]              # (n, m, d)
        return jac.reshape(n, self.num_params)

    def jacobian_tvp(self, params: np.ndarray, inputs: np.ndarray,
                     coeffs: np.ndarray) -> np.ndarray:
        """Dh(omega)^T coeffs without materializing the (n, p) Jacobian."""
        inputs = _check_batch(inputs, self.input_dim)
        v = np.asarray(coeffs, dtype=float)
        if v.shape != (inputs.shape[0],):
            raise DimensionMismatchError("need one coefficient per sample")
        z = self.preactivations(params, inputs)
        gate = self._scale * self.output_weights * self.activation.d1(z)
        return ((gate * v[:, None]).T @ inputs).ravel()

    def jacobian_vp(self, params: np.ndarray, inputs: np.ndarray,
                    vec: np.ndarray) -> np.ndarray:
        """Dh(omega) vec without materializing the (n, p) Jacobian."""
        inputs = _check_batch(inputs, self.input_dim)
        v = np.asarray(vec, dtype=float)
        if v.shape != (self.num_params,):
            raise DimensionMismatchError(
                f"expected a vector of shape ({self.num_params},), got {v.shape}"
            )
        z = self.preactivations(params, inputs)
        gate = self._scale * self.output_weights * self.activation.d1(z)
        return ((inputs @ v.reshape(self.width, self.input_dim).T) * gate).sum(axis=1)

    def forward_ops(self, params: np.ndarray, inputs: np.ndarray):
        """(h, Dh^T ., Dh .) from one shared forward pass.

        The contraction closures reuse the activation values computed for h,
        so a full step (value, drift, noise pullback, drift pushforward) costs
        a single transcendental sweep. Arithmetic matches ``predict`` exactly.
        """
        inputs = _check_batch(inputs, self.input_dim)
        z = self.preactivations(params, inputs)
        act = self.activation.fn(z)
        h = self._scale * (act @ self.output_weights)
        if self.activation.d1_from_fn is not None:
            d1 = self.activation.d1_from_fn(act)
        else:
            d1 = self.activation.d1(z)
        gate = self._scale * self.output_weights * d1     # (n, m)
        width, dim = self.width, self.input_dim

        def tvp(coeffs: np.ndarray) -> np.ndarray:
            v = np.asarray(coeffs, dtype=float)
            return ((gate * v[:, None]).T @ inputs).ravel()

        def vp(vec: np.ndarray) -> np.ndarray:
            v = np.asarray(vec, dtype=float).reshape(width, dim)
            return ((inputs @ v.T) * gate).sum(axis=1)

        return h, tvp, vp

    def output_hessian(self, params: np.ndarray, inputs: np.ndarray,
                       sample_weights: np.ndarray) -> np.ndarray:
        """sum_i w_i * Hess_omega h_i(omega), as a dense (p, p) block-diagonal matrix."""
        inputs = _check_batch(inputs, self.input_dim)
        w = np.asarray(sample_weights, dtype=float)
        if w.shape != (inputs.shape[0],):
            raise DimensionMismatchError("need one weight per sample")
        if self.num_params > DENSE_HESSIAN_CAP:
            raise CapacityError(
                f"dense Hessian needs p <= {DENSE_HESSIAN_CAP}, got p = {self.num_params}"
            )
        z = self.preactivations(params, inputs)                  # (n, m)
        curv = self.activation.d2(z)                             # (n, m)
        d = self.input_dim
        out = np.zeros((self.num_params, self.num_params))
        for j in range(self.width):
            coeff = self._scale * self.output_weights[j] * w * curv[:, j]   # (n,)
            block = inputs.T @ (coeff[:, None] * inputs)                    # (d, d)
            sl = slice(j * d, (j + 1) * d)
            out[sl, sl] = block
        return out


class DeepNet:
    """Fully connected depth-H net with rescaled activations and linear readout."""

    def __init__(self, input_dim: int, width: int, depth: int,
                 activation: Activation = TANH):
        if input_dim <= 0 or width <= 0 or depth <= 0:
            raise DimensionMismatchError("input_dim, width and depth must be positive")
        self.input_dim = int(input_dim)
        self.width = int(width)
        self.depth = int(depth)
        self.activation = activation
        self._scale = math.sqrt(activation.c_sigma / width)
        self._layer_shapes = [(width, input_dim)]
        self._layer_shapes += [(width, width)] * (depth - 1)
        self._layer_sizes = [r * c for r, c in self._layer_shapes]

    @property
    def num_params(self) -> int:
        return sum(self._layer_sizes) + self.width

    def split(self, params: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Views (weight matrices W^1..W^H, output vector a) into a flat vector."""
        params = np.asarray(params, dtype=float)
        if params.shape != (self.num_params,):
            raise DimensionMismatchError(
                f"expected params of shape ({self.num_params},), got {params.shape}"
            )
        mats = []
        off = 0
        for size, shape in zip(self._layer_sizes, self._layer_shapes):
            mats.append(params[off:off + size].reshape(shape))
            off += size
        return mats, params[off:]

    def _forward(self, params, inputs):
        inputs = _check_batch(inputs, self.input_dim)
        mats, a = self.split(params)
        acts = [inputs.T]                       # x^0, shape (d, n)
        pre = []
        for wmat in mats:
            z = wmat @ acts[-1]                 # (m, n)
            pre.append(z)
            acts.append(self._scale * self.activation.fn(z))
        return mats, a, acts, pre

    def predict(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        _, a, acts, _ = self._forward(params, inputs)
        return acts[-1].T @ a

    def jacobian(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """Full (n, p) Jacobian via reverse accumulation, all samples at once."""
        mats, a, acts, pre = self._forward(params, inputs)
        n = acts[0].shape[1]
        blocks: list[np.ndarray] = [None] * len(mats)  # type: ignore[list-item]
        v = np.broadcast_to(a[:, None], (self.width, n)).copy()   # d f / d x^k
        for k in range(self.depth - 1, -1, -1):
            u = self._scale * self.activation.d1(pre[k]) * v      # (m, n)
            # grad over W^k for sample i is u[:, i] outer acts[k][:, i]
            blocks[k] = np.einsum("mi,di->imd", u, acts[k]).reshape(n, -1)
            v = mats[k].T @ u
        pieces = [b for b in blocks] + [acts[-1].T]
        return np.concatenate(pieces, axis=1)

    def layer_gram(self, params: np.ndarray, inputs: np.ndarray, layer: int) -> np.ndarray:
        """Gram matrix of the Jacobian block for one layer.

        ``layer`` runs 1..H for the weight matrices and H+1 for the readout a.
        Computed from activation/sensitivity inner products, never forming the
        per-layer Jacobian.
        """
        if not 1 <= layer <= self.depth + 1:
            raise DimensionMismatchError(
                f"layer must be in 1..{self.depth + 1}, got {layer}"
            )
        mats, a, acts, pre = self._forward(params, inputs)
        n = acts[0].shape[1]
        if layer == self.depth + 1:
            top = acts[-1]                      # (m, n)
            return top.T @ top
        v = np.broadcast_to(a[:, None], (self.width, n)).copy()
        for k in range(self.depth - 1, layer - 1, -1):
            u = self._scale * self.activation.d1(pre[k]) * v
            v = mats[k].T @ u
        u = self._scale * self.activation.d1(pre[layer - 1]) * v  # (m, n)
        return (u.T @ u) * (acts[layer - 1].T @ acts[layer - 1])

    def layer_distances(self, params: np.ndarray, params0: np.ndarray) -> np.ndarray:
        """Per-layer distances [readout a, W^1, ..., W^H] (2-norm / Frobenius)."""
        mats, a = self.split(params)
        mats0, a0 = self.split(np.asarray(params0, dtype=float))
        out = [float(np.linalg.norm(a - a0))]
        out += [float(np.linalg.norm(w - w0)) for w, w0 in zip(mats, mats0)]
        return np.array(out)


class CenteredPredictor:
    """base(omega) - base(omega0): outputs vanish identically at omega0."""

    def __init__(self, base, params0: np.ndarray):
        self.base = base
        self.params0 = np.asarray(params0, dtype=float).copy()
        if self.params0.shape != (base.num_params,):
            raise DimensionMismatchError(
                f"anchor params shape {self.params0.shape} does not match model"
            )
        self._cache_key: int | None = None
        self._cache_h0: np.ndarray | None = None
        # the constant shift has zero derivative, so the base's matrix-free
        # contractions (when it has them) are also ours
        if hasattr(base, "jacobian_tvp"):
            self.jacobian_tvp = base.jacobian_tvp
            self.jacobian_vp = base.jacobian_vp
        if hasattr(base, "forward_ops"):
            self.forward_ops = self._forward_ops

    @property
    def num_params(self) -> int:
        return self.base.num_params

    @property
    def input_dim(self) -> int:
        return self.base.input_dim

    def _h0(self, inputs: np.ndarray) -> np.ndarray:
        if self._cache_key != id(inputs):
            self._cache_h0 = self.base.predict(self.params0, inputs)
            self._cache_key = id(inputs)
        return self._cache_h0

    def predict(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if params is self.params0 or np.array_equal(params, self.params0):
            return np.zeros(np.asarray(inputs).shape[0])
        return self.base.predict(params, inputs) - self._h0(inputs)

    def jacobian(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        return self.base.jacobian(params, inputs)  # constant shift drops out

    def _forward_ops(self, params: np.ndarray, inputs: np.ndarray):
        h, tvp, vp = self.base.forward_ops(params, inputs)
        return h - self._h0(inputs), tvp, vp


class LinearizedPredictor:
    """First-order model around omega0: h0 + Dh(omega0) (omega - omega0)."""

    def __init__(self, base, params0: np.ndarray):
        self.base = base
        self.params0 = np.asarray(params0, dtype=float).copy()
        if self.params0.shape != (base.num_params,):
            raise DimensionMismatchError(
                f"anchor params shape {self.params0.shape} does not match model"
            )
        self._cache_key: int | None = None
        self._cache: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def num_params(self) -> int:
        return self.base.num_params

    @property
    def input_dim(self) -> int:
        return self.base.input_dim

    def anchor(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(h(omega0), Dh(omega0)) for this batch, cached per batch object."""
        if self._cache_key != id(inputs):
            h0 = self.base.predict(self.params0, inputs)
            j0 = self.base.jacobian(self.params0, inputs)
            self._cache = (h0, j0)
            self._cache_key = id(inputs)
        return self._cache

    def predict(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        h0, j0 = self.anchor(inputs)
        return h0 + j0 @ (params - self.params0)

    def jacobian(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        _, j0 = self.anchor(inputs)
        return j0

    def jacobian_tvp(self, params: np.ndarray, inputs: np.ndarray,
                     coeffs: np.ndarray) -> np.ndarray:
        _, j0 = self.anchor(inputs)
        return j0.T @ np.asarray(coeffs, dtype=float)

    def jacobian_vp(self, params: np.ndarray, inputs: np.ndarray,
                    vec: np.ndarray) -> np.ndarray:
        _, j0 = self.anchor(inputs)
        return j0 @ np.asarray(vec, dtype=float)

    def forward_ops(self, params: np.ndarray, inputs: np.ndarray):
        params = np.asarray(params, dtype=float)
        h0, j0 = self.anchor(inputs)
        h = h0 + j0 @ (params - self.params0)

        def tvp(coeffs: np.ndarray) -> np.ndarray:
            return j0.T @ np.asarray(coeffs, dtype=float)

        def vp(vec: np.ndarray) -> np.ndarray:
            return j0 @ np.asarray(vec, dtype=float)

        return h, tvp, vp


# --------------------------------------------------------------------------
# loss composition helpers


def per_sample_loss_gradients(model, params: np.ndarray, inputs: np.ndarray,
                              targets: np.ndarray, loss: SquaredLoss,
                              alpha: float) -> np.ndarray:
    """All n parameter gradients of omega -> ell(x_i, alpha h(omega)), stacked (n, p).

    Row i is alpha * dell/du(alpha h_i, y_i) * Dh_i(omega); the mean over rows
    equals the parameter gradient of the averaged risk of alpha h.
    """
    targets = np.asarray(targets, dtype=float)
    h = model.predict(params, inputs)
    if h.shape != targets.shape:
        raise DimensionMismatchError(
            f"targets shape {targets.shape} does not match outputs {h.shape}"
        )
    jac = model.jacobian(params, inputs)
    lgrad = loss.grad(alpha * h, targets)
    return (alpha * lgrad)[:, None] * jac


def per_sample_loss_gradient(model, params: np.ndarray, inputs: np.ndarray,
                             targets: np.ndarray, loss: SquaredLoss,
                             alpha: float, index: int) -> np.ndarray:
    """Parameter gradient of the single-sample loss at sample ``index``."""
    n = np.asarray(inputs).shape[0]
    if not 0 <= index < n:
        raise IndexError(f"sample index {index} out of range for n = {n}")
    targets = np.asarray(targets, dtype=float)
    h = model.predict(params, inputs)
    jac = model.jacobian(params, inputs)
    lgrad = loss.grad(alpha * h[index], targets[index])
    return alpha * lgrad * jac[index]


def _risk_parameter_gradient(model, params, inputs, targets, loss, alpha):
    h = model.predict(params, inputs)
    jac = model.jacobian(params, inputs)
    return alpha * (jac.T @ risk_gradient(alpha * h, targets))


def dense_parameter_hessian(model, params: np.ndarray, inputs: np.ndarray,
                            targets: np.ndarray, loss: SquaredLoss,
                            alpha: float, cap: int = DENSE_HESSIAN_CAP) -> np.ndarray:
    """Dense Hessian of omega -> R(alpha h(omega)), symmetrized.

    Uses the exact Gauss-Newton-plus-curvature decomposition
    (2 alpha^2 / n) Dh^T Dh + (2 alpha / n) sum_i r_i Hess h_i for models with
    closed-form output Hessians (shallow nets, their centered wrappers, and
    linearized models, whose curvature term vanishes); anything else falls
    back to central finite differences of the parameter gradient.
    """
    params = np.asarray(params, dtype=float)
    p = model.num_params
    if p > cap:
        raise CapacityError(f"dense Hessian needs p <= {cap}, got p = {p}")
    targets = np.asarray(targets, dtype=float)
    n = targets.size

    base = model.base if isinstance(model, CenteredPredictor) else model
    if isinstance(model, LinearizedPredictor):
        jac = model.jacobian(params, inputs)
        hess = (2.0 * alpha**2 / n) * (jac.T @ jac)
    elif isinstance(base, ShallowTanhNet):
        h = model.predict(params, inputs)
        jac = model.jacobian(params, inputs)
        resid = alpha * h - targets
        hess = (2.0 * alpha**2 / n) * (jac.T @ jac)
        hess += base.output_hessian(params, inputs, (2.0 * alpha / n) * resid)
    else:
        eps = 1e-5
        hess = np.empty((p, p))
        for k in range(p):
            step = np.zeros(p)
            step[k] = eps
            gp = _risk_parameter_gradient(model, params + step, inputs, targets, loss, alpha)
            gm = _risk_parameter_gradient(model, params - step, inputs, targets, loss, alpha)
            hess[:, k] = (gp - gm) / (2.0 * eps)

    asym = np.abs(hess - hess.T).max()
    scale = max(np.abs(hess).max(), 1.0)
    if asym > 1e-8 * scale:
        raise ValueError(f"Hessian asymmetry {asym:.3e} exceeds tolerance")
    return 0.5 * (hess + hess.T)


# --------------------------------------------------------------------------
# initializers


def random_sign_vector(width: int, rng: np.random.Generator) -> np.ndarray:
    """Fixed output weights c in {-1, +1}^m, uniform signs."""
    return rng.choice(np.array([-1.0, 1.0]), size=width)


def gaussian_shallow_init(width: int, input_dim: int,
                          rng: np.random.Generator) -> np.ndarray:
    """omega_j ~ N(0, I_d) i.i.d., flattened."""
    return rng.standard_normal(width * input_dim)


def symmetric_shallow_init(width: int, input_dim: int,
                           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Paired init: mirrored weight rows with opposite c signs, so h(omega0) = 0 exactly.

    Width must be even; returns (params0, output_weights).
    """
    if width % 2 != 0:
        raise DimensionMismatchError(f"symmetric init needs even width, got {width}")
    half = width // 2
    rows = rng.standard_normal((half, input_dim))
    w0 = np.concatenate([rows, rows], axis=0)
    c = np.concatenate([np.ones(half), -np.ones(half)])
    return w0.ravel(), c


def gaussian_deep_init(net: DeepNet, rng: np.random.Generator) -> np.ndarray:
    """All weight entries and readout entries ~ N(0, 1)."""
    return rng.standard_normal(net.num_params)
