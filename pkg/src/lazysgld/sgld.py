"""Euler-Maruyama integrator for output-scaled Langevin training dynamics.

State is the flat parameter vector omega of a predictor h; the dynamics train
the scaled outputs alpha * h against fixed targets. One continuous-time unit
corresponds to 1/dt Euler steps, and one single-sample stochastic-gradient
step corresponds to eta time units, so the two update rules land on a common
time axis.

Drift: -(1/alpha) * Dh^T grad R(alpha h) per unit time, where grad R is the
gradient of the averaged risk with respect to the output vector.

Diffusion: (sqrt(eta)/alpha) * Sigma(omega)^{1/2} dW, where Sigma(omega) is
the covariance, over a uniformly drawn sample index, of the single-sample
gradient pullbacks g_i = (d ell / d u)(alpha h_i) * Dh_i. This is exactly the
covariance of the noise injected by the single-sample update rule (see
``sgd_step``), which keeps the diffusion commensurate with that rule at every
output scale. The default "factor" mode realizes Sigma^{1/2} dW as
(1/sqrt(n)) * sum_i (g_i - gbar) xi_i with xi ~ N(0, I_n), avoiding any p x p
matrix; "dense_sqrt" forms the explicit PSD square root for cross-validation
on small models.

The exponential supermartingale used by the decay diagnostics is accumulated
alongside the trajectory from the same Gaussian increments:
M_t = sqrt(eta) * int (grad R^T Dh Sigma^{1/2} / gap) dW_s, tracked together
with its quadratic variation so that exp(M - <M>/2) is available at every
recorded time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .losses import GapDegenerateError, SquaredLoss
from .models import DENSE_HESSIAN_CAP
from . import ntk
from .diagnostics import TrajectoryRecord

__all__ = [
    "SgldConfig",
    "DivergenceError",
    "MartingaleState",
    "sample_noise",
    "noise_covariance",
    "martingale_projections",
    "advance_martingale",
    "em_step",
    "linearized_em_step",
    "sgd_step",
    "simulate",
    "simulate_coupled",
    "simulate_sgd",
]

NOISE_MODES = ("factor", "dense_sqrt", "none")


class DivergenceError(RuntimeError):
    """Trajectory left the representable range (non-finite state)."""

    def __init__(self, step: int, time: float):
        super().__init__(f"non-finite state at step {step} (t = {time:g})")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class SgldConfig:
    """Run parameters for one trajectory.

    ``eta`` is the noise scale eta_alpha: it multiplies the diffusion as
    sqrt(eta)/alpha and sets the single-sample step size of ``sgd_step``.
    """

    alpha: float
    eta: float
    dt: float
    horizon: float
    seed: int
    noise_mode: str = "factor"
    record_every: int = 1

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.dt >= self.horizon:
            raise ValueError(
                f"dt ({self.dt}) must be smaller than the horizon ({self.horizon})"
            )
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(
                f"noise_mode must be one of {NOISE_MODES}, got {self.noise_mode!r}"
            )
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValueError(f"record_every must be a positive integer, got {self.record_every}")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))


# --------------------------------------------------------------------------
# noise law


def _forces(model, params, inputs, targets, alpha):
    """Common per-step quantities at the current state.

    Returns (h, resid, gap, jac, loss_grads, grad_risk, drift) where
    loss_grads[i] = d ell/d u at alpha h_i (output space, no alpha chain
    factor), grad_risk = loss_grads / n, and drift = Dh^T grad_risk.
    """
    h = model.predict(params, inputs)
    resid = alpha * h - targets
    gap = float(np.mean(resid * resid))
    jac = model.jacobian(params, inputs)
    loss_grads = 2.0 * resid
    grad_risk = loss_grads / resid.size
    drift = jac.T @ grad_risk
    return h, resid, gap, jac, loss_grads, grad_risk, drift


def noise_covariance(model, params, inputs, targets, loss: SquaredLoss,
                     alpha: float) -> np.ndarray:
    """Sigma(omega) = (1/n) sum g_i g_i^T - gbar gbar^T over the sample pullbacks."""
    _, _, _, jac, loss_grads, _, drift = _forces(model, params, np.asarray(inputs, float),
                                                 np.asarray(targets, float), alpha)
    g = loss_grads[:, None] * jac               # (n, p), rows g_i
    n = g.shape[0]
    return (g.T @ g) / n - np.outer(drift, drift)   # gbar == drift


def _dense_sqrt(sigma: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(sigma)
    vals = np.clip(vals, 0.0, None)              # covariance: negative dust is roundoff
    return (vecs * np.sqrt(vals)) @ vecs.T


def sample_noise(model, params, inputs, targets, loss: SquaredLoss, alpha: float,
                 rng: np.random.Generator | None = None, mode: str = "factor",
                 xi: np.ndarray | None = None) -> np.ndarray:
    """One draw from N(0, Sigma(omega)).

    ``factor`` consumes n standard normals (pass ``xi`` to reuse increments
    across coupled trajectories); ``dense_sqrt`` consumes p of them and is
    limited to small models; ``none`` returns zeros.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if mode not in NOISE_MODES:
        raise ValueError(f"unknown noise mode {mode!r}")
    p = model.num_params
    if mode == "none":
        return np.zeros(p)
    _, _, _, jac, loss_grads, _, drift = _forces(model, params, inputs, targets, alpha)
    n = targets.size
    if mode == "factor":
        if xi is None:
            if rng is None:
                raise ValueError("factor mode needs an rng or explicit increments")
            xi = rng.standard_normal(n)
        return (jac.T @ (loss_grads * xi) - xi.sum() * drift) / math.sqrt(n)
    # dense_sqrt
    if p > DENSE_HESSIAN_CAP:
        raise ValueError(f"dense_sqrt needs p <= {DENSE_HESSIAN_CAP}, got p = {p}")
    sigma = noise_covariance(model, params, inputs, targets, loss, alpha)
    root = _dense_sqrt(sigma)
    if xi is None:
        if rng is None:
            raise ValueError("dense_sqrt mode needs an rng or explicit increments")
        xi = rng.standard_normal(p)
    return root @ xi


# --------------------------------------------------------------------------
# exponential supermartingale


@dataclass(frozen=True)
class MartingaleState:
    """Running stochastic integral M, quadratic variation, and exp(M - QV/2)."""

    m: float = 0.0
    qv: float = 0.0
    frozen: bool = False   # set once the gap degenerates; value held constant

    @property
    def value(self) -> float:
        return math.exp(self.m - 0.5 * self.qv)


def martingale_projections(jacobian: np.ndarray | None, loss_grads: np.ndarray,
                           drift: np.ndarray, gap: float, *,
                           jac_drift: np.ndarray | None = None) -> np.ndarray:
    """Integrand coordinates for factor-mode increments.

    Component i is grad R^T Dh (g_i - gbar) / (sqrt(n) * gap); contracting
    with the shared xi reproduces grad R^T Dh Sigma^{1/2} dW / gap. Pass
    ``jac_drift`` = Dh drift to skip the materialized Jacobian.
    """
    if gap <= 0.0:
        raise GapDegenerateError("martingale integrand undefined at zero gap")
    n = loss_grads.size
    jw = jacobian @ drift if jac_drift is None else jac_drift   # (n,)
    return (loss_grads * jw - float(drift @ drift)) / (math.sqrt(n) * gap)


def _matfree(model) -> bool:
    """Models exposing a fused forward let the hot loop skip the (n, p)
    materialization; the matrix is still built where a spectrum is needed."""
    return hasattr(model, "forward_ops")


def advance_martingale(state: MartingaleState, projections: np.ndarray,
                       xi: np.ndarray, dt: float, eta: float) -> MartingaleState:
    """One Ito increment: M += sqrt(eta) proj . xi sqrt(dt); QV += eta |proj|^2 dt."""
    if state.frozen:
        return state
    dm = math.sqrt(eta) * float(projections @ xi) * math.sqrt(dt)
    dqv = eta * float(projections @ projections) * dt
    return replace(state, m=state.m + dm, qv=state.qv + dqv)


# --------------------------------------------------------------------------
# single steps


def em_step(params: np.ndarray, model, inputs, targets, loss: SquaredLoss,
            config: SgldConfig, rng: np.random.Generator | None = None,
            xi: np.ndarray | None = None) -> np.ndarray:
    """One Euler-Maruyama step of length dt.

    omega <- omega - (dt/alpha) Dh^T grad R(alpha h)
                   + (sqrt(eta)/alpha) sqrt(dt) Sigma^{1/2} xi
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    params = np.asarray(params, dtype=float)
    _, _, _, jac, loss_grads, _, drift = _forces(model, params, inputs, targets,
                                                 config.alpha)
    new = params - (config.dt / config.alpha) * drift
    if config.noise_mode != "none":
        noise = sample_noise(model, params, inputs, targets, loss, config.alpha,
                             rng=rng, mode=config.noise_mode, xi=xi)
        new = new + (math.sqrt(config.eta) / config.alpha) * math.sqrt(config.dt) * noise
    return new


def linearized_em_step(params: np.ndarray, lin_model, inputs, targets,
                       loss: SquaredLoss, config: SgldConfig,
                       rng: np.random.Generator | None = None,
                       xi: np.ndarray | None = None) -> np.ndarray:
    """em_step for the tangent model: frozen Jacobian, the model's own noise law."""
    if not hasattr(lin_model, "anchor"):
        raise TypeError("linearized_em_step expects a LinearizedPredictor")
    return em_step(params, lin_model, inputs, targets, loss, config, rng=rng, xi=xi)


def sgd_step(params: np.ndarray, model, inputs, targets, loss: SquaredLoss,
             config: SgldConfig, rng: np.random.Generator) -> np.ndarray:
    """One single-sample update of step size eta.

    Written as the full-gradient drift plus the centered single-sample
    deviation: omega <- omega - (eta/alpha) Dh^T grad R(alpha h)
    + (sqrt(eta)/alpha) V, with V = sqrt(eta) (Dh^T grad R - Dh^T dell_I),
    where dell_I is the output-space gradient of the loss on one uniformly
    drawn sample. V has conditional mean zero, and the two terms compose to a
    plain stochastic-gradient step on the 1/alpha-scaled objective.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    params = np.asarray(params, dtype=float)
    _, _, _, jac, loss_grads, _, drift = _forces(model, params, inputs, targets,
                                                 config.alpha)
    idx = int(rng.integers(targets.size))
    g_one = loss_grads[idx] * jac[idx]           # Dh^T (d ell / d u) at the drawn sample
    deviation = math.sqrt(config.eta) * (drift - g_one)
    return (params - (config.eta / config.alpha) * drift
            + (math.sqrt(config.eta) / config.alpha) * deviation)


# --------------------------------------------------------------------------
# trajectory drivers


def _check_finite(vec: np.ndarray, step: int, time: float):
    if not np.all(np.isfinite(vec)):
        raise DivergenceError(step, time)


def _floor_check(lam: float, lam0_sv: float, lip_dh: float, dist: float, t: float):
    """Eigenvalue floor inside the protected ball, from Weyl's inequality."""
    floor = max(0.0, lam0_sv - lip_dh * dist) ** 2
    if lam < floor * (1.0 - 1e-6) - 1e-12:
        raise RuntimeError(
            f"kernel floor violated at t = {t:g}: min eig {lam:.6e} < {floor:.6e}"
        )


def simulate(model, params0: np.ndarray, inputs, targets, loss: SquaredLoss,
             config: SgldConfig, *, exit_radius: float | None = None,
             lip_dh: float | None = None, track_lambda: bool = True,
             track_martingale: bool = True, stop_at_exit: bool = False,
             keep_params: bool = False) -> TrajectoryRecord:
    """Integrate one trajectory and record diagnostics on the recording grid.

    ``exit_radius`` defaults to the kernel-floor radius lambda / lip_dh when
    ``lip_dh`` is given, else to +inf (no exit tracking). Exit is detected on
    the recording grid with a strict comparison dist > radius; the trajectory
    keeps running after exit (the post-exit history feeds the cohort
    diagnostics) unless ``stop_at_exit`` is set.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    w0 = np.asarray(params0, dtype=float).copy()
    if config.noise_mode == "dense_sqrt" and model.num_params > DENSE_HESSIAN_CAP:
        raise ValueError(
            f"dense_sqrt needs p <= {DENSE_HESSIAN_CAP}, got p = {model.num_params}"
        )
    rng = np.random.default_rng(config.seed)
    n = targets.size
    n_steps = config.n_steps
    alpha, dt, eta = config.alpha, config.dt, config.eta

    w = w0.copy()
    mstate = MartingaleState()
    times, gaps, dists, lams, marts, eflags = [], [], [], [], [], []
    snaps: list[np.ndarray] | None = [] if keep_params else None
    exited = False
    tau = math.inf
    lam0_sv = math.nan
    lambda_sq_init = math.nan
    theory_radius = math.nan
    radius = math.inf if exit_radius is None else float(exit_radius)
    floor_held = True

    # the update arithmetic must not depend on the recording stride, so the
    # contraction route is chosen once, never per step
    matfree = config.noise_mode != "dense_sqrt" and _matfree(model)

    for step in range(n_steps + 1):
        t = step * dt
        if matfree:
            h, j_tvp, j_vp = model.forward_ops(w, inputs)
        else:
            h = model.predict(w, inputs)
        resid = alpha * h - targets
        gap = float(np.mean(resid * resid))
        _check_finite(resid, step, t)
        loss_grads = 2.0 * resid
        grad_risk = loss_grads / n
        if matfree:
            jac = None
            drift = j_tvp(grad_risk)
        else:
            jac = model.jacobian(w, inputs)
            drift = jac.T @ grad_risk
        record = step % config.record_every == 0 or step == n_steps
        if record:
            dist = float(np.linalg.norm(w - w0))
            lam = math.nan
            if track_lambda:
                lam = ntk.min_eigenvalue(ntk.gram(
                    jac if jac is not None else model.jacobian(w, inputs)))
                if step == 0:
                    lambda_sq_init = lam
                    lam0_sv = math.sqrt(max(lam, 0.0))
                    if lip_dh is not None:
                        theory_radius = lam0_sv / lip_dh
                        if exit_radius is None:
                            radius = theory_radius
                if lip_dh is not None and not math.isnan(theory_radius) \
                        and dist <= theory_radius:
                    _floor_check(lam, lam0_sv, lip_dh, dist, t)
                    if lam < lambda_sq_init:
                        floor_held = False
            if not exited and dist > radius:
                exited = True
                tau = t
            times.append(t)
            gaps.append(gap)
            dists.append(dist)
            lams.append(lam)
            marts.append(mstate.value)
            eflags.append(1 if exited else 0)
            if snaps is not None:
                snaps.append(w.copy())
            if stop_at_exit and exited:
                break
        if step == n_steps:
            break
        xi = None
        noise = None
        if config.noise_mode == "factor":
            xi = rng.standard_normal(n)
            pull = j_tvp(loss_grads * xi) if matfree else jac.T @ (loss_grads * xi)
            noise = (pull - xi.sum() * drift) / math.sqrt(n)
        elif config.noise_mode == "dense_sqrt":
            sigma = (loss_grads[:, None] * jac)
            sigma = (sigma.T @ sigma) / n - np.outer(drift, drift)
            xi = rng.standard_normal(model.num_params)
            noise = _dense_sqrt(sigma) @ xi
        if track_martingale and not mstate.frozen:
            if gap <= 0.0:
                mstate = replace(mstate, frozen=True)
            elif config.noise_mode == "factor":
                jw = j_vp(drift) if matfree else None
                proj = martingale_projections(jac, loss_grads, drift, gap,
                                              jac_drift=jw)
                mstate = advance_martingale(mstate, proj, xi, dt, eta)
            elif config.noise_mode == "dense_sqrt":
                root_w = noise  # already Sigma^{1/2} xi; integrand needs drift^T Sigma^{1/2} xi
                dm = math.sqrt(eta) * float(drift @ root_w) / gap * math.sqrt(dt)
                sig_drift = sigma @ drift
                dqv = eta * float(drift @ sig_drift) / gap**2 * dt
                mstate = replace(mstate, m=mstate.m + dm, qv=mstate.qv + dqv)
        w = w - (dt / alpha) * drift
        if noise is not None:
            w = w + (math.sqrt(eta) / alpha) * math.sqrt(dt) * noise
        _check_finite(w, step + 1, t + dt)

    return TrajectoryRecord(
        times=np.array(times), gap=np.array(gaps), dist=np.array(dists),
        lambda_min=np.array(lams), martingale_e=np.array(marts),
        exit_flags=np.array(eflags, dtype=int), exited=exited, tau=tau,
        lambda_sq_init=lambda_sq_init, exit_radius=radius,
        theory_radius=theory_radius, lambda_floor_held=floor_held,
        params=snaps,
    )


def simulate_coupled(model, lin_model, params0: np.ndarray, inputs, targets,
                     loss: SquaredLoss, config: SgldConfig, *,
                     track_lambda: bool = False) -> tuple[TrajectoryRecord, TrajectoryRecord, np.ndarray]:
    """Run the full model and its tangent model on shared Gaussian increments.

    Returns (full record, tangent record, output gap series), where the output
    gap at each recorded time is || alpha h_lin - alpha h ||_2 over the batch.
    Factor noise only: both trajectories consume the same xi in R^n per step,
    each through its own per-sample pullbacks.
    """
    if config.noise_mode == "dense_sqrt":
        raise ValueError("coupling is defined for shared factor increments")
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    w0 = np.asarray(params0, dtype=float).copy()
    rng = np.random.default_rng(config.seed)
    n = targets.size
    alpha, dt, eta = config.alpha, config.dt, config.eta
    scale = math.sqrt(eta) / alpha * math.sqrt(dt)

    w_full = w0.copy()
    w_lin = w0.copy()
    rows_f: dict[str, list] = {k: [] for k in ("t", "gap", "dist", "lam", "mart", "ex")}
    rows_l: dict[str, list] = {k: [] for k in ("t", "gap", "dist", "lam", "mart", "ex")}
    out_gaps = []

    def _leg_forces(leg_model, w):
        """(h, resid, gap, loss_grads, drift, pull) with pull(v) = Dh^T v."""
        if _matfree(leg_model):
            h, tvp, _ = leg_model.forward_ops(w, inputs)
            pull = tvp
        else:
            h = leg_model.predict(w, inputs)
            jac = leg_model.jacobian(w, inputs)
            pull = lambda v: jac.T @ v    # noqa: E731 - per-step closure
        resid = alpha * h - targets
        gap = float(np.mean(resid * resid))
        loss_grads = 2.0 * resid
        drift = pull(loss_grads / n)
        return h, resid, gap, loss_grads, drift, pull

    for step in range(config.n_steps + 1):
        t = step * dt
        hf, rf, gapf, lgf, driftf, pullf = _leg_forces(model, w_full)
        hl, rl, gapl, lgl, driftl, pulll = _leg_forces(lin_model, w_lin)
        _check_finite(rf, step, t)
        _check_finite(rl, step, t)
        record = step % config.record_every == 0 or step == config.n_steps
        if record:
            lamf = laml = math.nan
            if track_lambda:
                lamf = ntk.min_eigenvalue(ntk.gram(model.jacobian(w_full, inputs)))
                laml = ntk.min_eigenvalue(ntk.gram(lin_model.jacobian(w_lin, inputs)))
            for rows, gap, w, lam in ((rows_f, gapf, w_full, lamf),
                                      (rows_l, gapl, w_lin, laml)):
                rows["t"].append(t)
                rows["gap"].append(gap)
                rows["dist"].append(float(np.linalg.norm(w - w0)))
                rows["lam"].append(lam)
                rows["mart"].append(1.0)
                rows["ex"].append(0)
            out_gaps.append(float(np.linalg.norm(alpha * hl - alpha * hf)))
        if step == config.n_steps:
            break
        if config.noise_mode == "factor":
            xi = rng.standard_normal(n)
            noise_f = (pullf(lgf * xi) - xi.sum() * driftf) / math.sqrt(n)
            noise_l = (pulll(lgl * xi) - xi.sum() * driftl) / math.sqrt(n)
        else:
            noise_f = noise_l = None
        w_full = w_full - (dt / alpha) * driftf
        w_lin = w_lin - (dt / alpha) * driftl
        if noise_f is not None:
            w_full = w_full + scale * noise_f
            w_lin = w_lin + scale * noise_l
        _check_finite(w_full, step + 1, t + dt)
        _check_finite(w_lin, step + 1, t + dt)

    def _pack(rows) -> TrajectoryRecord:
        return TrajectoryRecord(
            times=np.array(rows["t"]), gap=np.array(rows["gap"]),
            dist=np.array(rows["dist"]), lambda_min=np.array(rows["lam"]),
            martingale_e=np.array(rows["mart"]),
            exit_flags=np.array(rows["ex"], dtype=int), exited=False,
            tau=math.inf,
        )

    return _pack(rows_f), _pack(rows_l), np.array(out_gaps)


def simulate_sgd(model, params0: np.ndarray, inputs, targets, loss: SquaredLoss,
                 config: SgldConfig, *, track_lambda: bool = False) -> TrajectoryRecord:
    """Iterate ``sgd_step``; step k sits at time t = k * eta on the shared axis.

    The martingale column is held at 1 (no Brownian increments here).
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    w0 = np.asarray(params0, dtype=float).copy()
    rng = np.random.default_rng(config.seed)
    n_steps = max(1, int(round(config.horizon / config.eta)))
    alpha, eta = config.alpha, config.eta

    w = w0.copy()
    times, gaps, dists, lams, eflags = [], [], [], [], []
    for step in range(n_steps + 1):
        t = step * eta
        h, resid, gap, jac, loss_grads, _, drift = _forces(model, w, inputs, targets, alpha)
        _check_finite(resid, step, t)
        if step % config.record_every == 0 or step == n_steps:
            times.append(t)
            gaps.append(gap)
            dists.append(float(np.linalg.norm(w - w0)))
            lams.append(ntk.min_eigenvalue(ntk.gram(jac)) if track_lambda else math.nan)
            eflags.append(0)
        if step == n_steps:
            break
        idx = int(rng.integers(targets.size))
        g_one = loss_grads[idx] * jac[idx]
        deviation = math.sqrt(eta) * (drift - g_one)
        w = w - (eta / alpha) * drift + (math.sqrt(eta) / alpha) * deviation
        _check_finite(w, step + 1, t + eta)

    k = len(times)
    return TrajectoryRecord(
        times=np.array(times), gap=np.array(gaps), dist=np.array(dists),
        lambda_min=np.array(lams), martingale_e=np.ones(k),
        exit_flags=np.array(eflags, dtype=int), exited=False, tau=math.inf,
    )
