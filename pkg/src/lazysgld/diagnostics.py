"""Trajectory records, first-exit detection, closed-form bound evaluators,
and Monte Carlo exit-probability estimation.

Bound evaluators take the regularity constants explicitly. Two conventions
coexist for the pair (mu, Lip) because the averaged risk R = (1/n) sum ell_i
rescales both constants of the per-sample loss by 1/n, and the decay exponent
2 mu lambda^2 t changes with the choice. Similarly, the kernel level lambda^2
is the smallest eigenvalue of Dh Dh^T, and formulas are evaluated both with
that eigenvalue and with its square root in the exponent. ``build_bound_report``
emits every combination, tagged, with the (averaged, eigenvalue) pair marked
primary: that is the combination under which the Polyak-Lojasiewicz step
``|grad R|^2 = 2 mu_avg gap`` holds with equality, hence the only provable one.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TrajectoryRecord",
    "DeepExitState",
    "detect_exit",
    "detect_exit_deep",
    "gap_decay_bound",
    "minimizer_distance_bound",
    "exit_probability_bound",
    "linearization_error_bound",
    "wilson_interval",
    "ExitEstimate",
    "ExitProbabilityReport",
    "exit_probability_mc",
    "cohort_split",
    "exit_cohort_decomposition",
    "BoundEntry",
    "BoundReport",
    "build_bound_report",
]

CSV_COLUMNS = ("t", "gap", "dist", "lambda_min", "martingale_E", "exited")

# 95% two-sided normal quantile, used by every interval here
Z_95 = 1.959963984540054


@dataclass
class TrajectoryRecord:
    """Diagnostics sampled on the recording grid of one trajectory."""

    times: np.ndarray
    gap: np.ndarray
    dist: np.ndarray
    lambda_min: np.ndarray
    martingale_e: np.ndarray
    exit_flags: np.ndarray
    exited: bool
    tau: float
    lambda_sq_init: float = math.nan
    exit_radius: float = math.inf
    theory_radius: float = math.nan
    lambda_floor_held: bool = True
    params: list[np.ndarray] | None = None

    def __post_init__(self):
        k = len(self.times)
        for name in ("gap", "dist", "lambda_min", "martingale_e", "exit_flags"):
            if len(getattr(self, name)) != k:
                raise ValueError(f"column {name} length mismatch")

    def __len__(self) -> int:
        return len(self.times)

    def rows(self):
        """Yield CSV rows in the column order of CSV_COLUMNS."""
        for i in range(len(self.times)):
            yield (self.times[i], self.gap[i], self.dist[i], self.lambda_min[i],
                   self.martingale_e[i], int(self.exit_flags[i]))


def detect_exit(times: np.ndarray, dists: np.ndarray, radius: float) -> float:
    """First recorded time with dist > radius (strict); +inf when never reached."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    times = np.asarray(times, dtype=float)
    dists = np.asarray(dists, dtype=float)
    if times.shape != dists.shape:
        raise ValueError("times and dists length mismatch")
    hits = np.nonzero(dists > radius)[0]
    return float(times[hits[0]]) if hits.size else math.inf


@dataclass(frozen=True)
class DeepExitState:
    """Per-layer first-exit times; index 0 is the readout vector, k >= 1 the
    weight matrices in forward order. Overall tau is the minimum."""

    taus: tuple[float, ...]
    radius: float

    @property
    def tau(self) -> float:
        return min(self.taus)


def detect_exit_deep(times: np.ndarray, layer_dists: np.ndarray,
                     radius: float) -> DeepExitState:
    """Layerwise exit detection on a (T, H+1) matrix of layer distances.

    Column k holds the Frobenius distance of weight matrix k from its initial
    value (column 0: 2-norm of the readout offset), i.e. the layout produced
    by DeepNet.layer_distances. The radius is the common layer radius
    sqrt(m) * R.
    """
    layer_dists = np.asarray(layer_dists, dtype=float)
    if layer_dists.ndim != 2:
        raise ValueError("layer_dists must be (times, layers)")
    taus = tuple(detect_exit(times, layer_dists[:, k], radius)
                 for k in range(layer_dists.shape[1]))
    return DeepExitState(taus=taus, radius=radius)


# --------------------------------------------------------------------------
# closed-form bound evaluators


def gap_decay_bound(gap0: float, mu: float, lambda_sq: float, t):
    """Expected-gap decay envelope gap0 * exp(-2 mu lambda^2 t), valid pre-exit."""
    if gap0 < 0 or mu <= 0 or lambda_sq < 0:
        raise ValueError("gap0 must be >= 0 and mu > 0, lambda_sq >= 0")
    return gap0 * np.exp(-2.0 * mu * lambda_sq * np.asarray(t, dtype=float))


def minimizer_distance_bound(lip_grad: float, mu: float, hstar_norm_sq: float,
                             lambda_sq: float, t):
    """Envelope for E |alpha h - hstar|^2: (Lip/mu) |alpha h0 - hstar|^2 e^{-2 mu lambda^2 t}.

    With a centered initialization the prefactor norm is just |y|^2.
    """
    if lip_grad <= 0 or mu <= 0 or hstar_norm_sq < 0:
        raise ValueError("constants must be positive, hstar_norm_sq >= 0")
    return (lip_grad / mu) * hstar_norm_sq * np.exp(
        -2.0 * mu * lambda_sq * np.asarray(t, dtype=float))


def exit_probability_bound(alpha: float, radius: float, frob_dh0: float,
                           lip_grad: float, mu: float, hstar_norm_sq: float,
                           lambda_sq: float) -> float:
    """Time-uniform bound on P(|omega_t - omega_0| > radius).

    (1/(alpha radius)) |Dh(w0)|_F Lip sqrt(Lip |hstar|^2) / (mu^{3/2} lambda^2).
    Values above 1 are vacuous but returned as computed; callers report them
    as such rather than clipping.
    """
    if min(alpha, radius, frob_dh0, lip_grad, mu, lambda_sq) <= 0 or hstar_norm_sq < 0:
        raise ValueError("all inputs must be positive (hstar_norm_sq >= 0)")
    return (frob_dh0 * lip_grad * math.sqrt(lip_grad * hstar_norm_sq)
            / (alpha * radius * mu ** 1.5 * lambda_sq))


def linearization_error_bound(lip_grad: float, mu: float, hstar_norm: float,
                              lambda_sq: float, t):
    """Envelope for E |alpha h_lin - alpha h|: 2 sqrt(Lip/mu) |hstar| e^{-mu lambda^2 t}.

    Note the exponent is half the gap-decay rate (mu lambda^2, not 2 mu lambda^2).
    """
    if lip_grad <= 0 or mu <= 0 or hstar_norm < 0:
        raise ValueError("constants must be positive, hstar_norm >= 0")
    return (2.0 * math.sqrt(lip_grad / mu) * hstar_norm
            * np.exp(-mu * lambda_sq * np.asarray(t, dtype=float)))


# --------------------------------------------------------------------------
# Monte Carlo exit probability


def wilson_interval(successes: int, total: int, z: float = Z_95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total <= 0:
        raise ValueError("total must be positive")
    if not 0 <= successes <= total:
        raise ValueError("successes out of range")
    phat = successes / total
    denom = 1.0 + z * z / total
    center = (phat + z * z / (2 * total)) / denom
    half = (z / denom) * math.sqrt(phat * (1 - phat) / total
                                   + z * z / (4 * total * total))
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class ExitEstimate:
    alpha: float
    n_trials: int
    n_exited: int
    n_diverged: int
    estimate: float
    ci_low: float
    ci_high: float

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha, "n_trials": self.n_trials,
            "n_exited": self.n_exited, "n_diverged": self.n_diverged,
            "estimate": self.estimate, "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


@dataclass(frozen=True)
class ExitProbabilityReport:
    estimates: tuple[ExitEstimate, ...]
    monotone_within_ci: bool
    violating_pairs: tuple[tuple[float, float], ...]

    def to_json_dict(self) -> dict:
        return {
            "estimates": [e.to_json_dict() for e in self.estimates],
            "monotone_within_ci": self.monotone_within_ci,
            "violating_pairs": [list(p) for p in self.violating_pairs],
        }


_OUTCOMES = ("exited", "stayed", "diverged")


def _pool_map(fn, items, threads: int):
    """Map preserving input order; thread pool for threads > 1.

    Results are folded in trial-index order regardless of completion order,
    so reports do not depend on scheduling.
    """
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def exit_probability_mc(run_trial, alphas, n_trials: int,
                        threads: int = 1) -> ExitProbabilityReport:
    """Estimate P(exit before horizon) on an alpha grid.

    run_trial(alpha, trial_index) -> one of {"exited", "stayed", "diverged"};
    the caller owns seeding (same trial index across alphas should map to
    paired seeds). Diverged trials are excluded from the exit frequency but
    reported, never dropped silently. Requires n_trials >= 30 so the normal
    interval is meaningful.
    """
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValueError("alpha grid is empty")
    if n_trials < 30:
        raise ValueError(f"need at least 30 trials, got {n_trials}")
    estimates = []
    for alpha in alphas:
        outcomes = _pool_map(lambda i, a=alpha: (i, run_trial(a, i)),
                             range(n_trials), threads)
        outcomes.sort(key=lambda pair: pair[0])
        counts = {k: 0 for k in _OUTCOMES}
        for _, out in outcomes:
            if out not in counts:
                raise ValueError(f"run_trial returned unknown outcome {out!r}")
            counts[out] += 1
        valid = n_trials - counts["diverged"]
        if valid == 0:
            est, lo, hi = math.nan, math.nan, math.nan
        else:
            est = counts["exited"] / valid
            lo, hi = wilson_interval(counts["exited"], valid)
        estimates.append(ExitEstimate(
            alpha=alpha, n_trials=n_trials, n_exited=counts["exited"],
            n_diverged=counts["diverged"], estimate=est, ci_low=lo, ci_high=hi))
    order = np.argsort([e.alpha for e in estimates])
    violations = []
    for a, b in zip(order[:-1], order[1:]):
        lo_a, hi_a = estimates[a].ci_low, estimates[a].ci_high
        lo_b, hi_b = estimates[b].ci_low, estimates[b].ci_high
        nonincreasing = estimates[b].estimate <= estimates[a].estimate
        overlap = lo_b <= hi_a and lo_a <= hi_b
        if not (nonincreasing or overlap):
            violations.append((estimates[a].alpha, estimates[b].alpha))
    return ExitProbabilityReport(
        estimates=tuple(estimates), monotone_within_ci=not violations,
        violating_pairs=tuple(violations))


# --------------------------------------------------------------------------
# exit-cohort decomposition of the mean gap


def cohort_split(gap_matrix: np.ndarray, exited: np.ndarray):
    """Split the ensemble mean gap curve into stayed/exited cohort contributions.

    gap_matrix is (n_traj, n_times); both returned curves are normalized by
    the full ensemble size, so they sum to the unconditional mean curve.
    """
    gap_matrix = np.asarray(gap_matrix, dtype=float)
    exited = np.asarray(exited, dtype=bool)
    if gap_matrix.ndim != 2 or exited.shape != (gap_matrix.shape[0],):
        raise ValueError("need (n_traj, n_times) gaps and matching exit flags")
    n = gap_matrix.shape[0]
    stayed = gap_matrix[~exited].sum(axis=0) / n
    left = gap_matrix[exited].sum(axis=0) / n
    return stayed, left, int((~exited).sum()), int(exited.sum())


def exit_cohort_decomposition(by_alpha: dict, q: float) -> dict:
    """Across an alpha grid, decompose the final mean gap by exit status and
    fit the alpha-scaling of the exited-cohort term.

    by_alpha maps alpha -> (gap_matrix, exited flags). The exited cohort's
    contribution is predicted to shrink with alpha (reference exponent -1/q
    for any q > 1); the fitted log-log slope is reported, not asserted, and
    alphas whose exited cohort is empty are flagged and excluded from the fit.
    """
    if q <= 1:
        raise ValueError(f"q must exceed 1, got {q}")
    entries = []
    for alpha in sorted(by_alpha):
        gap_matrix, exited = by_alpha[alpha]
        stayed, left, n_stay, n_exit = cohort_split(gap_matrix, exited)
        entries.append({
            "alpha": float(alpha),
            "stayed_term": float(stayed[-1]),
            "exited_term": float(left[-1]),
            "n_stayed": n_stay,
            "n_exited": n_exit,
            "exited_cohort_empty": n_exit == 0,
            "stayed_cohort_empty": n_stay == 0,
        })
    pts = [(e["alpha"], e["exited_term"]) for e in entries
           if e["exited_term"] > 0.0]
    if len(pts) >= 2:
        la = np.log([p[0] for p in pts])
        lt = np.log([p[1] for p in pts])
        slope = float(np.polyfit(la, lt, 1)[0])
    else:
        slope = math.nan
    return {
        "entries": entries,
        "fitted_alpha_slope": slope,
        "reference_exponent": -1.0 / q,
        "slope_nonpositive": (not math.isnan(slope)) and slope <= 0.0,
    }


# --------------------------------------------------------------------------
# bound report


@dataclass(frozen=True)
class BoundEntry:
    name: str
    value: float
    inputs: dict
    tags: dict
    observed: float | None = None
    satisfied: bool | None = None
    vacuous: bool = False

    def to_json_dict(self) -> dict:
        return {
            "name": self.name, "value": self.value, "inputs": self.inputs,
            "tags": self.tags, "observed": self.observed,
            "satisfied": self.satisfied, "vacuous": self.vacuous,
        }


@dataclass(frozen=True)
class BoundReport:
    entries: tuple[BoundEntry, ...] = field(default_factory=tuple)

    def primary(self, name: str) -> BoundEntry:
        for e in self.entries:
            if e.name == name and e.tags.get("primary"):
                return e
        raise KeyError(name)

    def to_json_dict(self) -> dict:
        return {"bounds": [e.to_json_dict() for e in self.entries]}


_MU_CONVENTIONS = ("averaged", "per_sample")
_RATE_CONVENTIONS = ("eigenvalue", "sqrt_eigenvalue")


def _constants(convention: str, n_samples: int) -> tuple[float, float]:
    if convention == "averaged":
        return 2.0 / n_samples, 2.0 / n_samples
    return 2.0, 2.0


def build_bound_report(*, alpha: float, n_samples: int, gap0: float,
                       lambda_sq: float, hstar_norm_sq: float,
                       horizon: float, exit_radius: float | None = None,
                       frob_dh0: float | None = None,
                       observed: dict | None = None) -> BoundReport:
    """Evaluate every closed-form bound at t = horizon under all convention
    combinations.

    observed may carry keys {"final_gap", "final_dist_sq", "exit_freq_ci_low",
    "final_coupling_gap"}; each is compared against the bound value of the
    matching entry (satisfied = bound >= observed), on the primary variant
    only. The exit bound needs exit_radius and frob_dh0; those entries are
    omitted when either is missing.
    """
    observed = observed or {}
    entries: list[BoundEntry] = []
    for mu_conv in _MU_CONVENTIONS:
        mu, lip = _constants(mu_conv, n_samples)
        for rate_conv in _RATE_CONVENTIONS:
            rate = lambda_sq if rate_conv == "eigenvalue" else math.sqrt(lambda_sq)
            primary = mu_conv == "averaged" and rate_conv == "eigenvalue"
            tags = {"mu_convention": mu_conv, "rate_convention": rate_conv,
                    "primary": primary}

            def _entry(name, value, inputs, observed_key, compare="le"):
                obs = observed.get(observed_key) if primary else None
                sat = None
                if obs is not None:
                    sat = bool(obs <= value) if compare == "le" else bool(obs >= value)
                entries.append(BoundEntry(
                    name=name, value=float(value), inputs=inputs, tags=dict(tags),
                    observed=None if obs is None else float(obs), satisfied=sat,
                    vacuous=name == "exit_probability" and value > 1.0))

            _entry("gap_decay",
                   gap_decay_bound(gap0, mu, rate, horizon),
                   {"gap0": gap0, "mu": mu, "lambda_sq": rate, "t": horizon},
                   "final_gap")
            _entry("minimizer_distance",
                   minimizer_distance_bound(lip, mu, hstar_norm_sq, rate, horizon),
                   {"lip_grad": lip, "mu": mu, "hstar_norm_sq": hstar_norm_sq,
                    "lambda_sq": rate, "t": horizon},
                   "final_dist_sq")
            _entry("linearization_error",
                   linearization_error_bound(lip, mu, math.sqrt(hstar_norm_sq),
                                             rate, horizon),
                   {"lip_grad": lip, "mu": mu,
                    "hstar_norm": math.sqrt(hstar_norm_sq),
                    "lambda_sq": rate, "t": horizon},
                   "final_coupling_gap")
            if exit_radius is not None and frob_dh0 is not None:
                _entry("exit_probability",
                       exit_probability_bound(alpha, exit_radius, frob_dh0,
                                              lip, mu, hstar_norm_sq, rate),
                       {"alpha": alpha, "radius": exit_radius,
                        "frob_dh0": frob_dh0, "lip_grad": lip, "mu": mu,
                        "hstar_norm_sq": hstar_norm_sq, "lambda_sq": rate},
                       "exit_freq_ci_low")
    return BoundReport(entries=tuple(entries))
