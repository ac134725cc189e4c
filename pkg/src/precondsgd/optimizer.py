"""Optimization loops and theorem-driven parameter calculators.

Preconditioned SGD with an oracle preconditioner; full-matrix / diagonal
RMSProp with the EMA-estimated preconditioner; the burn-in variant; the
increasing-stepsize variant that takes a large step every t_thresh
iterations and, in estimated mode, hallucinates interpolated samples to
keep the estimate accurate. Also the first-order and second-order
stepsize/iteration calculators and a stationarity check.

A run is strictly sequential and consumes a single caller-owned RNG in
program order, so identical (problem, hyperparameters, seed) triples
produce bitwise-identical trajectories.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParamError, MissingOracleError, NonFiniteError, SingularMatrixError
from .estimation import _ceil_int, beta_schedule, burn_in_length
from .precond import (
    COVARIANCE_FULL_MATRIX,
    DIAGONAL,
    FULL_MATRIX,
    IDENTITY,
    PreconditionerConstants,
    PreconditionerKind,
)
from .problems import ProblemSmoothness, StochasticProblem

STEP_NORMAL = "normal"
STEP_LARGE = "large"
STEP_BURNIN = "burnin"
STEP_HALLUCINATED = "hallucinated"

# Abort threshold for the divergence guard; the exponent -1 instability
# demo relies on it to terminate cleanly.
DIVERGENCE_F_LIMIT = 1e100


@dataclass
class HyperParams:
    """Everything governing one optimizer run.

    eta is the base stepsize, r the occasional large stepsize applied
    every t_thresh steps, W the burn-in length, S the hallucination
    divisor (S+1 interpolated samples per large step), omega the
    logarithmic threshold constant and K_const the universal constant of
    the second-order analysis. f_thresh/g_thresh are carried along when
    produced by the second-order calculator.
    """

    eta: float
    beta: float | None = None
    epsilon: float = 0.0
    r: float | None = None
    t_thresh: int | None = None
    W: int = 0
    S: int | None = None
    tau: float | None = None
    delta_prob: float | None = None
    omega: float = 5.0
    K_const: float = 0.125
    f_thresh: float | None = None
    g_thresh: float | None = None

    def __post_init__(self):
        # eta = 0 is allowed as a degenerate run (the trajectory stays put).
        if self.eta < 0.0:
            raise InvalidParamError("eta must be nonnegative")
        if self.beta is not None and not 0.0 <= self.beta < 1.0:
            raise InvalidParamError("beta must be in [0, 1)")
        if self.epsilon < 0.0:
            raise InvalidParamError("epsilon must be nonnegative")
        if self.t_thresh is not None and self.t_thresh < 1:
            raise InvalidParamError("t_thresh must be >= 1")
        if self.W < 0:
            raise InvalidParamError("W must be >= 0")
        if self.S is not None and self.S < 1:
            raise InvalidParamError("S must be >= 1")
        if not 0.0 < self.K_const < 1.0:
            raise InvalidParamError("K_const must be in (0, 1)")


@dataclass
class TrajectoryRecord:
    """State logged at one event of a run.

    ``iteration`` is a strictly increasing event index: burn-in records
    occupy -W..-1 and the first optimization step is 0. When hallucinated
    records interleave (estimated large-step mode) they consume indices
    too, so the index equals the optimization step count only in runs
    without hallucination.
    """

    iteration: int
    x: np.ndarray
    f_val: float
    grad_norm: float
    step_kind: str
    lambda_min_h: float | None = None
    est_error: float | None = None


@dataclass
class StationarityReport:
    """Second-order stationarity check at a point."""

    tau_g: float
    tau_h: float
    is_stationary: bool
    grad_norm: float
    lambda_min_h: float


class IdealizedPreconditioner:
    """A(x) from the exact second-moment oracle, applied per step."""

    def __init__(self, kind: PreconditionerKind):
        self.kind = kind


class EstimatedPreconditioner:
    """A from the EMA estimate Ghat, updated with each sampled gradient."""

    def __init__(self, kind: PreconditionerKind, bias_corrected: bool = False):
        self.kind = kind
        self.bias_corrected = bias_corrected


def hessian_tolerance(rho: float, tau_g: float) -> float:
    """The conventional second tolerance sqrt(rho * tau_g)."""
    if rho < 0 or tau_g < 0:
        raise InvalidParamError("rho and tau_g must be nonnegative")
    return math.sqrt(rho * tau_g)


class _EmaTracker:
    """Internal mutable EMA state for the run loop.

    Diagonal variants (and any 1-d matrix variant, which coincides) keep
    only the diagonal; matrix variants keep the full Ghat. The arithmetic
    matches the functional ``ema_update``/``estimated_A`` pair entry for
    entry.
    """

    def __init__(self, dim: int, kind: PreconditionerKind, bias_corrected: bool):
        self.kind = kind
        self.dim = dim
        self.bias_corrected = bias_corrected
        self.steps_seen = 0
        self.vec_mode = kind.variant == DIAGONAL or dim == 1
        if self.vec_mode:
            self.g_diag = np.zeros(dim)
        else:
            self.g_mat = np.zeros((dim, dim))
        # Product of per-step betas' complement, for bias correction under
        # a fixed beta; schedules disable correction (checked on update).
        self._beta_prod = 1.0

    def update(self, g: np.ndarray, beta: float) -> None:
        if self.bias_corrected:
            self._beta_prod *= beta
        if self.vec_mode:
            self.g_diag = beta * self.g_diag + (1.0 - beta) * g * g
        else:
            self.g_mat = beta * self.g_mat + (1.0 - beta) * np.outer(g, g)
        self.steps_seen += 1

    def _correction(self) -> float:
        if self.bias_corrected and self.steps_seen > 0 and self._beta_prod < 1.0:
            return 1.0 - self._beta_prod
        return 1.0

    def a_diag(self) -> np.ndarray:
        lam = self.g_diag / self._correction() + self.kind.epsilon
        if np.any(lam <= 0.0):
            raise SingularMatrixError("Ghat diagonal + eps not positive")
        return lam**self.kind.exponent

    def a_matrix(self):
        w, v = np.linalg.eigh(self.g_mat / self._correction())
        lam = w + self.kind.epsilon
        if np.any(lam <= 0.0):
            raise SingularMatrixError("lambda_min(Ghat) + eps not positive")
        return v, lam**self.kind.exponent


def _ideal_apply(problem, kind: PreconditionerKind, x, g):
    """Idealized preconditioned direction A(x) g, with small-d fast paths."""
    if kind.variant == IDENTITY:
        return g
    if not problem.has_exact_g:
        raise MissingOracleError("idealized preconditioning needs an exact_G oracle")
    G = problem.exact_G(x)
    if kind.variant == DIAGONAL or problem.dim == 1:
        base = G.diagonal()
        if kind.variant == COVARIANCE_FULL_MATRIX:
            base = base - problem.grad(x) ** 2
        lam = base + kind.epsilon
        if np.any(lam <= 0.0):
            raise SingularMatrixError("diag(G) + eps not positive")
        return lam**kind.exponent * g
    base = G.a
    if kind.variant == COVARIANCE_FULL_MATRIX:
        gr = problem.grad(x)
        base = base - np.outer(gr, gr)
    w, v = np.linalg.eigh(base)
    lam = w + kind.epsilon
    if np.any(lam <= 0.0):
        raise SingularMatrixError("lambda_min(G) + eps not positive")
    return v @ (lam**kind.exponent * (v.T @ g))


def _ideal_a_dense(problem, kind: PreconditionerKind, x) -> np.ndarray:
    """Dense idealized A(x), for estimation-error tracking."""
    if kind.variant == IDENTITY:
        return np.eye(problem.dim)
    return _ideal_apply(problem, kind, x, np.eye(problem.dim))


def _run(
    problem: StochasticProblem,
    source,
    hp: HyperParams,
    T: int,
    rng,
    *,
    x0=None,
    burn_in: int = 0,
    large_steps: bool = False,
    eta_schedule=None,
    beta_c: float | None = None,
    log_every: int = 1,
    track_est_error: bool = False,
    lambda_min_every: int = 0,
) -> list[TrajectoryRecord]:
    if T < 1:
        raise InvalidParamError("T must be >= 1")
    if log_every < 1:
        raise InvalidParamError("log_every must be >= 1")
    dim = problem.dim
    x = np.zeros(dim) if x0 is None else np.array(x0, dtype=np.float64)
    if x.shape != (dim,) or not np.all(np.isfinite(x)):
        raise InvalidParamError("x0 must be a finite point of the problem dimension")

    estimated = isinstance(source, EstimatedPreconditioner)
    kind = source.kind
    covariance = kind.variant == COVARIANCE_FULL_MATRIX
    if estimated and kind.variant != IDENTITY and hp.beta is None and beta_c is None:
        raise InvalidParamError("estimated preconditioning needs beta or a beta schedule")
    if large_steps:
        if hp.t_thresh is None:
            raise InvalidParamError("large-step mode needs t_thresh")
        if hp.r is None or hp.r < hp.eta:
            raise InvalidParamError("large-step mode needs r >= eta")
        if estimated and hp.S is None:
            raise InvalidParamError("estimated large-step mode needs S >= 1")

    tracker = None
    if estimated and kind.variant != IDENTITY:
        tracker = _EmaTracker(dim, kind, source.bias_corrected)

    records: list[TrajectoryRecord] = []
    track_err = track_est_error and estimated and kind.variant != IDENTITY

    def current_beta(eta_t: float) -> float:
        if beta_c is not None:
            return beta_schedule(eta_t, beta_c)
        return hp.beta if hp.beta is not None else 0.0

    def draw_sample(at_x):
        g = problem.sample_grad(at_x, rng)
        if covariance and estimated:
            g2 = problem.sample_grad(at_x, rng)
            return g, (g - g2) / math.sqrt(2.0)
        return g, g

    def tracked_error(at_x) -> float | None:
        if not track_err:
            return None
        ideal = _ideal_a_dense(problem, kind, at_x)
        if tracker.vec_mode:
            return float(np.max(np.abs(tracker.a_diag() - np.diag(ideal))))
        v, avec = tracker.a_matrix()
        a_hat = (v * avec) @ v.T
        return float(np.max(np.abs(np.linalg.eigvalsh(a_hat - ideal))))

    def log(ev: int, at_x, kind_label: str, t_for_hess: int | None) -> None:
        f_val = problem.eval_f(at_x)
        if not np.isfinite(f_val) or abs(f_val) > DIVERGENCE_F_LIMIT:
            raise NonFiniteError(f"objective diverged (f={f_val}) at event {ev}", records=records)
        lam_h = None
        if (
            lambda_min_every > 0
            and t_for_hess is not None
            and t_for_hess % lambda_min_every == 0
            and problem.has_hessian
        ):
            lam_h = problem.hessian(at_x).lambda_min()
        records.append(
            TrajectoryRecord(
                iteration=ev,
                x=at_x.copy(),
                f_val=f_val,
                grad_norm=float(np.linalg.norm(problem.grad(at_x))),
                step_kind=kind_label,
                lambda_min_h=lam_h,
                est_error=tracked_error(at_x),
            )
        )

    def should_log(ev: int, is_last: bool) -> bool:
        return is_last or ev % log_every == 0

    ev = -burn_in
    # Burn-in: update the estimate at x0 without moving x.
    for _ in range(burn_in):
        if tracker is not None:
            _, upd = draw_sample(x)
            tracker.update(upd, current_beta(hp.eta))
        else:
            problem.sample_grad(x, rng)  # keep the stream aligned with estimated runs
        if should_log(ev, False):
            log(ev, x, STEP_BURNIN, None)
        ev += 1

    for t in range(T):
        eta_t = hp.eta if eta_schedule is None else eta_schedule(t)
        is_large = large_steps and t % hp.t_thresh == 0
        step_size = hp.r if is_large else eta_t

        g, upd = draw_sample(x)
        if tracker is not None:
            tracker.update(upd, current_beta(eta_t))
            if kind.variant == IDENTITY:
                direction = g
            elif tracker.vec_mode:
                direction = tracker.a_diag() * g
            else:
                v, avec = tracker.a_matrix()
                direction = v @ (avec * (v.T @ g))
        elif estimated:  # identity estimate
            direction = g
        else:
            direction = _ideal_apply(problem, kind, x, g)

        if should_log(ev, t == T - 1):
            log(ev, x, STEP_LARGE if is_large else STEP_NORMAL, t)
        ev += 1

        x_start = x
        x = x - step_size * direction
        if problem.clip_bounds is not None:
            x = np.clip(x, problem.clip_bounds[0], problem.clip_bounds[1])
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"iterate diverged at step {t}", records=records)

        if is_large and tracker is not None:
            # Hallucinate S+1 interpolated samples so the estimate keeps
            # up despite the large displacement (per-sample move <= r/S).
            for s in range(hp.S + 1):
                xs = x_start + (s / hp.S) * (x - x_start)
                _, upd = draw_sample(xs)
                tracker.update(upd, current_beta(eta_t))
                if should_log(ev, False):
                    log(ev, xs, STEP_HALLUCINATED, None)
                ev += 1

    return records


def run_preconditioned_sgd(
    problem, a_source, hp: HyperParams, T: int, rng, **opts
) -> list[TrajectoryRecord]:
    """Plain preconditioned SGD: x <- x - eta A g.

    ``a_source`` is either an IdealizedPreconditioner (oracle A(x)) or an
    EstimatedPreconditioner (EMA update then precondition, per the
    estimated algorithm's ordering).
    """
    return _run(problem, a_source, hp, T, rng, **opts)


def run_rmsprop(
    problem, hp: HyperParams, T: int, rng, kind: PreconditionerKind | None = None, **opts
) -> list[TrajectoryRecord]:
    """Full-matrix (or diagonal) RMSProp with the EMA-estimated preconditioner."""
    kind = PreconditionerKind() if kind is None else kind
    return _run(problem, EstimatedPreconditioner(kind, opts.pop("bias_corrected", False)), hp, T, rng, **opts)


def run_rmsprop_with_burnin(
    problem, hp: HyperParams, T: int, rng, kind: PreconditionerKind | None = None, **opts
) -> list[TrajectoryRecord]:
    """RMSProp preceded by hp.W estimate-only samples at x0."""
    kind = PreconditionerKind() if kind is None else kind
    source = EstimatedPreconditioner(kind, opts.pop("bias_corrected", False))
    return _run(problem, source, hp, T, rng, burn_in=hp.W, **opts)


def run_large_step_variant(
    problem, a_source, hp: HyperParams, T: int, rng, **opts
) -> list[TrajectoryRecord]:
    """Preconditioned SGD that uses stepsize r every t_thresh steps.

    In estimated mode each large step is followed by S+1 hallucinated
    samples at points interpolated between the step's endpoints, and
    hp.W burn-in samples precede the loop.
    """
    burn = hp.W if isinstance(a_source, EstimatedPreconditioner) else 0
    return _run(problem, a_source, hp, T, rng, large_steps=True, burn_in=burn, **opts)


def first_order_params(
    L: float, c3: float, lambda_minus: float, f0_minus_fstar: float, tau: float, exact: bool = True
) -> tuple[float, int]:
    """Stepsize and iteration count for first-order convergence.

    Exact preconditioner: eta = tau^2 lambda_- / (L c3) and
    T = 2 (f0 - f*) L c3 / (tau^4 lambda_-^2); the inexact variant pays
    4 sqrt(2) in the stepsize and 16x in the iteration count.
    """
    for name, v in (("L", L), ("c3", c3), ("lambda_minus", lambda_minus),
                    ("f0_minus_fstar", f0_minus_fstar), ("tau", tau)):
        if v <= 0.0:
            raise InvalidParamError(f"{name} must be positive")
    if exact:
        eta = tau**2 * lambda_minus / (L * c3)
        T = 2.0 * f0_minus_fstar * L * c3 / (tau**4 * lambda_minus**2)
    else:
        eta = tau**2 * lambda_minus / (4.0 * math.sqrt(2.0) * L * c3)
        T = 32.0 * f0_minus_fstar * L * c3 / (tau**4 * lambda_minus**2)
    return eta, max(1, _ceil_int(T))


def second_order_params(
    k: PreconditionerConstants,
    smooth: ProblemSmoothness,
    tau: float,
    delta_prob: float,
    omega: float = 5.0,
    k_const: float = 0.125,
    c_w: float = 1.0,
    beta_c: float | None = 1.0,
    epsilon: float = 0.0,
) -> HyperParams:
    """Second-order parameter settings (r, eta, f_thresh, t_thresh, W, S).

    With gamma = lambda_- sqrt(rho tau):
      r        = gamma^2 delta c4 K / (54 nu1 nu2 c3 L rho M)
      eta      = gamma^5 delta^2 c4^2 K^2 / (324 M^2 L^2 nu1^2 nu2^2 c3^2 rho^2 omega)
      f_thresh = gamma^4 delta c4^2 K^2 / (54*12 nu1^2 nu2^2 c3 L rho^2 M^2)
    plus t_thresh = ceil(omega/(eta gamma)), g_thresh = f_thresh/t_thresh,
    W = ceil(c_w eta^-2/3) and S = ceil(r/eta) so each hallucinated
    sample moves at most eta.
    """
    for name, v in (("tau", tau), ("delta_prob", delta_prob), ("omega", omega)):
        if v <= 0.0:
            raise InvalidParamError(f"{name} must be positive")
    if not 0.0 < k_const < 1.0:
        raise InvalidParamError("k_const must be in (0, 1)")
    if smooth.L is None or smooth.L <= 0.0 or smooth.rho is None or smooth.rho <= 0.0:
        raise InvalidParamError("second-order parameters need positive L and rho")
    for name in ("nu1", "nu2", "c3", "c4", "lambda_minus", "M_bound"):
        if getattr(k, name) <= 0.0:
            raise InvalidParamError(f"constant {name} must be positive")

    L, rho, M = smooth.L, smooth.rho, k.M_bound
    gamma = k.lambda_minus * math.sqrt(rho * tau)
    nn = k.nu1 * k.nu2
    r = gamma**2 * delta_prob * k.c4 * k_const / (54.0 * nn * k.c3 * L * rho * M)
    eta = (
        gamma**5
        * delta_prob**2
        * k.c4**2
        * k_const**2
        / (324.0 * M**2 * L**2 * nn**2 * k.c3**2 * rho**2 * omega)
    )
    f_thresh = (
        gamma**4
        * delta_prob
        * k.c4**2
        * k_const**2
        / (54.0 * 12.0 * nn**2 * k.c3 * L * rho**2 * M**2)
    )
    if r < eta:
        warnings.warn(
            f"second_order_params: r={r:.3g} < eta={eta:.3g}; the regime assumes small tau",
            stacklevel=2,
        )
    t_thresh = max(1, _ceil_int(omega / (eta * gamma)))
    beta = beta_schedule(eta, beta_c) if beta_c is not None else None
    return HyperParams(
        eta=eta,
        beta=beta,
        epsilon=epsilon,
        r=r,
        t_thresh=t_thresh,
        W=burn_in_length(eta, c_w),
        S=max(1, _ceil_int(r / eta)),
        tau=tau,
        delta_prob=delta_prob,
        omega=omega,
        K_const=k_const,
        f_thresh=f_thresh,
        g_thresh=f_thresh / t_thresh,
    )


def check_stationarity(problem, x, tau_g: float, tau_h: float) -> StationarityReport:
    """Is x a (tau_g, tau_h)-stationary point of the problem objective?"""
    if tau_g <= 0.0 or tau_h <= 0.0:
        raise InvalidParamError("tolerances must be positive")
    if not problem.has_hessian:
        raise MissingOracleError("stationarity check needs a Hessian oracle")
    grad_norm = float(np.linalg.norm(problem.grad(x)))
    lam = problem.hessian(x).lambda_min()
    return StationarityReport(
        tau_g=tau_g,
        tau_h=tau_h,
        is_stationary=grad_norm <= tau_g and lam >= -tau_h,
        grad_norm=grad_norm,
        lambda_min_h=lam,
    )
