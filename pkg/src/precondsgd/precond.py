"""Preconditioners and their scalar constants.

Idealized preconditioners built from the exact second-moment oracle
A(x) = (G(x) + eps I)^exponent, their EMA-estimated counterparts
Ghat_t = beta Ghat_{t-1} + (1-beta) g g^T, and calculators for the
(nu1, nu2, c3, c4, lambda_-) constants that the convergence rates are
expressed in, for the identity / full-matrix / diagonal variants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DimMismatchError,
    InvalidParamError,
    MissingOracleError,
    SingularMatrixError,
)
from .linalg import SymMatrix, sym_power

IDENTITY = "identity"
FULL_MATRIX = "full_matrix"
DIAGONAL = "diagonal"
COVARIANCE_FULL_MATRIX = "covariance_full_matrix"
VARIANTS = (IDENTITY, FULL_MATRIX, DIAGONAL, COVARIANCE_FULL_MATRIX)

# Exponent -1 exists only for the instability demonstration; -1/2 is the
# stable adaptive-method exponent.
ALLOWED_EXPONENTS = (-0.5, -1.0)


@dataclass(frozen=True)
class PreconditionerKind:
    """Which preconditioner to build, its regularizer, and its exponent."""

    variant: str = FULL_MATRIX
    epsilon: float = 0.0
    exponent: float = -0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidParamError(f"unknown preconditioner variant {self.variant!r}")
        if self.epsilon < 0.0:
            raise InvalidParamError("epsilon must be nonnegative")
        if self.exponent not in ALLOWED_EXPONENTS:
            raise InvalidParamError(f"exponent must be one of {ALLOWED_EXPONENTS}")


@dataclass(frozen=True)
class PreconditionerConstants:
    """Scalar summary (nu1, nu2, c3, c4, lambda_-, M) of a preconditioner.

    nu1/nu2 relate ||A v|| to ||A^1/2 v||, c3 bounds the rescaled noise
    magnitude E||A g||^2, c4 lower-bounds lambda_min(A G A^T), lambda_-
    lower-bounds lambda_min(A). M_bound is the uniform step bound ||A g||,
    problem-specific; calculators default it to sqrt(c3), which is the
    scale it should have.
    """

    nu1: float
    nu2: float
    c3: float
    c4: float
    lambda_minus: float
    M_bound: float


@dataclass(frozen=True)
class EmaEstimatorState:
    """Functional EMA accumulator for Ghat; updates return a new state."""

    g_hat: np.ndarray
    beta: float
    steps_seen: int = 0
    bias_corrected: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise InvalidParamError("beta must be in [0, 1)")

    @classmethod
    def zeros(cls, dim: int, beta: float, bias_corrected: bool = False) -> "EmaEstimatorState":
        g = np.zeros((dim, dim))
        g.setflags(write=False)
        return cls(g_hat=g, beta=beta, steps_seen=0, bias_corrected=bias_corrected)

    @property
    def dim(self) -> int:
        return self.g_hat.shape[0]

    def with_beta(self, beta: float) -> "EmaEstimatorState":
        return replace(self, beta=beta)


def ema_update(state: EmaEstimatorState, g) -> EmaEstimatorState:
    """One EMA step: Ghat <- beta Ghat + (1-beta) g g^T."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (state.dim,):
        raise DimMismatchError(f"gradient shape {g.shape} vs estimator dim {state.dim}")
    new = state.beta * state.g_hat + (1.0 - state.beta) * np.outer(g, g)
    new.setflags(write=False)
    return replace(state, g_hat=new, steps_seen=state.steps_seen + 1)


def _effective_g_hat(state: EmaEstimatorState) -> np.ndarray:
    if state.bias_corrected and state.steps_seen > 0:
        return state.g_hat / (1.0 - state.beta**state.steps_seen)
    return state.g_hat


def estimated_A(state: EmaEstimatorState, kind: PreconditionerKind) -> SymMatrix:
    """Preconditioner (Ghat + eps I)^exponent from the current EMA state."""
    if kind.variant == IDENTITY:
        return SymMatrix.identity(state.dim)
    g_hat = _effective_g_hat(state)
    if kind.variant == DIAGONAL:
        d = np.diag(g_hat) + kind.epsilon
        if np.any(d <= 0.0):
            raise SingularMatrixError("diagonal of Ghat + eps not positive")
        return SymMatrix.from_diagonal(d**kind.exponent)
    # full_matrix and covariance_full_matrix share the matrix-power form;
    # in covariance mode the state is fed difference-of-gradient samples.
    reg = SymMatrix(g_hat + kind.epsilon * np.eye(state.dim))
    return sym_power(reg, kind.exponent, 0.0)


def idealized_A(problem, kind: PreconditionerKind, x) -> SymMatrix:
    """Oracle preconditioner A(x) built from the exact second moment.

    Identity needs no oracle; the other variants require exact_G. The
    covariance variant uses Sigma = G - grad grad^T in place of G.
    """
    if kind.variant == IDENTITY:
        return SymMatrix.identity(problem.dim)
    if not problem.has_exact_g:
        raise MissingOracleError("idealized preconditioner needs an exact_G oracle")
    G = problem.exact_G(x)
    if kind.variant == DIAGONAL:
        d = G.diagonal() + kind.epsilon
        if np.any(d <= 0.0):
            raise SingularMatrixError("diagonal of G + eps not positive")
        return SymMatrix.from_diagonal(d**kind.exponent)
    if kind.variant == COVARIANCE_FULL_MATRIX:
        g = problem.grad(x)
        base = G.a - np.outer(g, g)
    else:
        base = G.a
    reg = SymMatrix(base + kind.epsilon * np.eye(problem.dim))
    return sym_power(reg, kind.exponent, 0.0)


def _require_exact_g(problem, x) -> SymMatrix:
    if not problem.has_exact_g:
        raise MissingOracleError("constants need an exact_G oracle")
    return problem.exact_G(x)


def constants_identity(problem, x, m_bound: float | None = None) -> PreconditionerConstants:
    """Constants for A = I: nu1 = nu2 = lambda_- = 1, c3 = tr G, c4 = lambda_min(G)."""
    G = _require_exact_g(problem, x)
    c3 = float(np.trace(G.a))
    return PreconditionerConstants(
        nu1=1.0,
        nu2=1.0,
        c3=c3,
        c4=G.lambda_min(),
        lambda_minus=1.0,
        M_bound=math.sqrt(c3) if m_bound is None else m_bound,
    )


def constants_full_matrix(problem, x, eps: float, m_bound: float | None = None) -> PreconditionerConstants:
    """Constants for A = (G + eps I)^-1/2."""
    G = _require_exact_g(problem, x)
    lmin, lmax = G.lambda_min(), G.lambda_max()
    if lmin + eps <= 0.0:
        raise SingularMatrixError("lambda_min(G) + eps must be positive")
    nu = (lmin + eps) ** -0.5
    c3 = problem.dim * lmax / (eps + lmax)
    return PreconditionerConstants(
        nu1=nu,
        nu2=nu,
        c3=c3,
        c4=lmin / (lmin + eps),
        lambda_minus=(lmax + eps) ** -0.5,
        M_bound=math.sqrt(c3) if m_bound is None else m_bound,
    )


def constants_diagonal(problem, x, eps: float, m_bound: float | None = None) -> PreconditionerConstants:
    """Constants for A = diag(G + eps)^-1/2 (coincides with full-matrix for diagonal G)."""
    G = _require_exact_g(problem, x)
    dg = G.diagonal()
    mn, mx = float(dg.min()), float(dg.max())
    if mn + eps <= 0.0 or mn <= 0.0:
        raise SingularMatrixError("diagonal entries of G (+ eps) must be positive")
    # lambda_min(G diag(G)^-1) via the similar symmetric D^-1/2 G D^-1/2.
    dinvsqrt = 1.0 / np.sqrt(dg)
    normalized = G.a * np.outer(dinvsqrt, dinvsqrt)
    corr_lmin = float(np.linalg.eigvalsh(normalized)[0])
    c3 = problem.dim * mx / (eps + mx)
    return PreconditionerConstants(
        nu1=(eps + mn) ** -0.5,
        nu2=(eps + mn) ** -0.5,
        c3=c3,
        c4=corr_lmin * mn / (eps + mn),
        lambda_minus=(eps + mx) ** -0.5,
        M_bound=math.sqrt(c3) if m_bound is None else m_bound,
    )


def second_order_complexity_factor(k: PreconditionerConstants) -> float:
    """The preconditioner-dependent factor nu1^4 nu2^4 c3^4 / (lambda_-^10 c4^4)."""
    for name in ("nu1", "nu2", "c3", "c4", "lambda_minus"):
        if getattr(k, name) <= 0.0:
            raise InvalidParamError(f"constant {name} must be positive")
    return (k.nu1**4 * k.nu2**4 * k.c3**4) / (k.lambda_minus**10 * k.c4**4)


def estimate_m_bound(problem, kind: PreconditionerKind, x, n_samples: int, rng) -> float:
    """Monte-Carlo estimate of the uniform step bound M = max ||A g||.

    Returns the empirical maximum over ``n_samples`` draws with the
    idealized preconditioner at x. The theorems assume a deterministic
    bound; for unbounded noise this is a working surrogate on the same
    scale as sqrt(c3).
    """
    if n_samples < 1:
        raise InvalidParamError("n_samples must be >= 1")
    A = idealized_A(problem, kind, x).a
    gs = problem.sample_grad_batch(x, n_samples, rng)
    return float(np.max(np.linalg.norm(gs @ A.T, axis=1)))
