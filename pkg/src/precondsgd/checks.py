"""Inequality oracles for the computable auxiliary lemmas.

Each oracle evaluates both sides of one inequality exactly (or by Monte
Carlo where the statement is an expectation) and returns an
InequalityCase, so property tests can assert lhs <= rhs on randomized
inputs. Deterministic cases carry only rounding slack; Monte-Carlo cases
build a 4-standard-error margin into the right-hand side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParamError, MissingOracleError, SingularMatrixError
from .linalg import SymMatrix, sym_power

# Relative slack for deterministic inequalities: rounding only.
REL_SLACK = 1e-12


@dataclass(frozen=True)
class InequalityCase:
    """One evaluated inequality lhs <= rhs with its inputs for diagnostics."""

    name: str
    lhs: float
    rhs: float
    inputs: dict = field(default_factory=dict)

    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + REL_SLACK)


def series_bounds(beta_pos: float, t: int) -> tuple[InequalityCase, InequalityCase, InequalityCase]:
    """Three geometric-series bounds for growth factor (1 + beta_pos).

    sum (1+b)^(t-i)       <= 2 b^-1 (1+b)^t
    sum (1+b)^(t-i) * i   <= 2 b^-2 (1+b)^t
    sum (1+b)^(t-i) * i^2 <= 6 b^-3 (1+b)^t

    ``beta_pos`` is the growth-factor argument of these sums, distinct
    from the EMA parameter beta.
    """
    if not 0.0 < beta_pos < 1.0:
        raise InvalidParamError("beta_pos must be in (0, 1)")
    if t < 1:
        raise InvalidParamError("t must be >= 1")
    i = np.arange(1, t + 1, dtype=np.float64)
    pow_terms = (1.0 + beta_pos) ** (t - i)
    grow = (1.0 + beta_pos) ** t
    inputs = {"beta_pos": beta_pos, "t": t}
    return (
        InequalityCase("series_sum", float(pow_terms.sum()), 2.0 / beta_pos * grow, inputs),
        InequalityCase("series_sum_i", float((pow_terms * i).sum()), 2.0 / beta_pos**2 * grow, inputs),
        InequalityCase("series_sum_i2", float((pow_terms * i * i).sum()), 6.0 / beta_pos**3 * grow, inputs),
    )


def quadratic_sqrt_bound(A: float, B: float, C: float, z: float) -> InequalityCase:
    """sqrt(A z^2 + B z + C) <= sqrt(A) (2z + B/(2A) + sqrt(C/A)) for nonneg inputs."""
    if A <= 0.0:
        raise InvalidParamError("A must be positive")
    if B < 0.0 or C < 0.0 or z < 0.0:
        raise InvalidParamError("B, C, z must be nonnegative")
    lhs = math.sqrt(A * z**2 + B * z + C)
    rhs = math.sqrt(A) * (2.0 * z + B / (2.0 * A) + math.sqrt(C / A))
    return InequalityCase("quadratic_sqrt", lhs, rhs, {"A": A, "B": B, "C": C, "z": z})


def exp_growth_bound(x: float, C_target: float) -> InequalityCase:
    """(1+x)^t >= C for t = ceil(2 log(C) / x), 0 < x < 1, C > 1."""
    if not 0.0 < x < 1.0:
        raise InvalidParamError("x must be in (0, 1)")
    if C_target <= 1.0:
        raise InvalidParamError("C_target must be > 1")
    t = max(1, math.ceil(2.0 * math.log(C_target) / x))
    return InequalityCase(
        "exp_growth", C_target, (1.0 + x) ** t, {"x": x, "C_target": C_target, "t": t}
    )


def inexact_noise_amplification(
    c3: float, dim: int, rng, n_samples: int = 4000
) -> InequalityCase:
    """Monte-Carlo check that a mu-perturbed preconditioner keeps E||Ahat g||^2 <= 9/4 c3.

    Builds a random positive-definite A, a symmetric perturbation of norm
    mu < lambda_min(A)/2, and a Gaussian g whose covariance is scaled so
    that E||A g||^2 equals c3 exactly; the right-hand side carries a
    4-standard-error margin.
    """
    if c3 <= 0.0:
        raise InvalidParamError("c3 must be positive")
    if dim < 1 or n_samples < 10:
        raise InvalidParamError("need dim >= 1 and n_samples >= 10")
    A = _random_spd(dim, rng, lambda_min=0.5, lambda_max=2.0)
    lam_min = float(np.linalg.eigvalsh(A)[0])
    mu = rng.uniform(0.0, 0.5) * lam_min / 2.0 * 0.999
    E = _random_sym_with_norm(dim, mu, rng)
    A_hat = A + E

    cov = _random_spd(dim, rng, lambda_min=0.2, lambda_max=1.0)
    # Scale the gradient covariance so trace(A cov A) = c3 exactly.
    cov *= c3 / float(np.trace(A @ cov @ A))
    factor = np.linalg.cholesky(cov)
    g = rng.standard_normal((n_samples, dim)) @ factor.T
    sq = np.sum((g @ A_hat.T) ** 2, axis=1)
    mean = float(sq.mean())
    se = float(sq.std(ddof=1)) / math.sqrt(n_samples)
    return InequalityCase(
        "inexact_noise_amplification",
        mean,
        2.25 * c3 + 4.0 * se,
        {"c3": c3, "mu": mu, "dim": dim, "n_samples": n_samples},
    )


def negative_eigenvalue_bound(A: SymMatrix, H: SymMatrix) -> InequalityCase:
    """A^1/2 H A^1/2 has a negative eigenvalue of magnitude >= lambda_min(A)|lambda_min(H)|."""
    if A.lambda_min() <= 0.0:
        raise InvalidParamError("A must be positive definite")
    if H.lambda_min() >= 0.0:
        raise InvalidParamError("H must have a negative eigenvalue")
    a_half = sym_power(A, 0.5)
    conj = a_half.a @ H.a @ a_half.a
    most_negative = float(np.linalg.eigvalsh(conj)[0])
    return InequalityCase(
        "negative_eigenvalue",
        A.lambda_min() * abs(H.lambda_min()),
        abs(most_negative),
        {"dim": A.dim},
    )


def isotropy_covariance_check(problem, x, n_samples: int, rng) -> float:
    """Max entrywise gap between Cov(G^-1/2 (g - grad)) and I - G^-1/2 grad grad^T G^-1/2.

    Raises SingularMatrixError when G(x) is numerically singular (for a
    noiseless problem the rescaling is undefined).
    """
    if not problem.has_exact_g:
        raise MissingOracleError("isotropy check needs an exact_G oracle")
    if n_samples < 2:
        raise InvalidParamError("n_samples must be >= 2")
    G = problem.exact_G(x)
    w = G.eigendecomposition().eigenvalues
    if w[0] <= 1e-12 * max(1.0, w[-1]):
        raise SingularMatrixError("G(x) is numerically singular")
    g_inv_half = sym_power(G, -0.5).a
    grad = problem.grad(x)
    u = g_inv_half @ grad
    closed_form = np.eye(problem.dim) - np.outer(u, u)
    samples = problem.sample_grad_batch(x, n_samples, rng)
    xi = (samples - grad) @ g_inv_half.T
    empirical = xi.T @ xi / n_samples  # E[xi] = 0, so the raw second moment
    return float(np.max(np.abs(empirical - closed_form)))


def _random_spd(dim: int, rng, lambda_min: float, lambda_max: float) -> np.ndarray:
    """Random SPD matrix whose spectrum spans [lambda_min, lambda_max] exactly."""
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    if dim == 1:
        lam = np.array([lambda_min])
    else:
        lam = np.sort(rng.uniform(lambda_min, lambda_max, size=dim))
        lam[0], lam[-1] = lambda_min, lambda_max
    return (q * lam) @ q.T


def _random_sym_with_norm(dim: int, norm: float, rng) -> np.ndarray:
    """Random symmetric matrix with the given operator norm (zero norm allowed)."""
    raw = rng.standard_normal((dim, dim))
    sym = (raw + raw.T) / 2.0
    cur = float(np.max(np.abs(np.linalg.eigvalsh(sym))))
    if cur == 0.0:
        return np.zeros((dim, dim))
    return sym * (norm / cur)
