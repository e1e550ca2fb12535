"""Pairwise Hessian estimate, sparse inverse via row-wise l1 programs, and
the one-step debiased coefficient estimate.

The inverse-Hessian surrogate W solves, row by row,

    min ||w||_1   s.t.  ||J w - e_k||_inf <= gamma,

a linear program in 2p nonnegative variables (J is symmetric, so rows of W
against J coincide with the row-oriented constraint ||W J - I||_max). The
possibly asymmetric solution is symmetrized entrywise by keeping whichever
of w_ij, w_ji has smaller magnitude.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .kernels import LossConfig, loss_prime, loss_second
from .solver import Dataset, FitResult, _row_blocks

__all__ = [
    "HessianEstimate",
    "PrecisionEstimate",
    "DebiasedResult",
    "hessian",
    "default_gamma",
    "clime_rows",
    "symmetrize_min_magnitude",
    "debias",
    "pair_score_vector",
]


@dataclass
class HessianEstimate:
    """Pair-averaged second-derivative matrix; exactly symmetric."""

    J_hat: np.ndarray


@dataclass
class PrecisionEstimate:
    W_hat: np.ndarray
    W_star: np.ndarray
    gamma_n: float
    max_violation: float
    row_gammas: np.ndarray = field(default=None, repr=False)
    inflated_rows: list = field(default_factory=list)


@dataclass
class DebiasedResult:
    beta_tilde: np.ndarray
    correction: np.ndarray
    s_vec_diag: np.ndarray


def hessian(data: Dataset, cfg: LossConfig, residuals) -> HessianEstimate:
    """{n(n-1)}^-1 sum_{i!=j} L_h''(r_i - r_j)(X_i - X_j)(X_i - X_j)'.

    Assembled as 2 X' (diag(rowsums) - B) X with B the zero-diagonal matrix
    of second-derivative values, which is the same pair sum in O(n^2 p + n p^2)
    work; the result is symmetrized exactly.
    """
    r = np.asarray(residuals, dtype=float).reshape(-1)
    n, p = data.n, data.p
    if r.shape[0] != n:
        raise ValueError(f"residuals have length {r.shape[0]}, expected n={n}")
    X = data.X
    H = np.zeros((p, p))
    for blk in _row_blocks(n):
        b = loss_second(cfg, r[blk, None] - r[None, :])
        idx = np.arange(blk.start, blk.stop)
        b[idx - blk.start, idx] = 0.0
        H += X[blk].T @ (b.sum(axis=1)[:, None] * X[blk]) - (X[blk].T @ b) @ X
    H *= 2.0 / (n * (n - 1))
    return HessianEstimate(J_hat=(H + H.T) / 2.0)


def default_gamma(J: HessianEstimate, n: int, scale: float = 0.25) -> float:
    """Data-driven constraint level: scale * sqrt(log p / n) * mean diagonal.

    The constant was calibrated once on pilot coverage runs (larger values
    over-shrink W and under-correct; smaller ones let the noisy inverse
    through) and is exposed for override.
    """
    p = J.J_hat.shape[0]
    return scale * math.sqrt(math.log(p) / n) * float(np.trace(J.J_hat)) / p


def _solve_row(J, k, gamma, options, retries=4):
    """One row LP, doubling gamma on infeasibility up to `retries` times."""
    p = J.shape[0]
    c = np.ones(2 * p)
    block = np.hstack([J, -J])
    A_ub = np.vstack([block, -block])
    e = np.zeros(p)
    e[k] = 1.0
    g = gamma
    for attempt in range(retries + 1):
        b_ub = np.concatenate([g + e, g - e])
        res = linprog(
            c, A_ub=A_ub, b_ub=b_ub, bounds=(0, None), method="highs",
            options=options,
        )
        if res.status == 0:
            w = res.x[:p] - res.x[p:]
            return w, g, attempt > 0
        g *= 2.0
    raise RuntimeError(
        f"row {k}: constraint infeasible even after inflating gamma to {g / 2:g}"
    )


def clime_rows(
    J: HessianEstimate,
    gamma: float,
    threads: int = 1,
    tol: float | None = None,
    max_iter: int | None = None,
) -> PrecisionEstimate:
    """Solve the p independent row programs and symmetrize.

    Rows that are infeasible at the requested gamma are retried with gamma
    doubled (up to 4 times); any inflation is recorded in inflated_rows and
    reflected in the reported gamma_n, which is the largest level used.
    tol / max_iter are passed to the LP solver as its feasibility tolerance
    and iteration cap.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    options = {}
    if tol is not None:
        options["primal_feasibility_tolerance"] = float(tol)
    if max_iter is not None:
        options["maxiter"] = int(max_iter)
    Jm = J.J_hat
    p = Jm.shape[0]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(lambda k: _solve_row(Jm, k, gamma, options), range(p)))
    else:
        rows = [_solve_row(Jm, k, gamma, options) for k in range(p)]
    W = np.vstack([w for w, _, _ in rows])
    row_gammas = np.array([g for _, g, _ in rows])
    inflated = [k for k, (_, _, f) in enumerate(rows) if f]
    W_star = symmetrize_min_magnitude(W)
    max_violation = float(np.max(np.abs(W @ Jm - np.eye(p))))
    return PrecisionEstimate(
        W_hat=W,
        W_star=W_star,
        gamma_n=float(row_gammas.max()),
        max_violation=max_violation,
        row_gammas=row_gammas,
        inflated_rows=inflated,
    )


def symmetrize_min_magnitude(W: np.ndarray) -> np.ndarray:
    """Entrywise rule: keep w_ij when |w_ij| <= |w_ji|, else w_ji."""
    return np.where(np.abs(W) <= np.abs(W.T), W, W.T)


def pair_score_vector(data: Dataset, cfg: LossConfig, residuals) -> np.ndarray:
    """{n(n-1)}^-1 sum_{i!=j} L_h'(r_i - r_j)(X_i - X_j)."""
    r = np.asarray(residuals, dtype=float).reshape(-1)
    n = data.n
    if r.shape[0] != n:
        raise ValueError(f"residuals have length {r.shape[0]}, expected n={n}")
    rows = np.empty(n)
    cols = np.zeros(n)
    for blk in _row_blocks(n):
        a = loss_prime(cfg, r[blk, None] - r[None, :])
        rows[blk] = a.sum(axis=1)
        cols += a.sum(axis=0)
    return (data.X.T @ (rows - cols)) / (n * (n - 1))


def debias(
    fit: FitResult, prec: PrecisionEstimate, data: Dataset, cfg: LossConfig
) -> DebiasedResult:
    """One-step correction: beta_hat + W* times the pair-averaged score.

    The symmetrized W* is used for the correction; the studentization
    diagonal is read off W_hat (identical to the diagonal of W*).
    """
    score = pair_score_vector(data, cfg, fit.residuals)
    correction = prec.W_star @ score
    return DebiasedResult(
        beta_tilde=fit.beta_hat + correction,
        correction=correction,
        s_vec_diag=np.diag(prec.W_hat).copy(),
    )
