"""Multiplier bootstrap for the max-norm of the corrected estimate over an
index set, and the simultaneous interval construction built on it.

Each bootstrap draw perturbs the pair-score sum with i.i.d. N(0,1) weights
e_1..e_n; because the pair term g_ij = L_h'(r_i - r_j)(X_i - X_j) is
symmetric in (i, j),

    sum_{i!=j} g_ij (e_i + e_j) = 2 sum_i e_i s_i,
    s_i = sum_{j!=i} g_ij,

so after one O(n^2 p) pass building the s_i every draw costs O(n p); no
high-dimensional vectors are resampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import LossConfig, loss_prime
from .precision import DebiasedResult, PrecisionEstimate
from .solver import Dataset, _row_blocks

__all__ = [
    "PairScoreAggregate",
    "BootstrapResult",
    "SciResult",
    "pair_scores",
    "bootstrap",
    "build_sci",
]


@dataclass
class PairScoreAggregate:
    """Per-observation aggregated pair scores; row i holds s_i."""

    s_vec: np.ndarray


@dataclass
class BootstrapResult:
    draws: np.ndarray
    Q_star: float
    alpha: float
    B: int
    G: np.ndarray
    studentized: bool
    n: int


@dataclass
class SciResult:
    """Per-coordinate simultaneous intervals over the index set G."""

    G: np.ndarray
    beta_tilde: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    excludes_zero: np.ndarray
    half_width: np.ndarray
    q_star: float
    alpha: float
    studentized: bool


def pair_scores(data: Dataset, cfg: LossConfig, residuals) -> PairScoreAggregate:
    """Build all s_i = sum_{j!=i} L_h'(r_i - r_j)(X_i - X_j) in one pass."""
    r = np.asarray(residuals, dtype=float).reshape(-1)
    n = data.n
    if r.shape[0] != n:
        raise ValueError(f"residuals have length {r.shape[0]}, expected n={n}")
    X = data.X
    s = np.empty((n, data.p))
    for blk in _row_blocks(n):
        a = loss_prime(cfg, r[blk, None] - r[None, :])
        s[blk] = a.sum(axis=1)[:, None] * X[blk] - a @ X
    return PairScoreAggregate(s_vec=s)


def _order_statistic_index(alpha: float, B: int) -> int:
    """1-based index ceil((1-alpha) B), guarded against float error."""
    m = int(math.ceil((1.0 - alpha) * B - 1e-9))
    return min(max(m, 1), B)


def _multipliers(seed, n: int, B: int) -> np.ndarray:
    """(n, B) standard-normal multipliers; column b comes from the (seed, b)
    substream, so draws are reproducible independently of execution order."""
    E = np.empty((n, B))
    for b in range(B):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
        E[:, b] = rng.standard_normal(n)
    return E


def bootstrap(
    prec: PrecisionEstimate,
    agg: PairScoreAggregate,
    n: int,
    G,
    alpha: float,
    B: int = 500,
    studentized: bool = True,
    seed: int = 0,
) -> BootstrapResult:
    """Multiplier-bootstrap the max-norm statistic over G.

    Draw b computes T_b = sqrt(n) M {n(n-1)}^-1 * 2 sum_i e_bi s_i with
    M = S^{-1/2} W* (studentized, S = diag(W_hat)) or W* (fixed width), and
    records max_{k in G} |T_bk|. Q_star is the ceil((1-alpha)B)-th smallest
    of the B norms.
    """
    G = np.asarray(sorted(set(int(k) for k in G)), dtype=int)
    if G.size == 0:
        raise ValueError("index set G is empty")
    if B < 100:
        raise ValueError("need at least B = 100 bootstrap replications")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    M = prec.W_star[G]
    if studentized:
        diag = np.diag(prec.W_hat)[G]
        if np.any(diag <= 0):
            bad = int(G[int(np.argmax(diag <= 0))])
            raise ValueError(
                f"studentization requires a positive diagonal; coordinate {bad} "
                f"has {diag.min():g}"
            )
        M = M / np.sqrt(diag)[:, None]
    U = M @ agg.s_vec.T
    scale = math.sqrt(n) * 2.0 / (n * (n - 1))
    T = scale * (U @ _multipliers(seed, n, B))
    draws = np.max(np.abs(T), axis=0)
    m = _order_statistic_index(alpha, B)
    Q_star = float(np.sort(draws)[m - 1])
    return BootstrapResult(
        draws=draws, Q_star=Q_star, alpha=alpha, B=B, G=G,
        studentized=studentized, n=n,
    )


def build_sci(deb: DebiasedResult, boot: BootstrapResult) -> SciResult:
    """Per-coordinate intervals: center beta_tilde_k, half-width
    sqrt(w_kk / n) * Q_star when studentized, Q_star / sqrt(n) otherwise."""
    G = boot.G
    center = deb.beta_tilde[G]
    if boot.studentized:
        diag = deb.s_vec_diag[G]
        if np.any(diag <= 0):
            bad = int(G[int(np.argmax(diag <= 0))])
            raise ValueError(f"nonpositive studentization diagonal at coordinate {bad}")
        half = np.sqrt(diag / boot.n) * boot.Q_star
    else:
        half = np.full(G.shape, boot.Q_star / math.sqrt(boot.n))
    lower, upper = center - half, center + half
    return SciResult(
        G=G,
        beta_tilde=center,
        lower=lower,
        upper=upper,
        excludes_zero=(lower > 0) | (upper < 0),
        half_width=half,
        q_star=boot.Q_star,
        alpha=boot.alpha,
        studentized=boot.studentized,
    )
