"""Penalized regression on the smoothed pairwise rank objective.

The fitted criterion is the average of the smoothed absolute loss over all
ordered pairs of observations,

    f(beta) = {n(n-1)}^-1 sum_{i!=j} L_h((Y_i - Y_j) - (X_i - X_j)' beta),

plus an l1 / SCAD / MCP penalty. f is smooth and convex; pairwise sums are
evaluated in row blocks so memory stays O(n * block) instead of O(n^2 p).
There is no intercept: the pairwise differences cancel any location shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import LossConfig, loss, loss_prime

__all__ = [
    "Dataset",
    "PenaltySpec",
    "FitResult",
    "objective",
    "gradient",
    "fit",
    "lambda_max",
    "default_lambda_grid",
    "select_lambda_cv",
    "select_lambda_hbic",
    "standardize",
]

# target number of pair-matrix entries held per row block
_BLOCK_ELEMS = 1 << 22

PENALTY_FAMILIES = ("lasso", "scad", "mcp")


@dataclass
class Dataset:
    """Design matrix and response.

    X : (n, p) array, rows are observations.
    Y : (n,) array.
    standardized : set True only if columns of X and Y have sample mean 0
        and sample variance 1 (ddof=1); verified at construction.
    """

    X: np.ndarray
    Y: np.ndarray
    standardized: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(
                f"X has {X.shape[0]} rows but Y has {Y.shape[0]} entries"
            )
        if X.shape[0] < 2 or X.shape[1] < 1:
            raise ValueError("need n >= 2 observations and p >= 1 predictors")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(Y)):
            raise ValueError("X and Y must be finite")
        self.X, self.Y = X, Y
        if self.standardized:
            cols = np.vstack([X.T, Y])
            if np.max(np.abs(cols.mean(axis=1))) > 1e-8 or np.max(
                np.abs(cols.var(axis=1, ddof=1) - 1.0)
            ) > 1e-8:
                raise ValueError(
                    "standardized=True but columns are not mean-0 variance-1"
                )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def standardize(data: Dataset) -> Dataset:
    """Center and scale each predictor column and the response (ddof=1)."""
    sx = data.X.std(axis=0, ddof=1)
    sy = data.Y.std(ddof=1)
    if np.any(sx == 0) or sy == 0:
        bad = int(np.argmax(sx == 0))
        raise ValueError(f"cannot standardize constant column (index {bad})")
    X = (data.X - data.X.mean(axis=0)) / sx
    Y = (data.Y - data.Y.mean()) / sy
    return Dataset(X, Y, standardized=True)


@dataclass
class PenaltySpec:
    """Penalty family with tuning parameter lambda and concavity shape a."""

    family: str
    lam: float
    a: float | None = None
    l1_radius: float | None = None

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in PENALTY_FAMILIES:
            raise ValueError(
                f"unknown penalty family {self.family!r}; "
                f"choose from {PENALTY_FAMILIES}"
            )
        self.family = fam
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lambda must be a positive finite real")
        if self.a is None:
            self.a = {"lasso": 1.0, "scad": 3.7, "mcp": 3.0}[fam]
        if fam == "scad" and self.a <= 2:
            raise ValueError("SCAD requires a > 2")
        if fam == "mcp" and self.a <= 1:
            raise ValueError("MCP requires a > 1")
        if self.l1_radius is not None and not self.l1_radius > 0:
            raise ValueError("l1_radius must be positive when set")

    def deriv_weight(self, beta_abs: np.ndarray) -> np.ndarray:
        """p'_lambda(|beta|)/lambda, the LLA reweighting factor in [0, 1]."""
        if self.family == "lasso":
            return np.ones_like(beta_abs)
        if self.family == "scad":
            w = np.clip((self.a * self.lam - beta_abs) / ((self.a - 1) * self.lam), 0.0, 1.0)
            return np.where(beta_abs <= self.lam, 1.0, w)
        # mcp
        return np.clip(1.0 - beta_abs / (self.a * self.lam), 0.0, 1.0)


@dataclass
class FitResult:
    beta_hat: np.ndarray
    residuals: np.ndarray
    objective_value: float
    iterations: int
    converged: bool
    lambda_used: float


def _row_blocks(n):
    step = max(1, min(n, _BLOCK_ELEMS // max(n, 1)))
    for start in range(0, n, step):
        yield slice(start, min(start + step, n))


def _pair_loss_sum(cfg, r):
    """Sum of L_h(r_i - r_j) over ordered pairs i != j."""
    n = r.shape[0]
    total = 0.0
    for blk in _row_blocks(n):
        total += float(loss(cfg, r[blk, None] - r[None, :]).sum())
    return total - n * loss(cfg, 0.0)


def _pair_prime_sums(cfg, r):
    """Row and column sums of the matrix L_h'(r_i - r_j)."""
    n = r.shape[0]
    rows = np.empty(n)
    cols = np.zeros(n)
    for blk in _row_blocks(n):
        a = loss_prime(cfg, r[blk, None] - r[None, :])
        rows[blk] = a.sum(axis=1)
        cols += a.sum(axis=0)
    return rows, cols


def _decode_pairs(linear, n):
    """Map linear indices over unordered pairs (i<j) to index arrays."""
    lin = np.asarray(linear, dtype=np.int64)
    # solve i(2n - i - 1)/2 <= L, then correct for float error
    i = np.floor((2 * n - 1 - np.sqrt((2 * n - 1.0) ** 2 - 8.0 * lin)) / 2).astype(np.int64)
    base = i * (2 * n - i - 1) // 2
    over = base > lin
    i[over] -= 1
    base[over] = i[over] * (2 * n - i[over] - 1) // 2
    j = lin - base + i + 1
    return i, j


def _sample_pairs(n, max_pairs, seed):
    """Floyd sample of unordered pairs; None when no cap applies."""
    m_all = n * (n - 1) // 2
    if max_pairs is None or m_all <= max_pairs:
        return None
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n, int(max_pairs))))
    chosen = set()
    for t in range(m_all - int(max_pairs), m_all):
        draw = int(rng.integers(0, t + 1))
        chosen.add(t if draw in chosen else draw)
    return _decode_pairs(np.fromiter(chosen, dtype=np.int64, count=len(chosen)), n)


def _check_beta(data, beta):
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != data.p:
        raise ValueError(f"beta has length {beta.shape[0]}, expected p={data.p}")
    return beta


def objective(data: Dataset, cfg: LossConfig, beta, max_pairs=None, seed=0) -> float:
    """Average smoothed loss over all ordered pairs (penalty excluded).

    With max_pairs set and n(n-1)/2 above it, a seeded uniform subsample of
    unordered pairs is averaged instead (incomplete U-statistic).
    """
    beta = _check_beta(data, beta)
    r = data.Y - data.X @ beta
    pairs = _sample_pairs(data.n, max_pairs, seed)
    if pairs is None:
        return _pair_loss_sum(cfg, r) / (data.n * (data.n - 1))
    i, j = pairs
    return float(np.mean(loss(cfg, r[i] - r[j])))


def gradient(data: Dataset, cfg: LossConfig, beta, max_pairs=None, seed=0) -> np.ndarray:
    """Gradient of `objective` at beta.

    Equals -{n(n-1)}^-1 sum_{i!=j} L_h'((Y_i-Y_j) - (X_i-X_j)'beta) (X_i-X_j),
    assembled from row/column sums so no n^2 x p array is formed.
    """
    beta = _check_beta(data, beta)
    r = data.Y - data.X @ beta
    pairs = _sample_pairs(data.n, max_pairs, seed)
    if pairs is None:
        rows, cols = _pair_prime_sums(cfg, r)
        return -(data.X.T @ (rows - cols)) / (data.n * (data.n - 1))
    i, j = pairs
    w = loss_prime(cfg, r[i] - r[j])
    c = np.bincount(i, weights=w, minlength=data.n) - np.bincount(
        j, weights=w, minlength=data.n
    )
    return -(data.X.T @ c) / len(w)


def lambda_max(data: Dataset, cfg: LossConfig) -> float:
    """Smallest lambda at which the l1-penalized solution is exactly 0."""
    return float(np.max(np.abs(gradient(data, cfg, np.zeros(data.p)))))


def default_lambda_grid(data: Dataset, cfg: LossConfig, size=50, min_ratio=0.01):
    """Decreasing log-spaced grid from lambda_max down to min_ratio*lambda_max."""
    lmax = lambda_max(data, cfg)
    if lmax <= 0:
        lmax = 1e-8
    return np.geomspace(lmax, min_ratio * lmax, size)


def _soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _project_l1(v, radius):
    """Euclidean projection onto the l1 ball of the given radius."""
    a = np.abs(v)
    if a.sum() <= radius:
        return v
    u = np.sort(a)[::-1]
    css = np.cumsum(u) - radius
    k = np.nonzero(u > css / np.arange(1, len(u) + 1))[0][-1]
    theta = css[k] / (k + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


class _PairProblem:
    """Objective/gradient evaluations on a fixed (canonically ordered) sample."""

    def __init__(self, X, Y, cfg, pairs=None):
        self.X, self.Y, self.cfg = X, Y, cfg
        self.n = X.shape[0]
        self.pairs = pairs

    def value(self, r):
        if self.pairs is None:
            return _pair_loss_sum(self.cfg, r) / (self.n * (self.n - 1))
        i, j = self.pairs
        return float(np.mean(loss(self.cfg, r[i] - r[j])))

    def grad(self, r):
        if self.pairs is None:
            rows, cols = _pair_prime_sums(self.cfg, r)
            return -(self.X.T @ (rows - cols)) / (self.n * (self.n - 1))
        i, j = self.pairs
        w = loss_prime(self.cfg, r[i] - r[j])
        c = np.bincount(i, weights=w, minlength=self.n) - np.bincount(
            j, weights=w, minlength=self.n
        )
        return -(self.X.T @ c) / len(w)

    def value_grad(self, r):
        """Objective and gradient from one pass over the pair differences."""
        n, cfg = self.n, self.cfg
        if self.pairs is None:
            total = 0.0
            rows = np.empty(n)
            cols = np.zeros(n)
            for blk in _row_blocks(n):
                d = r[blk, None] - r[None, :]
                total += float(loss(cfg, d).sum())
                a = loss_prime(cfg, d)
                rows[blk] = a.sum(axis=1)
                cols += a.sum(axis=0)
            total -= n * loss(cfg, 0.0)
            denom = n * (n - 1)
            return total / denom, -(self.X.T @ (rows - cols)) / denom
        i, j = self.pairs
        d = r[i] - r[j]
        w = loss_prime(cfg, d)
        c = np.bincount(i, weights=w, minlength=n) - np.bincount(
            j, weights=w, minlength=n
        )
        return float(np.mean(loss(cfg, d))), -(self.X.T @ c) / len(w)


def _kkt_residual(g, beta, thresholds):
    """Stationarity violation of the weighted-l1 subproblem."""
    active = beta != 0
    res = np.max(np.maximum(np.abs(g[~active]) - thresholds[~active], 0.0), initial=0.0)
    if np.any(active):
        res = max(res, np.max(np.abs(g[active] + thresholds[active] * np.sign(beta[active]))))
    return res


def _apg(problem, lam, weights, radius, beta0, tol, max_iter, kkt_tol):
    """FISTA with backtracking on value + lam * sum(weights * |beta|).

    Stops when the max coordinate change drops below tol, or earlier when
    the subproblem stationarity residual falls below kkt_tol (skipped under
    an l1-radius constraint, whose multiplier the residual ignores).
    """
    X, Y = problem.X, problem.Y
    var = X.var(axis=0)
    lips = 2.0 * problem.cfg.kernel.sup_value / problem.cfg.h * 2.0 * max(var.max(), 1e-12)
    step = 1.0 / lips

    def penalized(f_val, b):
        return f_val + lam * (weights @ np.abs(b))

    x = beta0.copy()
    z = x
    y = x.copy()
    t_mom = 1.0
    Fx = penalized(problem.value(Y - X @ x), x)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        ry = Y - X @ y
        fy, gy = problem.value_grad(ry)
        for _ in range(60):
            z = _soft_threshold(y - step * gy, step * lam * weights)
            if radius is not None:
                z = _project_l1(z, radius)
            dz = z - y
            fz = problem.value(Y - X @ z)
            if fz <= fy + gy @ dz + (dz @ dz) / (2.0 * step) + 1e-15:
                break
            step *= 0.5
        delta = np.max(np.abs(z - x))
        Fz = penalized(fz, z)
        if Fz > Fx:  # momentum overshoot: restart
            t_mom = 1.0
            y = z.copy()
        else:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
            y = z + ((t_mom - 1.0) / t_next) * (z - x)
            t_mom = t_next
        x, Fx = z, Fz
        if delta < tol:
            converged = True
            break
        if kkt_tol is not None and radius is None and it % 10 == 0:
            g = problem.grad(Y - X @ x)
            if _kkt_residual(g, x, lam * weights) < kkt_tol:
                converged = True
                break
    return x, it, converged


def _canonical_order(X, Y):
    # deterministic observation order: fit output is then invariant to
    # permutations of the input rows
    return np.lexsort(np.vstack([X[:, ::-1].T, Y]))


def fit(
    data: Dataset,
    cfg: LossConfig,
    pen: PenaltySpec,
    tol: float = 1e-7,
    max_iter: int = 5000,
    kkt_tol: float | None = 2e-6,
    max_pairs=None,
    seed: int = 0,
    init=None,
) -> FitResult:
    """Penalized fit of the pairwise smoothed rank objective.

    Arguments
    ---------
    data, cfg : the sample and the loss configuration.
    pen : penalty specification. For lasso, accelerated proximal gradient
        with soft-thresholding; for scad/mcp, an initial lasso fit followed
        by 3 local-linear-approximation stages, each a weighted-l1 problem
        with weights p'_lambda(|beta_j|).
    tol : stop when the max coordinate change falls below this (default 1e-7).
    max_iter : iteration cap per stage (default 5000).
    kkt_tol : optional early exit once the stationarity residual is below
        this; set None to disable.
    max_pairs : optional cap on the number of unordered pairs; above it a
        seeded uniform subsample is used.
    init : optional warm-start coefficient vector.

    Returns
    -------
    FitResult with beta_hat, residuals on the original row order, the
    attained objective value (penalty excluded), total iterations, a
    convergence flag, and the lambda that was applied.
    """
    order = _canonical_order(data.X, data.Y)
    Xc, Yc = data.X[order], data.Y[order]
    pairs = _sample_pairs(data.n, max_pairs, seed)
    problem = _PairProblem(Xc, Yc, cfg, pairs)

    beta0 = np.zeros(data.p) if init is None else np.asarray(init, dtype=float).copy()
    weights = np.ones(data.p)
    beta, iters, converged = _apg(
        problem, pen.lam, weights, pen.l1_radius, beta0, tol, max_iter, kkt_tol
    )
    if pen.family != "lasso":
        for _ in range(3):
            weights = pen.deriv_weight(np.abs(beta))
            beta, it_k, conv_k = _apg(
                problem, pen.lam, weights, pen.l1_radius, beta, tol, max_iter, kkt_tol
            )
            iters += it_k
            converged = converged and conv_k
    residuals = data.Y - data.X @ beta
    return FitResult(
        beta_hat=beta,
        residuals=residuals,
        objective_value=problem.value(Yc - Xc @ beta),
        iterations=iters,
        converged=converged,
        lambda_used=pen.lam,
    )


def _check_grid(grid):
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    if np.any(grid <= 0):
        raise ValueError("lambda grid must be positive")
    if grid.size > 1 and np.any(np.diff(grid) >= 0):
        raise ValueError("lambda grid must be strictly decreasing")
    return grid


def _path_fits(X, Y, cfg, family, a, radius, grid, tol, max_iter):
    """Warm-started fits along a decreasing lambda grid (canonical order)."""
    order = _canonical_order(X, Y)
    Xc, Yc = X[order], Y[order]
    problem = _PairProblem(Xc, Yc, cfg)
    p = X.shape[1]
    beta = np.zeros(p)
    out = []
    for lam in grid:
        pen = PenaltySpec(family, float(lam), a=a, l1_radius=radius)
        weights = np.ones(p)
        beta, _, _ = _apg(problem, pen.lam, weights, radius, beta, tol, max_iter, 10 * tol)
        bk = beta
        if family != "lasso":
            for _ in range(3):
                weights = pen.deriv_weight(np.abs(bk))
                bk, _, _ = _apg(problem, pen.lam, weights, radius, bk, tol, max_iter, 10 * tol)
        out.append(bk.copy())
    return out, problem


def select_lambda_cv(
    data: Dataset,
    cfg: LossConfig,
    pen_family: str,
    grid,
    folds: int = 10,
    a: float | None = None,
    l1_radius: float | None = None,
    tol: float = 1e-6,
    max_iter: int = 2000,
) -> float:
    """Cross-validated lambda: minimize held-out pairwise smoothed loss.

    The held-out loss of each fold is the pair average within that fold,
    so every fold needs at least 2 observations. Ties prefer larger lambda.
    """
    grid = _check_grid(grid)
    if data.n < 4:
        raise ValueError("lambda selection needs n >= 4")
    if data.n // folds < 2:
        raise ValueError(f"{folds} folds leave a fold with fewer than 2 observations")
    order = _canonical_order(data.X, data.Y)
    fold_of = np.arange(data.n) % folds
    scores = np.zeros(grid.size)
    for f in range(folds):
        tr = order[fold_of != f]
        te = order[fold_of == f]
        betas, _ = _path_fits(
            data.X[tr], data.Y[tr], cfg, pen_family, a, l1_radius, grid, tol, max_iter
        )
        te_prob = _PairProblem(data.X[te], data.Y[te], cfg)
        for k, b in enumerate(betas):
            scores[k] += te_prob.value(data.Y[te] - data.X[te] @ b)
    return float(grid[int(np.argmin(scores))])


def select_lambda_hbic(
    data: Dataset,
    cfg: LossConfig,
    pen_family: str,
    grid,
    c_hbic: float = 1.0,
    a: float | None = None,
    l1_radius: float | None = None,
    tol: float = 1e-6,
    max_iter: int = 2000,
) -> float:
    """High-dimensional BIC lambda selection.

    Minimizes log(objective) + |support| * c_hbic * log(log n) * log(p) / n
    over the grid; ties prefer larger lambda.
    """
    grid = _check_grid(grid)
    if data.n < 4:
        raise ValueError("lambda selection needs n >= 4")
    betas, problem = _path_fits(
        data.X, data.Y, cfg, pen_family, a, l1_radius, grid, tol, max_iter
    )
    factor = c_hbic * math.log(math.log(data.n)) * math.log(data.p) / data.n
    best_k, best_val = 0, np.inf
    for k, b in enumerate(betas):
        val = problem.value(problem.Y - problem.X @ b)
        crit = (math.log(val) if val > 0 else -np.inf) + np.count_nonzero(b) * factor
        if crit < best_val:
            best_k, best_val = k, crit
    return float(grid[best_k])
