"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -s` to see the lines as they
complete. The three Monte Carlo coverage cells dominate the runtime; all
seeds are fixed, so every criterion is deterministic.
"""

import csv
import json
import math
import os
import time

import numpy as np
import pytest

from crr.bootstrap import bootstrap, build_sci, pair_scores
from crr.cli import main as cli_main
from crr.efficiency import (
    CauchyLaw,
    MixtureNormalLaw,
    NormalLaw,
    are_vs_composite,
    are_vs_cqr,
    are_vs_huber_limit,
    are_vs_ols,
)
from crr.kernels import (
    KernelSpec,
    LossConfig,
    loss,
    loss_by_quadrature,
    loss_prime,
    loss_prime_by_quadrature,
    loss_second,
)
from crr.precision import HessianEstimate, clime_rows, debias, default_gamma, hessian
from crr.simulate import Scenario, run_scenario
from crr.solver import Dataset, PenaltySpec, default_lambda_grid, fit, gradient, objective, select_lambda_cv

EPA = LossConfig(KernelSpec("epanechnikov"), 1.0)
WORKERS = os.cpu_count() or 1


def report(num, name, ok, detail=""):
    line = f"[criterion {num:>2}] {'PASS' if ok else 'FAIL'}  {name}"
    if detail:
        line += f"  ({detail})"
    print(line, flush=True)
    assert ok, line


# -------------------------------------------------- shared coverage cells

def _table1_scenario(error=None, seed=1):
    kw = {} if error is None else {"error": error}
    return Scenario(
        n=100, p=50, sigma_kind="toeplitz", penalty="lasso", lambda_select="cv",
        G="1..5", reps=200, B=300, alpha=0.05, seed=seed, **kw,
    )


@pytest.fixture(scope="module")
def table1_normal():
    return run_scenario(_table1_scenario(), workers=WORKERS)


def test_criterion_1_loss_closed_forms_match_quadrature():
    t0 = time.time()
    worst = 0.0
    for h in (0.25, 1.0, 2.0):
        cfg = LossConfig(KernelSpec("epanechnikov"), h)
        for u in np.linspace(-3.0, 3.0, 61):
            u = float(u)
            worst = max(worst, abs(loss(cfg, u) - loss_by_quadrature(cfg, u)))
            worst = max(worst, abs(loss_prime(cfg, u) - loss_prime_by_quadrature(cfg, u)))
            fd = (loss_prime(cfg, u + 1e-6) - loss_prime(cfg, u - 1e-6)) / 2e-6
            assert abs(fd - loss_second(cfg, u)) < 5e-4
    elapsed = time.time() - t0
    report(
        1, "Epanechnikov closed forms vs quadrature",
        worst < 1e-8 and elapsed < 1.0,
        f"max dev {worst:.2e}, {elapsed:.2f}s",
    )


def test_criterion_2_gradient_and_objective_oracles():
    t0 = time.time()
    rng = np.random.default_rng(12345)
    worst_rel = 0.0
    worst_obj = 0.0
    for _ in range(100):
        n = int(rng.integers(4, 11))
        p = int(rng.integers(1, 6))
        X = rng.standard_normal((n, p))
        Y = X @ rng.standard_normal(p) + rng.standard_normal(n)
        data = Dataset(X, Y)
        beta = rng.standard_normal(p)
        # literal double loop
        obj_brute = 0.0
        grad_brute = np.zeros(p)
        for i in range(n):
            for j in range(n):
                if i != j:
                    u = float((Y[i] - Y[j]) - (X[i] - X[j]) @ beta)
                    obj_brute += loss(EPA, u)
                    grad_brute -= loss_prime(EPA, u) * (X[i] - X[j])
        obj_brute /= n * (n - 1)
        worst_obj = max(worst_obj, abs(objective(data, EPA, beta) - obj_brute))
        g = gradient(data, EPA, beta)
        for k in range(p):
            e = np.zeros(p)
            e[k] = 1e-6
            fd = (objective(data, EPA, beta + e) - objective(data, EPA, beta - e)) / 2e-6
            denom = max(abs(g[k]), 1e-8)
            worst_rel = max(worst_rel, abs(fd - g[k]) / denom)
    elapsed = time.time() - t0
    report(
        2, "gradient fd oracle + objective double loop",
        worst_rel < 1e-5 and worst_obj < 1e-12 and elapsed < 10.0,
        f"fd rel {worst_rel:.2e}, obj {worst_obj:.2e}, {elapsed:.1f}s",
    )


def test_criterion_3_kkt_certification():
    rng = np.random.default_rng(777)
    worst = 0.0
    cases = []
    for n, p, noise in ((50, 8, "normal"), (40, 60, "normal"), (80, 20, "cauchy"), (100, 50, "normal")):
        X = rng.standard_normal((n, p))
        beta = np.zeros(p)
        beta[:3] = math.sqrt(3.0)
        eps = rng.standard_cauchy(n) if noise == "cauchy" else rng.standard_normal(n)
        data = Dataset(X, X @ beta + eps)
        from crr.solver import lambda_max

        lmax = lambda_max(data, EPA)
        for frac in (0.6, 0.2, 0.08):
            cases.append((data, frac * lmax))
    grid = default_lambda_grid(cases[0][0], EPA, size=12, min_ratio=0.05)
    cases.append((cases[0][0], select_lambda_cv(cases[0][0], EPA, "lasso", grid, folds=5)))
    for data, lam in cases:
        fr = fit(data, EPA, PenaltySpec("lasso", lam))
        g = gradient(data, EPA, fr.beta_hat)
        active = fr.beta_hat != 0
        if np.any(~active):
            worst = max(worst, float(np.max(np.abs(g[~active]))) - lam)
        if np.any(active):
            worst = max(worst, float(np.max(np.abs(g[active] + lam * np.sign(fr.beta_hat[active])))))
    report(
        3, f"lasso stationarity on {len(cases)} fits",
        worst < 1e-5, f"worst residual {worst:.2e}",
    )


def test_criterion_4_clime_feasibility_and_inversion():
    rng = np.random.default_rng(99)
    ok = True
    worst_gap = -np.inf
    # feasibility across random instances and the pipeline-style Hessian
    for trial in range(8):
        p = int(rng.integers(3, 12))
        A = rng.standard_normal((p, p))
        J = HessianEstimate(A @ A.T / p + 0.2 * np.eye(p))
        gamma = 10 ** rng.uniform(-5, -0.7)
        prec = clime_rows(J, gamma)
        worst_gap = max(worst_gap, prec.max_violation - prec.gamma_n)
        ok = ok and prec.max_violation <= prec.gamma_n + 1e-8
    X = rng.standard_normal((60, 10))
    data = Dataset(X, X[:, 0] - X[:, 1] + rng.standard_normal(60))
    fr = fit(data, EPA, PenaltySpec("lasso", 0.1))
    J = hessian(data, EPA, fr.residuals)
    prec = clime_rows(J, default_gamma(J, 60))
    ok = ok and prec.max_violation <= prec.gamma_n + 1e-8
    # inversion oracle at tiny gamma on well-conditioned p=5 instances
    worst_inv = 0.0
    for trial in range(5):
        A = rng.standard_normal((5, 5))
        J5 = A @ A.T / 5 + np.eye(5)
        prec5 = clime_rows(HessianEstimate(J5), 1e-6)
        worst_inv = max(worst_inv, float(np.max(np.abs(prec5.W_star - np.linalg.inv(J5)))))
    report(
        4, "constrained-l1 feasibility + dense-inverse oracle",
        ok and worst_inv < 1e-4,
        f"max feas gap {worst_gap:.2e}, inv err {worst_inv:.2e}",
    )


def test_criterion_5_bootstrap_fast_path_identity():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(4, 12))
        p = int(rng.integers(1, 6))
        X = rng.standard_normal((n, p))
        Y = rng.standard_normal(n)
        data = Dataset(X, Y)
        r = rng.standard_normal(n)
        agg = pair_scores(data, EPA, r)
        e = rng.standard_normal(n)
        fast = 2.0 * (agg.s_vec.T @ e)
        brute = np.zeros(p)
        for i in range(n):
            for j in range(n):
                if i != j:
                    brute += loss_prime(EPA, float(r[i] - r[j])) * (X[i] - X[j]) * (e[i] + e[j])
        worst = max(worst, float(np.max(np.abs(fast - brute))))
    report(5, "multiplier fast path vs double sum (50 draws)", worst < 1e-10, f"max dev {worst:.2e}")


def test_criterion_6_are_golden_numbers():
    t0 = time.time()
    checks = []
    r = are_vs_ols(NormalLaw(), EPA)
    checks.append(("ols normal h=1", abs(r.are_value - 0.96) <= 0.005, f"{r.are_value:.4f}"))
    r = are_vs_ols(CauchyLaw(), EPA)
    checks.append(("ols cauchy inf", math.isinf(r.are_value), "inf"))
    r = are_vs_huber_limit(NormalLaw(), 3.0)
    checks.append(("huber normal h->0", abs(r.are_value - 0.96) <= 0.01, f"{r.are_value:.4f}"))
    r = are_vs_huber_limit(CauchyLaw(), 3.0)
    checks.append(("huber cauchy h->0", abs(r.are_value - 1.42) <= 0.02, f"{r.are_value:.4f}"))
    r = are_vs_cqr(NormalLaw())
    checks.append(("cqr normal", abs(r.are_value - 1.5) <= 0.005, f"{r.are_value:.4f}"))
    r = are_vs_cqr(CauchyLaw())
    checks.append(("cqr cauchy", abs(r.are_value - 0.75) <= 0.005, f"{r.are_value:.4f}"))
    small = LossConfig(KernelSpec("epanechnikov"), 1e-3)
    r = are_vs_composite(NormalLaw(), small)
    checks.append(("composite limit", abs(r.are_value - 1.0) <= 0.01, f"{r.are_value:.4f}"))
    elapsed = time.time() - t0
    ok = all(c[1] for c in checks) and elapsed < 30.0
    report(
        6, "relative-efficiency golden values",
        ok, "; ".join(f"{c[0]}={c[2]}" for c in checks) + f"; {elapsed:.1f}s",
    )


def test_criterion_7_coverage_normal_errors(table1_normal):
    rep = table1_normal
    ok = 0.918 <= rep.cr <= 0.998 and 0.67 <= rep.al <= 0.90 and not rep.invalid
    report(
        7, "desk-scale coverage, normal errors",
        ok, f"cr={rep.cr:.3f} (want [0.918, 0.998]), al={rep.al:.3f} (want [0.67, 0.90]), "
            f"failures={rep.failures}",
    )


def test_criterion_8_coverage_heavy_tails():
    rep_c = run_scenario(_table1_scenario(error=CauchyLaw(), seed=2), workers=WORKERS)
    rep_m = run_scenario(_table1_scenario(error=MixtureNormalLaw(), seed=3), workers=WORKERS)
    ok = rep_c.cr >= 0.90 and rep_m.cr >= 0.91 and not rep_c.invalid and not rep_m.invalid
    report(
        8, "robustness coverage (cauchy, mixture)",
        ok, f"cauchy cr={rep_c.cr:.3f} (>=0.90), mixture cr={rep_m.cr:.3f} (>=0.91)",
    )


def test_criterion_9_bias_reduction(table1_normal):
    rep = table1_normal
    s3 = math.sqrt(3.0)
    bias_tilde = abs(rep.beta_tilde_mean[0] - s3)
    bias_hat = abs(rep.beta_hat_mean[0] - s3)
    report(
        9, "one-step correction reduces first-coordinate bias",
        bias_tilde < bias_hat, f"|bias| {bias_hat:.4f} -> {bias_tilde:.4f}",
    )


def test_criterion_10_cli_determinism(tmp_path):
    rng = np.random.default_rng(4)
    n, p = 30, 5
    X = rng.standard_normal((n, p))
    Y = X @ np.array([2.0, -2.0, 0, 0, 0]) + 0.1 * rng.standard_normal(n)
    data_path = tmp_path / "d.csv"
    with open(data_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"g{j}" for j in range(p)])
        for i in range(n):
            w.writerow([f"{Y[i]:.17g}"] + [f"{v:.17g}" for v in X[i]])
    cfg_path = tmp_path / "c.toml"
    cfg_path.write_text('seed = 5\n[solver]\nlambda = 0.1\n[boot]\nB = 120\n')
    scen_path = tmp_path / "s.toml"
    scen_path.write_text(
        '[[scenario]]\nid = "t"\nn = 30\np = 4\nreps = 2\nB = 100\nseed = 6\n'
        'lambda_select = "fixed"\nlambda = 0.3\nG = "1..2"\n'
    )

    def run_all(tag):
        out = {}
        base = tmp_path / tag
        os.makedirs(base)
        assert cli_main(["fit", "--data", str(data_path), "--config", str(cfg_path),
                         "--out", str(base / "fit.json")]) == 0
        assert cli_main(["infer", "--data", str(data_path), "--config", str(cfg_path),
                         "--G", "all", "--out", str(base / "sci.csv")]) == 0
        assert cli_main(["screen", "--data", str(data_path), "--keep", "3",
                         "--out", str(base / "kept.csv")]) == 0
        assert cli_main(["are", "--error", "normal", "--target", "composite",
                         "--h", "0.5", "--out", str(base / "are.json")]) == 0
        assert cli_main(["simulate", "--scenarios", str(scen_path),
                         "--out", str(base / "res.csv"), "--workers", "1"]) == 0
        for name in ("fit.json", "sci.csv", "sci.json", "kept.csv", "kept.json",
                     "are.json", "res.csv", "res.json"):
            payload = (base / name).read_text()
            if name.endswith(".json"):
                doc = json.loads(payload)
                doc.pop("timings", None)
                for v in doc.values():
                    if isinstance(v, dict):
                        v.pop("wall_seconds", None)
                        v.pop("timings", None)
                payload = json.dumps(doc, sort_keys=True)
            out[name] = payload
        return out

    first, second = run_all("a"), run_all("b")
    same = {k for k in first if first[k] == second[k]}
    report(
        10, "CLI outputs identical under repeated seeds",
        same == set(first), f"{len(same)}/{len(first)} artifacts identical",
    )
