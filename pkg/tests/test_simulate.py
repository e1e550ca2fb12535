import math

import numpy as np
import pytest

from crr.efficiency import MixtureNormalLaw, NormalLaw
from crr.simulate import (
    Scenario,
    covariance_matrix,
    gen_dataset,
    kendall_screen,
    kendall_tau,
    parse_index_spec,
    run_scenario,
)
from crr.solver import Dataset


def brute_kendall(x, y):
    # tau-b: concordant minus discordant over the geometric mean of
    # tie-adjusted pair counts
    n = len(x)
    num = 0
    tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            sx = np.sign(x[i] - x[j])
            sy = np.sign(y[i] - y[j])
            num += sx * sy
            tx += sx != 0
            ty += sy != 0
    if tx == 0 or ty == 0:
        return 0.0
    return num / math.sqrt(tx * ty)


class TestScenario:
    def test_validation(self):
        with pytest.raises(ValueError):
            Scenario(sigma_kind="diagonal")
        with pytest.raises(ValueError):
            Scenario(lambda_select="fixed")
        with pytest.raises(ValueError):
            Scenario(reps=0)

    def test_default_signal(self):
        sc = Scenario(p=6)
        assert np.allclose(sc.resolved_beta(), [math.sqrt(3)] * 3 + [0] * 3)

    def test_index_spec_parsing(self):
        assert list(parse_index_spec("all", 4)) == [0, 1, 2, 3]
        assert list(parse_index_spec("1..5", 50)) == [0, 1, 2, 3, 4]
        assert list(parse_index_spec([2, 4], 5)) == [1, 3]
        with pytest.raises(ValueError):
            parse_index_spec("1..9", 5)
        with pytest.raises(ValueError):
            parse_index_spec([0, 1], 5)
        with pytest.raises(ValueError):
            parse_index_spec("first-three", 5)


class TestCovariance:
    def test_toeplitz_p3(self):
        sc = Scenario(p=3, sigma_kind="toeplitz")
        expected = np.array([[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]])
        assert np.allclose(covariance_matrix(sc), expected)

    def test_banded(self):
        sc = Scenario(p=4, sigma_kind="banded")
        s = covariance_matrix(sc)
        assert np.all(np.diag(s) == 1.0)
        assert s[0, 1] == 0.48 and s[1, 2] == 0.48
        assert s[0, 2] == 0.0
        assert np.min(np.linalg.eigvalsh(s)) > 0

    def test_banded_positive_definite_large_p(self):
        s = covariance_matrix(Scenario(p=200, sigma_kind="banded"))
        assert np.min(np.linalg.eigvalsh(s)) > 0


class TestGenDataset:
    def test_deterministic_per_rep(self):
        sc = Scenario(n=20, p=5, seed=3)
        d1 = gen_dataset(sc, 4)
        d2 = gen_dataset(sc, 4)
        assert np.array_equal(d1.X, d2.X) and np.array_equal(d1.Y, d2.Y)
        d3 = gen_dataset(sc, 5)
        assert not np.array_equal(d1.X, d3.X)

    def test_sample_covariance_matches(self):
        sc = Scenario(n=100_000, p=5, seed=1)
        data = gen_dataset(sc, 0)
        emp = np.cov(data.X.T)
        assert np.max(np.abs(emp - covariance_matrix(sc))) < 0.02

    def test_mixture_tail_fraction(self):
        sc = Scenario(n=100_000, p=2, seed=2, error=MixtureNormalLaw())
        data = gen_dataset(sc, 0)
        eps = data.Y - data.X @ sc.resolved_beta()
        frac = np.mean(np.abs(eps) > 10)
        # 0.05 * P(|N(0,100^2)| > 10) ~ 0.046
        assert frac == pytest.approx(0.046, abs=0.005)


class TestKendall:
    def test_perfect_concordance_ranks_first(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((30, 4))
        Y = X[:, 2].copy()
        data = Dataset(X, Y)
        assert kendall_tau(X[:, 2], Y) == 1.0
        keep = kendall_screen(data, 2)
        assert keep[0] == 2

    def test_independent_column_small_tau(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(10_000)
        y = rng.standard_normal(10_000)
        assert abs(kendall_tau(x, y)) < 0.05

    def test_matches_brute_force(self):
        x = np.array([1.0, 3.0, 2.0, 5.0, 4.0])
        y = np.array([2.0, 1.0, 4.0, 3.0, 5.0])
        assert kendall_tau(x, y) == pytest.approx(brute_kendall(x, y), abs=1e-12)
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = rng.standard_normal(12)
            y = rng.standard_normal(12)
            assert kendall_tau(x, y) == pytest.approx(brute_kendall(x, y), abs=1e-12)

    def test_ties_handled_like_brute_force(self):
        x = np.array([1.0, 1.0, 2.0, 3.0, 3.0, 4.0])
        y = np.array([2.0, 1.0, 1.0, 3.0, 4.0, 4.0])
        assert kendall_tau(x, y) == pytest.approx(brute_kendall(x, y), abs=1e-12)

    def test_constant_column_is_zero(self):
        data = Dataset(
            np.column_stack([np.ones(10), np.arange(10.0)]), np.arange(10.0)
        )
        assert kendall_tau(data.X[:, 0], data.Y) == 0.0
        keep = kendall_screen(data, 2)
        assert keep[0] == 1  # informative column first, constant one last

    def test_tie_break_toward_lower_index(self):
        y = np.arange(12.0)
        X = np.column_stack([y, y])  # identical columns, identical tau
        keep = kendall_screen(Dataset(X, y), 2)
        assert list(keep) == [0, 1]

    def test_keep_bounds(self):
        data = Dataset(np.random.default_rng(3).standard_normal((8, 3)), np.arange(8.0))
        with pytest.raises(ValueError):
            kendall_screen(data, 0)
        with pytest.raises(ValueError):
            kendall_screen(data, 4)


def tiny_scenario(**kw):
    base = dict(
        n=40, p=6, reps=3, B=120, seed=9, G="1..3",
        lambda_select="fixed", lambda_fixed=0.25, grid_size=8,
    )
    base.update(kw)
    return Scenario(**base)


class TestRunScenario:
    def test_single_rep_cr_binary(self):
        rep = run_scenario(tiny_scenario(reps=1))
        assert rep.cr in (0.0, 1.0)
        assert rep.reps_completed == 1
        assert rep.mc_se == 0.0

    def test_reproducible(self):
        r1 = run_scenario(tiny_scenario())
        r2 = run_scenario(tiny_scenario())
        assert r1.cr == r2.cr and r1.al == r2.al
        assert np.array_equal(r1.beta_tilde_mean, r2.beta_tilde_mean)

    def test_workers_match_serial(self):
        r1 = run_scenario(tiny_scenario(reps=4), workers=1)
        r2 = run_scenario(tiny_scenario(reps=4), workers=2)
        assert r1.cr == r2.cr
        assert r1.al == r2.al
        assert np.array_equal(r1.beta_hat_mean, r2.beta_hat_mean)

    def test_width_monotone_in_alpha(self):
        r_wide = run_scenario(tiny_scenario(alpha=0.01))
        r_narrow = run_scenario(tiny_scenario(alpha=0.10))
        assert r_wide.al > r_narrow.al

    def test_mc_se_formula(self):
        rep = run_scenario(tiny_scenario(reps=5))
        assert rep.mc_se == pytest.approx(
            math.sqrt(rep.cr * (1 - rep.cr) / rep.reps_completed)
        )
        assert rep.cr * rep.reps_completed == pytest.approx(
            round(rep.cr * rep.reps_completed)
        )

    def test_null_signal_coverage(self):
        # validity under beta* = 0: simultaneous coverage within Monte Carlo
        # slack of the nominal level
        sc = Scenario(
            n=70, p=10, reps=25, B=150, seed=77, G="all",
            beta_true=np.zeros(10), lambda_select="cv",
            grid_size=10, grid_min_ratio=0.05, cv_folds=5,
        )
        rep = run_scenario(sc, workers=2)
        assert rep.reps_completed == 25
        assert rep.cr >= 1 - sc.alpha - 2 * rep.mc_se
