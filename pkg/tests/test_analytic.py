"""
core/analytic.py のテスト
"""

import math

import numpy as np
import pytest
from scipy import integrate

from core.analytic import (
    FP_ANCHOR_D,
    FP_ANCHOR_K,
    FP_ANCHOR_M,
    TheoryInputs,
    accuracy_bound,
    analytic_fp,
    balanced_error,
    di_success_prob,
    fp_at_threshold,
    fp_curve,
    gap_moments,
    mi_success_prob,
    optimal_threshold,
    overlap_fp_prob,
    phi,
    prob_at_threshold,
    theory_table,
    tp_at_threshold,
    tp_vs_k_prob,
)
from core.errors import DomainError

BOUNDARY_M = 500
BOUNDARY_U_SQ = 1.0 / BOUNDARY_M
BOUNDARY_SIGMA = math.sqrt(1.0 / (10.0 * math.sqrt(BOUNDARY_M)))


def _quadrature_phi(z: float) -> float:
    value, _ = integrate.quad(
        lambda t: math.exp(-t * t / 2.0) / math.sqrt(2.0 * math.pi),
        -np.inf,
        z,
        epsabs=1e-13,
        epsrel=1e-13,
    )
    return value


class TestPhi:
    """phi() のテスト"""

    def test_known_values(self):
        """既知の値"""
        assert phi(0.0) == 0.5
        assert phi(1.959963984540054) == pytest.approx(0.975, abs=1e-12)
        assert phi(-40.0) >= 0.0
        assert phi(40.0) == 1.0

    def test_quadrature_oracle(self):
        """50点で数値積分と1e-8以内で一致する"""
        for z in np.linspace(-6.0, 6.0, 50):
            assert abs(phi(z) - _quadrature_phi(z)) <= 1e-8

    def test_symmetry(self):
        """Φ(−z) = 1 − Φ(z)"""
        for z in (0.1, 0.7, 2.5):
            assert phi(-z) == pytest.approx(1.0 - phi(z), abs=1e-15)

    def test_nan(self):
        """NaN は DomainError"""
        with pytest.raises(DomainError):
            phi(math.nan)


class TestAnchors:
    """解析式の数値例"""

    def test_accuracy_at_high_noise_dim(self):
        """D=1000 の境界入力で精度 0.6241"""
        value = accuracy_bound(BOUNDARY_M, BOUNDARY_U_SQ, BOUNDARY_SIGMA, 1000)
        assert value == pytest.approx(0.6241, abs=5e-4)

    def test_accuracy_at_low_noise_dim(self):
        """D=10 の境界入力で精度 0.9992"""
        value = accuracy_bound(BOUNDARY_M, BOUNDARY_U_SQ, BOUNDARY_SIGMA, 10)
        assert value == pytest.approx(0.9992, abs=5e-4)

    def test_fp_example(self):
        """k=10⁴, D=10, m=5·10⁴ で偽陽性確率 0.309"""
        assert analytic_fp(FP_ANCHOR_K, FP_ANCHOR_D, FP_ANCHOR_M) == pytest.approx(
            0.309, abs=1e-3
        )


class TestFormulas:
    """各確率式の性質"""

    def test_di_success_increases_with_d(self):
        """D が大きいほど判定成功確率は高い"""
        values = [di_success_prob(D) for D in (1, 10, 100, 1000)]
        assert values == sorted(values)
        assert values[0] > 0.5

    def test_accuracy_decreases_with_d(self):
        """D が大きいほど精度は低い"""
        values = [
            accuracy_bound(BOUNDARY_M, BOUNDARY_U_SQ, BOUNDARY_SIGMA, D)
            for D in (1, 10, 100, 1000)
        ]
        assert values == sorted(values, reverse=True)

    def test_fp_at_default_threshold(self):
        """λ = Dσ²/2 では fp_at_threshold が analytic_fp と一致する"""
        for k, D, m, sigma in [(10, 10, 1000, 0.25), (100, 64, 500, 1.0)]:
            lam = optimal_threshold(D, sigma)
            assert fp_at_threshold(k, D, m, sigma, lam) == pytest.approx(
                analytic_fp(k, D, m), abs=1e-12
            )

    def test_fp_at_zero_threshold(self):
        """λ=0 では偽陽性確率 0.5"""
        assert fp_at_threshold(10, 10, 100, 0.5, 0.0) == pytest.approx(0.5)

    def test_negative_threshold(self):
        """負の λ は DomainError"""
        with pytest.raises(DomainError):
            fp_at_threshold(10, 10, 100, 0.5, -1.0)

    def test_k_greater_than_m(self):
        """k > m は DomainError"""
        with pytest.raises(DomainError):
            analytic_fp(101, 10, 100)

    def test_overlap_limits(self):
        """p=k で 0.5、p=0 で真陽性の式に一致する"""
        assert overlap_fp_prob(100, 100, 10, 1000) == pytest.approx(0.5)
        assert overlap_fp_prob(100, 0, 10, 1000) == pytest.approx(tp_vs_k_prob(100, 10, 1000))

    def test_overlap_invalid(self):
        """p > k は DomainError"""
        with pytest.raises(DomainError):
            overlap_fp_prob(10, 11, 10, 100)

    def test_mi_is_single_sample_tp(self):
        """メンバーシップ推定は k=1 の真陽性と同じ"""
        assert mi_success_prob(10, 1000) == pytest.approx(tp_vs_k_prob(1, 10, 1000))

    def test_tp_and_fp_are_complementary_at_optimum(self):
        """λ = Dσ²/2 では TP = 1 − FP（漸近形）"""
        k, D, m, sigma = 50, 10, 1000, 0.25
        lam = optimal_threshold(D, sigma)
        assert tp_at_threshold(k, D, m, sigma, lam) == pytest.approx(
            1.0 - fp_at_threshold(k, D, m, sigma, lam), abs=1e-12
        )
        assert tp_at_threshold(k, D, m, sigma, lam) == pytest.approx(tp_vs_k_prob(k, D, m))

    def test_optimal_threshold_minimizes_balanced_error(self):
        """Dσ²/2 が (FP+FN)/2 をグリッド上で最小化する"""
        k, D, m, sigma = 100, 10, 1000, 0.25
        best = optimal_threshold(D, sigma)
        grid = np.linspace(0.0, D * sigma**2, 41)
        errors = [balanced_error(k, D, m, sigma, lam) for lam in grid]
        assert balanced_error(k, D, m, sigma, best) <= min(errors) + 1e-12

    def test_theory_inputs_validation(self):
        """TheoryInputs は不正な値を拒否する"""
        assert TheoryInputs(D=10, m=100, sigma=0.5).threshold == pytest.approx(1.25)
        with pytest.raises(DomainError):
            TheoryInputs(D=0, m=100)
        with pytest.raises(DomainError):
            TheoryInputs(D=10, m=100, k=5, p_overlap=6)


class TestGapMoments:
    """gap_moments() / prob_at_threshold() のテスト"""

    def test_independent_model(self):
        """q=0 では平均0、分散 2mDσ⁴/k"""
        mean, var = gap_moments(k=10, q=0, D=10, m=100, sigma=0.5)
        assert mean == 0.0
        assert var == pytest.approx(2 * 100 * 10 * 0.5**4 / 10)

    def test_dependent_model(self):
        """q=k では平均 Dσ²、分散に q²/k の項が加わる"""
        mean, var = gap_moments(k=10, q=10, D=10, m=100, sigma=0.5)
        assert mean == pytest.approx(2.5)
        assert var == pytest.approx((200 + 10) * 10 * 0.5**4 / 10)

    def test_asymptotic_form(self):
        """finite_sample=False では分散は q に依らない"""
        _, var_a = gap_moments(10, 0, 10, 100, 0.5, finite_sample=False)
        _, var_b = gap_moments(10, 10, 10, 100, 0.5, finite_sample=False)
        assert var_a == var_b

    def test_fp_matches_closed_form(self):
        """q=0 の P[t ≥ λ] は fp_at_threshold と一致する"""
        assert prob_at_threshold(10, 0, 10, 1000, 0.25, 0.3) == pytest.approx(
            fp_at_threshold(10, 10, 1000, 0.25, 0.3), abs=1e-12
        )

    def test_invalid_q(self):
        """q > k は DomainError"""
        with pytest.raises(DomainError):
            gap_moments(k=5, q=6, D=10, m=100, sigma=1.0)


class TestTables:
    """fp_curve() / theory_table() のテスト"""

    def test_fp_curve_monotone(self):
        """D=10 の曲線は k に対して単調非増加で、x 列は指定グリッドと一致する"""
        grid = [1, 10, 100, 1000]
        frame = fp_curve(10, 5000, grid)
        assert frame["k"].tolist() == grid
        assert np.all(np.diff(frame["analytic_fp"].to_numpy()) <= 0)

    def test_fp_curve_empty(self):
        """空のグリッドは DomainError"""
        with pytest.raises(DomainError):
            fp_curve(10, 5000, [])

    def test_theory_table_contains_anchors(self):
        """表に3つの数値例が含まれる"""
        table = theory_table()
        assert list(table.columns) == ["formula", "inputs", "value"]
        acc = table[table["formula"] == "accuracy_bound"]["value"].to_numpy()
        assert acc[0] > acc[-1]
        assert acc[-1] == pytest.approx(0.6241, abs=5e-4)
        assert acc[1] == pytest.approx(0.9992, abs=5e-4)
        fp = table[table["formula"] == "analytic_fp"]["value"].iloc[0]
        assert fp == pytest.approx(0.309, abs=1e-3)
        assert set(table["formula"]) >= {"di_success_prob", "tp_vs_k_prob", "mi_success_prob"}
