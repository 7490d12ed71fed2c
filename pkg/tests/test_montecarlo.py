"""
core/montecarlo.py のテスト
"""

import math

import numpy as np
import pytest

from core import analytic
from core.distribution import DistributionSpec
from core.errors import PlanError
from core.montecarlo import (
    SWEEP_COLUMNS,
    Scenario,
    TrialOutcome,
    TrialPlan,
    analytic_prediction,
    evaluate_plans,
    margin_gap_experiment,
    point_plan,
    run_single_trial,
    run_trials,
    sweep,
    validation_grid,
)


@pytest.fixture
def mc_spec():
    """試行用の小さな仕様（D=10, σ=0.25, m=200）"""
    return DistributionSpec(u=(1.0,), noise_dim=10, noise_std=0.25, dataset_size=200)


class TestTrialPlan:
    """TrialPlan のテスト"""

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"k_reveal": 10, "n_trials": 0},
            {"k_reveal": 0},
            {"k_reveal": 201},
            {"k_reveal": 2, "scenario": Scenario.MI},
            {"k_reveal": 10, "scenario": Scenario.OVERLAP, "p_overlap": 11},
            {"k_reveal": 10, "p_overlap": 3},
            {"k_reveal": 10, "lam": -0.5},
        ],
    )
    def test_invalid(self, mc_spec, kwargs):
        """不正な計画は PlanError"""
        with pytest.raises(PlanError):
            TrialPlan(spec=mc_spec, **kwargs)

    def test_members(self, mc_spec):
        """各シナリオで学習集合に含まれる公開サンプル数 q"""
        assert TrialPlan(mc_spec, 10).members == 0
        assert TrialPlan(mc_spec, 10, scenario=Scenario.TP_DEPENDENT).members == 10
        overlap = TrialPlan(mc_spec, 10, scenario=Scenario.OVERLAP, p_overlap=4)
        assert overlap.members == 6

    def test_default_threshold(self, mc_spec):
        """既定のしきい値は Dσ²/2、OVERLAP では q·Dσ²/(2k)"""
        assert TrialPlan(mc_spec, 10).threshold == pytest.approx(0.3125)
        overlap = TrialPlan(mc_spec, 10, scenario=Scenario.OVERLAP, p_overlap=5)
        assert overlap.threshold == pytest.approx(5 * 0.625 / 20)
        assert TrialPlan(mc_spec, 10, lam=0.1).threshold == 0.1

    def test_label(self, mc_spec):
        """ラベルは OVERLAP のみ p を含む"""
        assert TrialPlan(mc_spec, 10).label == "FP_independent"
        assert TrialPlan(mc_spec, 10, scenario="OVERLAP", p_overlap=3).label == "OVERLAP(3)"


class TestTrialOutcome:
    """TrialOutcome のテスト"""

    def test_from_count(self):
        """率と標準誤差"""
        outcome = TrialOutcome.from_count(25, 100, 0.2)
        assert outcome.positive_rate == 0.25
        assert outcome.stderr == pytest.approx(math.sqrt(0.25 * 0.75 / 100))
        assert outcome.z_gap == pytest.approx(0.05 / outcome.stderr)

    def test_zero_stderr(self):
        """率が0または1のとき z_gap は定義されない"""
        assert not TrialOutcome.from_count(0, 50, 0.1).z_gap_defined
        assert not TrialOutcome.from_count(50, 50, 0.9).z_gap_defined


class TestAnalyticPrediction:
    """analytic_prediction() のテスト"""

    def test_asymptotic_mi(self):
        """漸近形の MI は mi_success_prob と一致する"""
        spec = DistributionSpec(u=(1.0,), noise_dim=64, noise_std=0.25, dataset_size=32)
        plan = TrialPlan(spec, 1, scenario=Scenario.MI, finite_sample=False)
        assert analytic_prediction(plan) == pytest.approx(analytic.mi_success_prob(64, 32))

    def test_asymptotic_fp(self, mc_spec):
        """漸近形の FP は analytic_fp と一致する"""
        plan = TrialPlan(mc_spec, 50, finite_sample=False)
        assert analytic_prediction(plan) == pytest.approx(analytic.analytic_fp(50, 10, 200))

    def test_overlap_without_lambda(self, mc_spec):
        """λ 未指定の漸近形 OVERLAP は overlap_fp_prob"""
        plan = TrialPlan(
            mc_spec, 20, scenario=Scenario.OVERLAP, p_overlap=5, finite_sample=False
        )
        assert analytic_prediction(plan) == pytest.approx(
            analytic.overlap_fp_prob(20, 5, 10, 200)
        )


class TestRunTrials:
    """run_single_trial() / run_trials() のテスト"""

    def test_single_trial_deterministic(self, mc_spec):
        """同じ計画と試行番号からは同じ判定"""
        plan = TrialPlan(mc_spec, 20, n_trials=5, scenario=Scenario.TP_DEPENDENT)
        assert [run_single_trial(plan, i) for i in range(5)] == [
            run_single_trial(plan, i) for i in range(5)
        ]

    def test_workers_do_not_change_result(self, mc_spec):
        """並列数によらず同じ結果"""
        plan = TrialPlan(mc_spec, 20, n_trials=600, base_seed=3)
        assert run_trials(plan, workers=1) == run_trials(plan, workers=2)

    def test_zero_threshold_tp(self, mc_spec):
        """λ=0, k=m の TP はほぼ1"""
        outcome = run_trials(
            TrialPlan(mc_spec, 200, lam=0.0, n_trials=100, scenario=Scenario.TP_DEPENDENT)
        )
        assert outcome.positive_rate >= 0.75

    @pytest.mark.slow
    def test_fp_rate_matches_prediction(self, mc_spec):
        """FP の陽性率は解析値と統計的に整合する"""
        outcome = run_trials(TrialPlan(mc_spec, 50, n_trials=1000, base_seed=1))
        assert abs(outcome.z_gap) < 5

    @pytest.mark.slow
    def test_tp_rate_matches_prediction(self, mc_spec):
        """TP の陽性率は解析値と統計的に整合する"""
        outcome = run_trials(
            TrialPlan(mc_spec, 50, n_trials=1000, scenario=Scenario.TP_DEPENDENT, base_seed=2)
        )
        assert abs(outcome.z_gap) < 5


class TestSweep:
    """point_plan() / sweep() / validation_grid() のテスト"""

    def test_point_plan(self, mc_spec):
        """指定したパラメータだけが置き換わる"""
        template = TrialPlan(mc_spec, 10)
        assert point_plan(template, "k", 30).k_reveal == 30
        assert point_plan(template, "D", 64).spec.noise_dim == 64
        assert point_plan(template, "m", 400).spec.dataset_size == 400
        assert point_plan(template, "lambda", 0.2).lam == 0.2
        with pytest.raises(PlanError):
            point_plan(template, "sigma", 1.0)

    def test_single_point_equals_run_trials(self, mc_spec):
        """1点の掃引は run_trials と同じ結果"""
        template = TrialPlan(mc_spec, 10, n_trials=100, base_seed=5)
        frame = sweep(template, "k", [20])
        outcome = run_trials(point_plan(template, "k", 20))
        assert list(frame.columns) == SWEEP_COLUMNS
        assert frame["rate"].iloc[0] == outcome.positive_rate
        assert frame["k"].iloc[0] == 20

    def test_lambda_sweep_monotone(self, mc_spec):
        """共通乱数により λ に対して陽性率は単調非増加"""
        template = TrialPlan(mc_spec, 20, n_trials=200, scenario=Scenario.TP_DEPENDENT)
        frame = sweep(template, "lambda", np.linspace(0.0, 0.625, 6))
        assert np.all(np.diff(frame["rate"].to_numpy()) <= 0)

    def test_empty_grid(self, mc_spec):
        """空のグリッドは PlanError"""
        with pytest.raises(PlanError):
            sweep(TrialPlan(mc_spec, 10), "k", [])

    def test_validation_grid(self):
        """13セルで全シナリオを含み、セルごとに異なるシード"""
        plans = validation_grid(n_trials=10, base_seed=0)
        assert len(plans) == 13
        assert {p.scenario for p in plans} == set(Scenario)
        assert len({p.base_seed for p in plans}) == 13
        assert all(p.n_trials == 10 for p in plans)

    @pytest.mark.slow
    def test_validation_grid_matches_theory(self):
        """標準セルはすべてシミュレーションと解析値が4標準誤差以内で一致する"""
        frame = evaluate_plans(validation_grid(n_trials=2000, base_seed=0))
        assert len(frame) == 13
        assert frame["z_gap"].notna().all()
        assert (frame["z_gap"].abs() <= 4.0).all(), frame[["scenario", "rate", "analytic", "z_gap"]]


class TestMarginGap:
    """margin_gap_experiment() のテスト"""

    def test_gap_near_expectation(self):
        """平均マージン差は Dσ² に近く、学習精度は未見精度以上"""
        spec = DistributionSpec(u=(0.05,), noise_dim=64, noise_std=1.0, dataset_size=100)
        result = margin_gap_experiment(spec, n_trials=60, seed=0)
        assert result.expected_gap == pytest.approx(64.0)
        assert abs(result.z_gap) < 5
        assert result.train_accuracy >= result.test_accuracy

    def test_too_few_trials(self, mc_spec):
        """試行1回では PlanError"""
        with pytest.raises(PlanError):
            margin_gap_experiment(mc_spec, n_trials=1, seed=0)
