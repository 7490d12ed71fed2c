"""
モンテカルロ検証ハーネス
シード付きの独立試行で判定関数 Ψ の陽性率を推定し、解析式と比較する
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):  # type: ignore[no-redef]
        __str__ = str.__str__
        __format__ = str.__format__

import numpy as np
import pandas as pd

from core import analytic
from core.distribution import Dataset, DistributionSpec, Provenance, sample_dataset
from core.errors import PlanError
from core.linear_di import DecisionConfig, accuracy, margins, psi_decide, train_linear
from utils.seeding import derive_seed, parallel_map

logger = logging.getLogger(__name__)

DEFAULT_N_TRIALS = 10_000
# 1ワーカーに渡す試行数
TRIAL_CHUNK = 500

SWEEP_COLUMNS = [
    "scenario",
    "k",
    "D",
    "m",
    "lambda",
    "n_trials",
    "rate",
    "stderr",
    "analytic",
    "z_gap",
]
SWEEP_PARAMETERS = ("k", "D", "m", "lambda")


class Scenario(StrEnum):
    """試行のシナリオ"""

    TP_DEPENDENT = "TP_dependent"
    FP_INDEPENDENT = "FP_independent"
    OVERLAP = "OVERLAP"
    MI = "MI"


@dataclass(frozen=True)
class TrialPlan:
    """
    モンテカルロ試行の計画

    Attributes:
        spec: データ分布
        k_reveal: 公開サンプル数
        lam: しきい値（Noneならシナリオの既定値）
        n_trials: 試行回数
        scenario: シナリオ
        base_seed: 基準シード
        p_overlap: OVERLAP で被疑モデルの学習集合に含まれない公開サンプル数
        finite_sample: 解析値に有限標本の分散を使うか
    """

    spec: DistributionSpec
    k_reveal: int
    lam: float | None = None
    n_trials: int = DEFAULT_N_TRIALS
    scenario: Scenario = Scenario.FP_INDEPENDENT
    base_seed: int = 0
    p_overlap: int = 0
    finite_sample: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        m = self.spec.dataset_size
        if self.n_trials < 1:
            raise PlanError(f"試行回数は1以上が必要です: {self.n_trials}")
        if not 1 <= self.k_reveal <= m:
            raise PlanError(f"1 ≤ k ≤ m が必要です: k={self.k_reveal}, m={m}")
        if self.scenario is Scenario.MI and self.k_reveal != 1:
            raise PlanError(f"MI シナリオは k=1 が必要です: k={self.k_reveal}")
        if self.scenario is Scenario.OVERLAP:
            if not 0 <= self.p_overlap <= self.k_reveal:
                raise PlanError(
                    f"0 ≤ p ≤ k が必要です: p={self.p_overlap}, k={self.k_reveal}"
                )
        elif self.p_overlap != 0:
            raise PlanError(f"p は OVERLAP シナリオでのみ指定できます: {self.scenario}")
        if self.lam is not None and self.lam < 0:
            raise PlanError(f"λ は0以上が必要です: {self.lam}")

    @property
    def members(self) -> int:
        """公開サンプルのうち被疑モデルの学習集合に含まれる数 q"""
        if self.scenario is Scenario.FP_INDEPENDENT:
            return 0
        if self.scenario is Scenario.OVERLAP:
            return self.k_reveal - self.p_overlap
        return self.k_reveal

    @property
    def threshold(self) -> float:
        if self.lam is not None:
            return self.lam
        d_sigma_sq = self.spec.noise_dim * self.spec.noise_std**2
        if self.scenario is Scenario.OVERLAP:
            return self.members * d_sigma_sq / (2.0 * self.k_reveal)
        return d_sigma_sq / 2.0

    @property
    def label(self) -> str:
        if self.scenario is Scenario.OVERLAP:
            return f"OVERLAP({self.p_overlap})"
        return str(self.scenario)


@dataclass(frozen=True)
class TrialOutcome:
    """
    試行結果の集計

    z_gap は stderr が0のとき定義されず NaN になる。
    """

    positive_rate: float
    stderr: float
    n_trials: int
    analytic_prediction: float
    z_gap: float

    @classmethod
    def from_count(
        cls, positives: int, n_trials: int, prediction: float
    ) -> "TrialOutcome":
        rate = positives / n_trials
        stderr = math.sqrt(rate * (1.0 - rate) / n_trials)
        z_gap = (rate - prediction) / stderr if stderr > 0 else math.nan
        return cls(
            positive_rate=rate,
            stderr=stderr,
            n_trials=n_trials,
            analytic_prediction=prediction,
            z_gap=z_gap,
        )

    @property
    def z_gap_defined(self) -> bool:
        return not math.isnan(self.z_gap)


def analytic_prediction(plan: TrialPlan) -> float:
    """計画に対応する解析的な陽性確率"""
    spec = plan.spec
    k, D, m, sigma = plan.k_reveal, spec.noise_dim, spec.dataset_size, spec.noise_std
    lam = plan.threshold
    if plan.finite_sample:
        return analytic.prob_at_threshold(k, plan.members, D, m, sigma, lam)
    if plan.scenario is Scenario.FP_INDEPENDENT:
        return analytic.fp_at_threshold(k, D, m, sigma, lam)
    if plan.scenario is Scenario.TP_DEPENDENT:
        return analytic.tp_at_threshold(k, D, m, sigma, lam)
    if plan.scenario is Scenario.OVERLAP and plan.lam is None:
        return analytic.overlap_fp_prob(k, plan.p_overlap, D, m)
    return analytic.prob_at_threshold(
        k, plan.members, D, m, sigma, lam, finite_sample=False
    )


def run_single_trial(plan: TrialPlan, trial_index: int) -> int:
    """
    1回の試行を実行し、Ψ の判定（1 or 0）を返す

    データセットは試行ごとに派生シードから再生成する。
    """
    seed = derive_seed(plan.base_seed, "trial", trial_index)
    spec, m = plan.spec, plan.spec.dataset_size
    cfg = DecisionConfig(lam=plan.threshold, k_reveal=plan.k_reveal)
    s0 = sample_dataset(spec, m, derive_seed(seed, "S_0"), Provenance.S_0)

    if plan.scenario is Scenario.OVERLAP:
        revealed = sample_dataset(spec, plan.k_reveal, derive_seed(seed, "S_V"), Provenance.S_V)
        shared = revealed.subset(np.arange(plan.members))
        parts = [shared] if plan.members else []
        if m > plan.members:
            parts.append(
                sample_dataset(spec, m - plan.members, derive_seed(seed, "S_I"), Provenance.S_I)
            )
        suspect = train_linear(Dataset.merge(parts, Provenance.S_I))
        return psi_decide(suspect, revealed, s0, cfg, derive_seed(seed, "psi")).decision

    sv = sample_dataset(spec, m, derive_seed(seed, "S_V"), Provenance.S_V)
    if plan.scenario is Scenario.FP_INDEPENDENT:
        si = sample_dataset(spec, m, derive_seed(seed, "S_I"), Provenance.S_I)
        suspect = train_linear(si)
    else:
        suspect = train_linear(sv)
    return psi_decide(suspect, sv, s0, cfg, derive_seed(seed, "psi")).decision


def _count_positives(job: tuple[TrialPlan, int, int]) -> int:
    plan, start, stop = job
    return sum(run_single_trial(plan, i) for i in range(start, stop))


def run_trials(plan: TrialPlan, workers: int = 1) -> TrialOutcome:
    """
    計画どおりに試行を繰り返し、陽性率と解析値との差を返す

    同じ計画（base_seedを含む）からは並列数によらず同じ結果になる。
    """
    jobs = [
        (plan, start, min(start + TRIAL_CHUNK, plan.n_trials))
        for start in range(0, plan.n_trials, TRIAL_CHUNK)
    ]
    positives = sum(parallel_map(_count_positives, jobs, workers=workers))
    outcome = TrialOutcome.from_count(positives, plan.n_trials, analytic_prediction(plan))
    if not outcome.z_gap_defined:
        logger.warning(f"stderr が0のため z_gap を定義できません: {plan.label}")
    logger.info(
        f"試行完了: {plan.label}, k={plan.k_reveal}, D={plan.spec.noise_dim}, "
        f"率={outcome.positive_rate:.4f}, 解析値={outcome.analytic_prediction:.4f}"
    )
    return outcome


def point_plan(template: TrialPlan, vary: str, value: float) -> TrialPlan:
    """
    テンプレートの1パラメータを置き換えた計画

    Raises:
        PlanError: vary が k, D, m, lambda 以外の場合
    """
    if vary == "k":
        return replace(template, k_reveal=int(value))
    if vary == "D":
        return replace(template, spec=replace(template.spec, noise_dim=int(value)))
    if vary == "m":
        return replace(template, spec=replace(template.spec, dataset_size=int(value)))
    if vary == "lambda":
        return replace(template, lam=float(value))
    raise PlanError(f"変化させるパラメータは {SWEEP_PARAMETERS} のいずれかです: {vary}")


def outcome_row(plan: TrialPlan, outcome: TrialOutcome) -> dict[str, object]:
    return {
        "scenario": plan.label,
        "k": plan.k_reveal,
        "D": plan.spec.noise_dim,
        "m": plan.spec.dataset_size,
        "lambda": plan.threshold,
        "n_trials": outcome.n_trials,
        "rate": outcome.positive_rate,
        "stderr": outcome.stderr,
        "analytic": outcome.analytic_prediction,
        "z_gap": outcome.z_gap,
    }


def sweep(
    template: TrialPlan, vary: str, grid: Iterable[float], workers: int = 1
) -> pd.DataFrame:
    """
    1パラメータを変えながら run_trials を繰り返す

    全グリッド点でテンプレートの base_seed を共有する（共通乱数）。
    そのため λ を変える掃引では陽性率が正確に単調になる。

    Returns:
        SWEEP_COLUMNS を列に持つDataFrame
    """
    plans = [point_plan(template, vary, value) for value in grid]
    if not plans:
        raise PlanError("掃引グリッドが空です")
    return evaluate_plans(plans, workers=workers)


def evaluate_plans(plans: Sequence[TrialPlan], workers: int = 1) -> pd.DataFrame:
    rows = [outcome_row(plan, run_trials(plan, workers=workers)) for plan in plans]
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def validation_grid(
    n_trials: int = DEFAULT_N_TRIALS, base_seed: int = 0, sigma: float = 0.25
) -> list[TrialPlan]:
    """
    理論とシミュレーションを照合する標準セル一覧（TP, FP, OVERLAP, MI を含む13セル）

    正規近似が裾まで成り立つよう、D は大きく（100〜200）、k は m に比べて小さく取る。
    D が小さいと t は χ²_D の尺度混合として裾が重くなり、k が m に近いと
    学習サンプル自身の ‖x2‖² による歪みが残るため、どちらも避ける。
    明示しきい値のセルは λ = 64σ² とし、σ を変えても陽性確率は変わらない。
    """

    def spec(D: int, m: int) -> DistributionSpec:
        return DistributionSpec(u=(1.0,), noise_dim=D, noise_std=sigma, dataset_size=m)

    fixed_lam = 64 * sigma**2
    cells = [
        (Scenario.TP_DEPENDENT, spec(100, 100), 5, None, 0),
        (Scenario.TP_DEPENDENT, spec(200, 100), 2, None, 0),
        (Scenario.TP_DEPENDENT, spec(100, 200), 10, None, 0),
        (Scenario.TP_DEPENDENT, spec(100, 100), 10, fixed_lam, 0),
        (Scenario.FP_INDEPENDENT, spec(100, 100), 20, None, 0),
        (Scenario.FP_INDEPENDENT, spec(200, 50), 5, None, 0),
        (Scenario.FP_INDEPENDENT, spec(100, 200), 50, None, 0),
        (Scenario.FP_INDEPENDENT, spec(100, 100), 10, fixed_lam, 0),
        (Scenario.OVERLAP, spec(200, 100), 10, None, 5),
        (Scenario.OVERLAP, spec(100, 100), 20, None, 10),
        (Scenario.OVERLAP, spec(100, 100), 20, None, 20),
        (Scenario.MI, spec(200, 50), 1, None, 0),
        (Scenario.MI, spec(100, 100), 1, None, 0),
    ]
    return [
        TrialPlan(
            spec=s,
            k_reveal=k,
            lam=lam,
            n_trials=n_trials,
            scenario=scenario,
            base_seed=derive_seed(base_seed, "cell", i),
            p_overlap=p,
        )
        for i, (scenario, s, k, lam, p) in enumerate(cells)
    ]


@dataclass(frozen=True)
class MarginGapResult:
    """
    学習データと未見データのマージン差の推定結果

    Attributes:
        mean_gap: 平均マージン差の試行平均
        stderr: その標準誤差
        expected_gap: 理論値 Dσ²
        z_gap: (mean_gap − expected_gap) / stderr
        train_accuracy: 学習データでの精度の試行平均
        test_accuracy: 未見データでの精度の試行平均
    """

    spec: DistributionSpec
    n_trials: int
    mean_gap: float
    stderr: float
    expected_gap: float
    z_gap: float
    train_accuracy: float
    test_accuracy: float


def _margin_gap_trial(job: tuple[DistributionSpec, int, int]) -> tuple[float, float, float]:
    spec, seed, index = job
    trial_seed = derive_seed(seed, "margin_gap", index)
    train = sample_dataset(spec, spec.dataset_size, derive_seed(trial_seed, "train"), Provenance.S_V)
    fresh = sample_dataset(spec, spec.dataset_size, derive_seed(trial_seed, "fresh"), Provenance.S_0)
    f = train_linear(train)
    gap = float(np.mean(margins(f, train)) - np.mean(margins(f, fresh)))
    return gap, accuracy(f, train), accuracy(f, fresh)


def margin_gap_experiment(
    spec: DistributionSpec, n_trials: int, seed: int, workers: int = 1
) -> MarginGapResult:
    """
    閉形式線形モデルで、学習データと未見データの平均マージン差を推定する

    期待値は Dσ²。
    """
    if n_trials < 2:
        raise PlanError(f"標準誤差の推定には2回以上の試行が必要です: {n_trials}")
    results = parallel_map(
        _margin_gap_trial, [(spec, seed, i) for i in range(n_trials)], workers=workers
    )
    table = np.asarray(results, dtype=np.float64)
    gaps = table[:, 0]
    stderr = float(np.std(gaps, ddof=1) / math.sqrt(n_trials))
    expected = spec.noise_dim * spec.noise_std**2
    mean_gap = float(np.mean(gaps))
    logger.info(
        f"マージン差: D={spec.noise_dim}, σ={spec.noise_std}, "
        f"推定={mean_gap:.5f}±{stderr:.5f}, 理論={expected:.5f}"
    )
    return MarginGapResult(
        spec=spec,
        n_trials=n_trials,
        mean_gap=mean_gap,
        stderr=stderr,
        expected_gap=expected,
        z_gap=(mean_gap - expected) / stderr if stderr > 0 else math.nan,
        train_accuracy=float(np.mean(table[:, 1])),
        test_accuracy=float(np.mean(table[:, 2])),
    )
