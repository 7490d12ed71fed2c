"""
解析式モジュール
標準正規分布のCDF Φ を基礎に、偽陽性・真陽性・精度の閉形式確率を計算する
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import pandas as pd
from scipy import special

from core.errors import DomainError

logger = logging.getLogger(__name__)

# 精度上界の境界入力（m=500, ‖u‖₂=1/√m, σ²=1/(10√m)）
ACCURACY_BOUNDARY_M = 500
ACCURACY_NOISE_DIMS = (1, 10, 100, 1000)

# 偽陽性の数値例（k=10000, D=10, m=50000）
FP_ANCHOR_K = 10000
FP_ANCHOR_D = 10
FP_ANCHOR_M = 50000


@dataclass(frozen=True)
class TheoryInputs:
    """
    解析式の入力パラメータ一式

    Attributes:
        D: ノイズ次元
        m: データセットサイズ
        k: 公開するサンプル数
        sigma: ノイズの標準偏差
        u_norm_sq: ‖u‖₂²
        p_overlap: 被疑モデルの学習集合に含まれない公開サンプル数
        lam: 判定しきい値 λ（Noneなら Dσ²/2）
    """

    D: int
    m: int
    k: int = 1
    sigma: float = 1.0
    u_norm_sq: float = 1.0
    p_overlap: int = 0
    lam: float | None = None

    def __post_init__(self) -> None:
        _require_counts(D=self.D, m=self.m, k=self.k)
        _require_positive(sigma=self.sigma, u_norm_sq=self.u_norm_sq)
        if not 0 <= self.p_overlap <= self.k:
            raise DomainError(f"0 ≤ p ≤ k が必要です: p={self.p_overlap}, k={self.k}")

    @property
    def threshold(self) -> float:
        return optimal_threshold(self.D, self.sigma) if self.lam is None else self.lam


def _require_counts(**counts: int) -> None:
    for name, value in counts.items():
        if value < 1:
            raise DomainError(f"{name} は1以上が必要です: {value}")


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not (value > 0 and math.isfinite(value)):
            raise DomainError(f"{name} は正の有限値が必要です: {value}")


def _require_k_le_m(k: int, m: int) -> None:
    _require_counts(k=k, m=m)
    if k > m:
        raise DomainError(f"k ≤ m が必要です: k={k}, m={m}")


def phi(z: float) -> float:
    """
    標準正規分布の累積分布関数 Φ(z)

    scipy.special.ndtr（erfc系の評価）を用い、絶対誤差は1e-10を十分下回る。

    Raises:
        DomainError: z が NaN の場合
    """
    z = float(z)
    if math.isnan(z):
        raise DomainError("Φ の引数が NaN です")
    return float(special.ndtr(z))


def di_success_prob(D: int) -> float:
    """線形モデルでDIが盗用を正しく判定する確率 1−Φ(−√D/(2√2))"""
    _require_counts(D=D)
    return 1.0 - phi(-math.sqrt(D) / (2.0 * math.sqrt(2.0)))


def accuracy_bound(m: int, u_norm_sq: float, sigma: float, D: int) -> float:
    """未見サンプルの正解確率 1−Φ(−m‖u‖²/(√(mD)σ²))"""
    _require_counts(m=m, D=D)
    _require_positive(u_norm_sq=u_norm_sq, sigma=sigma)
    return 1.0 - phi(-m * u_norm_sq / (math.sqrt(m * D) * sigma**2))


def analytic_fp(k: int, D: int, m: int) -> float:
    """λ = Dσ²/2 での偽陽性確率 1−Φ(√(kD)/(2√(2m)))"""
    _require_k_le_m(k, m)
    _require_counts(D=D)
    return 1.0 - phi(math.sqrt(k * D) / (2.0 * math.sqrt(2.0 * m)))


def fp_at_threshold(k: int, D: int, m: int, sigma: float, lam: float) -> float:
    """任意のしきい値 λ での偽陽性確率 1−Φ(√k·λ/(√(2mD)σ²))"""
    _require_counts(k=k, D=D, m=m)
    _require_positive(sigma=sigma)
    if lam < 0:
        raise DomainError(f"λ は0以上が必要です: {lam}")
    return 1.0 - phi(math.sqrt(k) * lam / (math.sqrt(2.0 * m * D) * sigma**2))


def overlap_fp_prob(k: int, p_overlap: int, D: int, m: int) -> float:
    """
    公開サンプルのうち p 個が被疑モデルの学習集合に含まれない場合の判定確率

    1−Φ(−(k−p)√D/(2√(2mk)))。p=k で 0.5、p=0 で真陽性の式に一致する。

    Raises:
        DomainError: p > k または p < 0 の場合
    """
    _require_k_le_m(k, m)
    _require_counts(D=D)
    if p_overlap < 0 or p_overlap > k:
        raise DomainError(f"0 ≤ p ≤ k が必要です: p={p_overlap}, k={k}")
    return 1.0 - phi(-(k - p_overlap) * math.sqrt(D) / (2.0 * math.sqrt(2.0 * m * k)))


def mi_success_prob(D: int, m: int) -> float:
    """サンプル単位のメンバーシップ推定の成功確率 1−Φ(−√D/(2√(2m)))"""
    _require_counts(D=D, m=m)
    return 1.0 - phi(-math.sqrt(D) / (2.0 * math.sqrt(2.0 * m)))


def tp_vs_k_prob(k: int, D: int, m: int) -> float:
    """k 個公開時の真陽性確率 1−Φ(−√(kD)/(2√(2m)))"""
    _require_k_le_m(k, m)
    _require_counts(D=D)
    return 1.0 - phi(-math.sqrt(k * D) / (2.0 * math.sqrt(2.0 * m)))


def fp_curve(D: int, m: int, k_grid: Iterable[int]) -> pd.DataFrame:
    """
    公開サンプル数 k に対する偽陽性確率の曲線

    Returns:
        列 k, analytic_fp を持つDataFrame（kの昇順で単調非増加）
    """
    ks = [int(k) for k in k_grid]
    if not ks:
        raise DomainError("k のグリッドが空です")
    return pd.DataFrame(
        {"k": ks, "analytic_fp": [analytic_fp(k, D, m) for k in ks]}
    )


def optimal_threshold(D: int, sigma: float) -> float:
    """(FP+FN)/2 を最小化するしきい値 Dσ²/2"""
    _require_counts(D=D)
    _require_positive(sigma=sigma)
    return D * sigma**2 / 2.0


def gap_moments(
    k: int, q: int, D: int, m: int, sigma: float, finite_sample: bool = True
) -> tuple[float, float]:
    """
    マージン差統計量 t の平均と分散

    公開した k 個のうち q 個が被疑モデルの学習集合に含まれるとき、
    平均は qDσ²/k、分散は (2m + q²/k)Dσ⁴/k。
    finite_sample=False の場合は分散を漸近形 2mDσ⁴/k とする。

    Returns:
        (平均, 分散)
    """
    _require_counts(k=k, D=D, m=m)
    _require_positive(sigma=sigma)
    if not 0 <= q <= min(k, m):
        raise DomainError(f"0 ≤ q ≤ min(k, m) が必要です: q={q}, k={k}, m={m}")
    s4 = sigma**4
    mean = q * D * sigma**2 / k
    if finite_sample:
        var = (2.0 * m + q * q / k) * D * s4 / k
    else:
        var = 2.0 * m * D * s4 / k
    return mean, var


def prob_at_threshold(
    k: int,
    q: int,
    D: int,
    m: int,
    sigma: float,
    lam: float,
    finite_sample: bool = True,
) -> float:
    """正規近似による P[t ≥ λ]"""
    mean, var = gap_moments(k, q, D, m, sigma, finite_sample=finite_sample)
    return phi((mean - lam) / math.sqrt(var))


def tp_at_threshold(k: int, D: int, m: int, sigma: float, lam: float) -> float:
    """任意のしきい値 λ での真陽性確率 1−Φ((λ−Dσ²)√k/(√(2mD)σ²))"""
    return prob_at_threshold(k, k, D, m, sigma, lam, finite_sample=False)


def balanced_error(k: int, D: int, m: int, sigma: float, lam: float) -> float:
    """判定誤りの平均 (FP + FN)/2"""
    fp = fp_at_threshold(k, D, m, sigma, lam)
    fn = 1.0 - tp_at_threshold(k, D, m, sigma, lam)
    return (fp + fn) / 2.0


def _format_inputs(**inputs: float) -> str:
    return ";".join(f"{name}={value:.10g}" for name, value in inputs.items())


def theory_table(
    noise_dims: Sequence[int] = ACCURACY_NOISE_DIMS,
    boundary_m: int = ACCURACY_BOUNDARY_M,
    fp_k: int = FP_ANCHOR_K,
    fp_d: int = FP_ANCHOR_D,
    fp_m: int = FP_ANCHOR_M,
) -> pd.DataFrame:
    """
    解析値の一覧表を作る

    境界入力での精度、偽陽性の数値例、Dごとの判定成功確率を含む。

    Returns:
        列 formula, inputs, value を持つDataFrame
    """
    u_norm_sq = 1.0 / boundary_m
    sigma = math.sqrt(1.0 / (10.0 * math.sqrt(boundary_m)))
    rows = []
    for D in noise_dims:
        rows.append(
            {
                "formula": "accuracy_bound",
                "inputs": _format_inputs(
                    m=boundary_m, u_norm_sq=u_norm_sq, sigma=sigma, D=D
                ),
                "value": accuracy_bound(boundary_m, u_norm_sq, sigma, D),
            }
        )
    rows.append(
        {
            "formula": "analytic_fp",
            "inputs": _format_inputs(k=fp_k, D=fp_d, m=fp_m),
            "value": analytic_fp(fp_k, fp_d, fp_m),
        }
    )
    for D in noise_dims:
        rows.append(
            {
                "formula": "di_success_prob",
                "inputs": _format_inputs(D=D),
                "value": di_success_prob(D),
            }
        )
    rows.append(
        {
            "formula": "tp_vs_k_prob",
            "inputs": _format_inputs(k=fp_k, D=fp_d, m=fp_m),
            "value": tp_vs_k_prob(fp_k, fp_d, fp_m),
        }
    )
    rows.append(
        {
            "formula": "mi_success_prob",
            "inputs": _format_inputs(D=fp_d, m=fp_m),
            "value": mi_success_prob(fp_d, fp_m),
        }
    )
    logger.debug(f"解析値の表を作成: {len(rows)}行")
    return pd.DataFrame(rows, columns=["formula", "inputs", "value"])
