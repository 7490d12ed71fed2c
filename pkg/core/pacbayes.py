"""
PAC-Bayes 摂動境界
スペクトルノルムに基づく出力摂動の上界、汎化項 ε、マージン類似性を計算し経験的に確かめる
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from core.errors import BoundInapplicableError, DomainError, ShapeError, StructureError
from core.neuralnet import (
    MlpModel,
    forward,
    layer_frobenius_norms,
    layer_spectral_norms,
    margins_nl,
    perturb,
    spectral_norm,
)
from utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

DEFAULT_PROBE_SIZE = 512


@dataclass(frozen=True)
class BoundInputs:
    """
    汎化項 ε の入力

    Attributes:
        B: 入力ノルムの上界 ‖x‖₂ ≤ B
        d: 層数
        h: 最大層幅
        gamma_margin: マージンのしきい値 γ
        m: 学習集合のサイズ
        sigma_p: 摂動の標準偏差
        spectral_norms: 各層の ‖W_i‖₂
        frob_norms: 各層の ‖W_i‖_F
    """

    B: float
    d: int
    h: int
    gamma_margin: float
    m: int
    sigma_p: float
    spectral_norms: tuple[float, ...]
    frob_norms: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "spectral_norms", tuple(float(v) for v in self.spectral_norms))
        object.__setattr__(self, "frob_norms", tuple(float(v) for v in self.frob_norms))
        for name in ("B", "gamma_margin", "sigma_p"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} は正の値が必要です: {getattr(self, name)}")
        if self.d < 1 or self.h < 1 or self.m < 1:
            raise DomainError(f"d, h, m は1以上が必要です: d={self.d}, h={self.h}, m={self.m}")
        if len(self.spectral_norms) != self.d or len(self.frob_norms) != self.d:
            raise ShapeError(f"ノルムのリストの長さが層数 d={self.d} と一致しません")
        if any(v <= 0 for v in self.spectral_norms + self.frob_norms):
            raise DomainError("各層のノルムは正の値が必要です")


def bias_free(model: MlpModel) -> MlpModel:
    """バイアスを0にしたモデル（境界はバイアスなしの評価で扱う）"""
    return MlpModel(
        weights=model.weights,
        biases=tuple(np.zeros_like(b) for b in model.biases),
        activations=model.activations,
        use_bias=False,
        dropout=model.dropout,
    )


def perturbation_bound(model: MlpModel, B: float, u_norms: Sequence[float]) -> float:
    """
    出力変化の上界 e·B·(∏‖W_i‖₂)·Σ ‖U_i‖₂/‖W_i‖₂

    Args:
        model: 対象モデル
        B: 入力ノルムの上界
        u_norms: 各層の摂動のスペクトルノルム ‖U_i‖₂

    Raises:
        BoundInapplicableError: ある層で ‖U_i‖₂ > ‖W_i‖₂/d の場合
    """
    norms = layer_spectral_norms(model)
    u = [float(v) for v in u_norms]
    if len(u) != model.depth:
        raise ShapeError(f"摂動ノルムの数 {len(u)} が層数 {model.depth} と一致しません")
    if B < 0:
        raise DomainError(f"B は0以上が必要です: {B}")
    d = model.depth
    for i, (w_norm, u_norm) in enumerate(zip(norms, u, strict=True)):
        if u_norm > w_norm / d:
            raise BoundInapplicableError(
                f"層{i}: ‖U‖₂={u_norm:.4g} が ‖W‖₂/d={w_norm / d:.4g} を超えています"
            )
    product = math.prod(norms)
    return math.e * B * product * sum(un / wn for un, wn in zip(u, norms, strict=True))


def generalization_epsilon(inputs: BoundInputs) -> float:
    """
    汎化項 ε = √((B²d²h ln(dh) ∏‖W_i‖₂² Σ‖W_i‖_F²/‖W_i‖₂² + ln(dm/σ)) / (γ²m))

    Raises:
        BoundInapplicableError: σ_p が d·m より大きく、根号の中が負になる場合
    """
    b, d, h, m = inputs.B, inputs.d, inputs.h, inputs.m
    product_sq = math.prod(s * s for s in inputs.spectral_norms)
    ratio_sum = sum(
        (f * f) / (s * s)
        for f, s in zip(inputs.frob_norms, inputs.spectral_norms, strict=True)
    )
    complexity = b * b * d * d * h * math.log(d * h) * product_sq * ratio_sum
    confidence = math.log(d * m / inputs.sigma_p)
    radicand = complexity + confidence
    if radicand < 0:
        raise BoundInapplicableError(
            f"汎化項の根号の中が負です ({radicand:.4g}): "
            f"σ_p={inputs.sigma_p} が d·m={d * m} を超えています"
        )
    return math.sqrt(radicand / (inputs.gamma_margin**2 * m))


def bound_inputs_from_model(
    model: MlpModel, B: float, gamma_margin: float, m: int, sigma_p: float
) -> BoundInputs:
    """モデルの重みから BoundInputs を作る"""
    return BoundInputs(
        B=B,
        d=model.depth,
        h=model.max_width,
        gamma_margin=gamma_margin,
        m=m,
        sigma_p=sigma_p,
        spectral_norms=tuple(layer_spectral_norms(model)),
        frob_norms=tuple(layer_frobenius_norms(model)),
    )


def spectral_tail_threshold(sigma_p: float, d: int, h: int) -> float:
    """和集合上界で使うしきい値 t = σ√(2h ln(2dh))"""
    return sigma_p * math.sqrt(2.0 * h * math.log(2.0 * d * h))


def spectral_tail_bound(t: float, sigma_p: float, h: int) -> float:
    """P[‖U‖₂ > t] ≤ 2h·exp(−t²/(2hσ²))（1で打ち切る）"""
    return min(1.0, 2.0 * h * math.exp(-(t * t) / (2.0 * h * sigma_p**2)))


@dataclass(frozen=True)
class TailCheck:
    """スペクトルノルムの裾の経験頻度と予測値"""

    threshold: float
    predicted: float
    empirical: tuple[float, ...]
    n_draws: int

    @property
    def holds(self) -> bool:
        return all(e <= self.predicted for e in self.empirical)


def spectral_tail_check(
    model: MlpModel, sigma_p: float, n_draws: int, seed: int
) -> TailCheck:
    """
    ガウス摂動 U_i の ‖U_i‖₂ が t = σ√(2h ln(2dh)) を超える頻度を層ごとに数える
    """
    if n_draws < 1:
        raise DomainError(f"試行回数は1以上が必要です: {n_draws}")
    d, h = model.depth, model.max_width
    t = spectral_tail_threshold(sigma_p, d, h)
    rng = make_rng(derive_seed(seed, "tail"))
    exceed = np.zeros(d)
    for _ in range(n_draws):
        for i, w in enumerate(model.weights):
            u = rng.standard_normal(w.shape) * sigma_p
            if np.linalg.norm(u, 2) > t:
                exceed[i] += 1
    check = TailCheck(
        threshold=t,
        predicted=spectral_tail_bound(t, sigma_p, h),
        empirical=tuple(float(v) for v in exceed / n_draws),
        n_draws=n_draws,
    )
    logger.info(f"スペクトルノルムの裾: t={t:.4g}, 予測={check.predicted:.4g}, 経験={check.empirical}")
    return check


@dataclass(frozen=True)
class DominationCheck:
    """摂動ごとの実測出力変化と上界"""

    measured: tuple[float, ...]
    bounds: tuple[float, ...]
    inapplicable: int

    @property
    def holds(self) -> bool:
        return all(m <= b for m, b in zip(self.measured, self.bounds, strict=True))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"measured": self.measured, "bound": self.bounds})


def output_deviation(model: MlpModel, perturbed: MlpModel, probes: np.ndarray) -> float:
    """プローブ集合上の max ‖f_{w+u}(x) − f_w(x)‖₂"""
    diff = np.atleast_2d(forward(perturbed, probes)) - np.atleast_2d(forward(model, probes))
    return float(np.max(np.linalg.norm(diff, axis=1)))


def perturbation_domination_check(
    model: MlpModel,
    probes: np.ndarray,
    sigma_p: float,
    n_draws: int,
    seed: int,
) -> DominationCheck:
    """
    ガウス摂動を繰り返し、実測の出力変化が perturbation_bound() 以下かを確かめる

    上界の前提 ‖U_i‖₂ ≤ ‖W_i‖₂/d を満たさない摂動は数えるだけで評価しない。
    """
    base = bias_free(model)
    x = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    B = float(np.max(np.linalg.norm(x, axis=1)))
    rng = make_rng(derive_seed(seed, "domination"))
    measured, bounds = [], []
    inapplicable = 0
    for _ in range(n_draws):
        perturbed, noise = perturb(base, sigma_p, rng)
        try:
            bound = perturbation_bound(base, B, [spectral_norm(u) for u in noise])
        except BoundInapplicableError:
            inapplicable += 1
            continue
        measured.append(output_deviation(base, perturbed, x))
        bounds.append(bound)
    if inapplicable:
        logger.warning(f"前提を満たさない摂動を {inapplicable}/{n_draws} 件除外しました")
    return DominationCheck(
        measured=tuple(measured), bounds=tuple(bounds), inapplicable=inapplicable
    )


@dataclass(frozen=True)
class MarginSimilarity:
    """
    2つのモデルの期待マージン差と汎化項 ε の比較

    Attributes:
        base_gap: 摂動なしでの |E p(f_V,x) − E p(f_I,x)|
        perturbed_gaps: 摂動ごとの |E p(f_V+U,x) − E p(f_I+U',x)|
        epsilon: 2つのモデルの ε の大きい方
        triangle_bounds: 摂動ごとの上界（2つの perturbation_bound の和）
        max_gap: 摂動なしでのサンプル単位のマージン差の最大値
    """

    base_gap: float
    perturbed_gaps: tuple[float, ...]
    epsilon: float
    triangle_bounds: tuple[float, ...] = field(default_factory=tuple)
    max_gap: float = 0.0

    @property
    def fraction_within_epsilon(self) -> float:
        if not self.perturbed_gaps:
            return float(self.base_gap <= self.epsilon)
        return float(np.mean(np.asarray(self.perturbed_gaps) <= self.epsilon))


def _same_structure(a: MlpModel, b: MlpModel) -> bool:
    return a.layer_sizes == b.layer_sizes and a.activations == b.activations


def margin_similarity_check(
    fv: MlpModel,
    fi: MlpModel,
    probes: np.ndarray,
    classes: np.ndarray,
    sigma_p: float,
    n_perturbations: int,
    seed: int,
    *,
    m: int,
    gamma_margin: float = 1.0,
) -> MarginSimilarity:
    """
    同じ構造の2モデルについて、プローブ集合上の期待マージン差を摂動下で推定する

    Raises:
        StructureError: 2つのモデルの構造が異なる場合
    """
    if not _same_structure(fv, fi):
        raise StructureError(f"モデルの構造が異なります: {fv.layer_sizes} と {fi.layer_sizes}")
    x = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    base_v, base_i = bias_free(fv), bias_free(fi)
    B = float(np.max(np.linalg.norm(x, axis=1)))
    sample_gap = margins_nl(base_v, x, classes) - margins_nl(base_i, x, classes)
    epsilon = max(
        generalization_epsilon(bound_inputs_from_model(f, B, gamma_margin, m, sigma_p))
        for f in (base_v, base_i)
    )
    rng = make_rng(derive_seed(seed, "margin_similarity"))
    gaps, triangle = [], []
    for _ in range(n_perturbations):
        pv, uv = perturb(base_v, sigma_p, rng)
        pi, ui = perturb(base_i, sigma_p, rng)
        gaps.append(float(abs(np.mean(margins_nl(pv, x, classes) - margins_nl(pi, x, classes)))))
        try:
            triangle.append(
                perturbation_bound(base_v, B, [spectral_norm(u) for u in uv])
                + perturbation_bound(base_i, B, [spectral_norm(u) for u in ui])
            )
        except BoundInapplicableError:
            triangle.append(math.inf)
    report = MarginSimilarity(
        base_gap=float(abs(np.mean(sample_gap))),
        perturbed_gaps=tuple(gaps),
        epsilon=epsilon,
        triangle_bounds=tuple(triangle),
        max_gap=float(np.max(np.abs(sample_gap))),
    )
    logger.info(
        f"マージン類似性: 差={report.base_gap:.4g}, ε={epsilon:.4g}, "
        f"ε以内の割合={report.fraction_within_epsilon:.2f}"
    )
    return report


def bound_components_frame(inputs: BoundInputs) -> pd.DataFrame:
    """層ごとのノルムと β, ε をまとめた表"""
    beta = math.prod(inputs.spectral_norms) ** (1.0 / inputs.d)
    frame = pd.DataFrame(
        {
            "layer": list(range(inputs.d)),
            "spectral_norm": inputs.spectral_norms,
            "frobenius_norm": inputs.frob_norms,
        }
    )
    frame["beta"] = beta
    frame["epsilon"] = generalization_epsilon(inputs)
    return frame
