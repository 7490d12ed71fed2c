"""
所有権検証
埋め込みから識別器 g_V を学習し、被疑モデルのスコアに片側Welch t検定を行う
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):  # type: ignore[no-redef]
        __str__ = str.__str__
        __format__ = str.__format__
from typing import Any

import numpy as np
from scipy import stats

from core.blindwalk import (
    Embedding,
    SuspectModel,
    WalkConfig,
    embed_dataset,
    embed_samples,
)
from core.distribution import Dataset
from core.errors import ProtocolError, ShapeError, TrainingError
from core.neuralnet import Activation, MlpModel, TrainConfig, fit, forward, init_mlp
from utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.01
DEFAULT_HIDDEN_WIDTH = 32
DEFAULT_DROPOUT = 0.1
DEFAULT_GV_TRAIN = TrainConfig(epochs=100, batch_size=32, learning_rate=0.05)

# 回帰の目標値（S_V 由来は低く、S_0 由来は高く）
TARGET_PRIVATE = 0.0
TARGET_PUBLIC = 1.0

REPORT_COLUMNS = ["suspect", "delta_mu", "t", "p", "alpha", "verdict", "k", "seed"]


class Architecture(StrEnum):
    TWO_LAYER_TANH = "two_layer_tanh"
    FOUR_LAYER_DROPOUT = "four_layer_dropout"


class Verdict(StrEnum):
    STOLEN = "stolen"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True, eq=False)
class Distinguisher:
    """
    埋め込みから信頼度スコアを予測する回帰モデル g_V

    埋め込みの距離は方向の順のまま、学習時の平均・標準偏差で標準化してから入力する。
    方向は歩行鍵とサンプル番号で決まるため、同じサンプルの同じ列は同じ方向を表す。
    """

    regressor: MlpModel
    feature_mean: np.ndarray
    feature_std: np.ndarray
    arch: Architecture = Architecture.TWO_LAYER_TANH
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.regressor.input_dim

    def features(self, distances: np.ndarray) -> np.ndarray:
        """距離ベクトル（またはその行列）を識別器の入力に変換する"""
        d = np.asarray(distances, dtype=np.float64)
        if d.shape[-1] != self.n_features:
            raise ShapeError(f"埋め込み長 {d.shape[-1]} が識別器の入力次元 {self.n_features} と一致しません")
        return (d - self.feature_mean) / self.feature_std


@dataclass(frozen=True)
class VerificationReport:
    """
    仮説検定 H0: μ ≤ μ_V 対 Ha: μ > μ_V の結果

    Attributes:
        mu: S_0 由来の埋め込みの平均スコア
        mu_v: S_V 由来の埋め込みの平均スコア
        delta_mu: μ − μ_V
        t_statistic: Welchの t 統計量
        p_value: 片側 p 値
        alpha: 有意水準
        verdict: p < α なら stolen
        flagged: 両群とも分散0で慣例値を使った場合True
    """

    mu: float
    mu_v: float
    delta_mu: float
    t_statistic: float
    p_value: float
    alpha: float
    verdict: Verdict
    flagged: bool = False
    suspect: str = "suspect"
    k: int = 0
    seed: int = 0


def build_distinguisher(
    n_features: int,
    arch: Architecture | str = Architecture.TWO_LAYER_TANH,
    seed: int = 0,
    hidden: int = DEFAULT_HIDDEN_WIDTH,
    dropout: float = DEFAULT_DROPOUT,
) -> Distinguisher:
    """
    未学習の識別器を作る（出力層は0初期化のため未学習のスコアは常に0）

    two_layer_tanh は tanh 隠れ層1つ、four_layer_dropout は tanh 隠れ層3つとドロップアウト。
    """
    arch = Architecture(arch)
    if arch is Architecture.TWO_LAYER_TANH:
        sizes, rate = [n_features, hidden, 1], 0.0
    else:
        sizes, rate = [n_features, hidden, hidden, hidden, 1], dropout
    net = init_mlp(sizes, seed=seed, hidden_activation=Activation.TANH, dropout=rate)
    weights = list(net.weights)
    weights[-1] = np.zeros_like(weights[-1])
    return Distinguisher(
        regressor=net.with_params(weights, net.biases),
        feature_mean=np.zeros(n_features),
        feature_std=np.ones(n_features),
        arch=arch,
        metadata={"seed": seed, "n_train": 0},
    )


def train_gv(
    embeddings: Sequence[Embedding],
    arch: Architecture | str = Architecture.TWO_LAYER_TANH,
    seed: int = 0,
    train_cfg: TrainConfig = DEFAULT_GV_TRAIN,
    hidden: int = DEFAULT_HIDDEN_WIDTH,
) -> Distinguisher:
    """
    ラベル付き埋め込みで識別器 g_V を学習する

    目標値は b=1（S_V）で0、b=0（S_0）で1の二乗損失回帰。

    Raises:
        TrainingError: 片方のクラスしかない場合
    """
    labels = np.array([e.b for e in embeddings])
    if not (np.any(labels == 1) and np.any(labels == 0)):
        raise TrainingError("識別器の学習には b=0 と b=1 の両方の埋め込みが必要です", epoch=0)
    raw = np.vstack([e.distances for e in embeddings])
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    g = build_distinguisher(raw.shape[1], arch, seed=seed, hidden=hidden)
    targets = np.where(labels == 1, TARGET_PRIVATE, TARGET_PUBLIC)
    cfg = TrainConfig(
        epochs=train_cfg.epochs,
        batch_size=train_cfg.batch_size,
        learning_rate=train_cfg.learning_rate,
        momentum=train_cfg.momentum,
        seed=derive_seed(seed, "gv"),
    )
    result = fit(g.regressor, (raw - mean) / std, targets, cfg)
    final_loss = result.loss_history[-1] if result.loss_history else math.nan
    logger.info(
        f"識別器を学習: arch={g.arch}, n={len(embeddings)}, 最終損失={final_loss:.5f}"
    )
    return Distinguisher(
        regressor=result.model,
        feature_mean=mean,
        feature_std=std,
        arch=g.arch,
        metadata={"seed": seed, "n_train": len(embeddings), "final_loss": final_loss},
    )


def score(g: Distinguisher, e: Embedding) -> float:
    """1つの埋め込みの信頼度スコア"""
    return float(forward(g.regressor, g.features(e.distances))[0])


def score_batch(g: Distinguisher, embeddings: Sequence[Embedding]) -> np.ndarray:
    """埋め込みの一覧をまとめて採点する"""
    if not embeddings:
        return np.empty(0)
    matrix = np.vstack([e.distances for e in embeddings])
    return forward(g.regressor, g.features(matrix))[:, 0]


def hypothesis_test(
    scores_v: np.ndarray, scores_0: np.ndarray, alpha: float = DEFAULT_ALPHA
) -> VerificationReport:
    """
    片側Welch t検定（Ha: μ > μ_V）

    両群とも分散0の場合は平均が等しければ p=0.5、そうでなければ平均の大小で 0 か 1 とし、
    flagged=True を付ける。

    Raises:
        ProtocolError: どちらかの群の要素数が2未満の場合
    """
    v = np.asarray(scores_v, dtype=np.float64)
    s0 = np.asarray(scores_0, dtype=np.float64)
    if v.size < 2 or s0.size < 2:
        raise ProtocolError(f"各群2件以上が必要です: |v|={v.size}, |0|={s0.size}")
    if not 0 < alpha < 1:
        raise ProtocolError(f"有意水準は (0, 1) が必要です: {alpha}")
    mu, mu_v = float(np.mean(s0)), float(np.mean(v))
    flagged = False
    if np.ptp(v) == 0 and np.ptp(s0) == 0:
        flagged = True
        if mu == mu_v:
            t_stat, p_value = 0.0, 0.5
        elif mu > mu_v:
            t_stat, p_value = math.inf, 0.0
        else:
            t_stat, p_value = -math.inf, 1.0
        logger.warning(f"両群とも分散0のため慣例値を使います: t={t_stat}, p={p_value}")
    else:
        result = stats.ttest_ind(s0, v, equal_var=False, alternative="greater")
        t_stat, p_value = float(result.statistic), float(result.pvalue)
    verdict = Verdict.STOLEN if p_value < alpha else Verdict.INCONCLUSIVE
    return VerificationReport(
        mu=mu,
        mu_v=mu_v,
        delta_mu=mu - mu_v,
        t_statistic=t_stat,
        p_value=p_value,
        alpha=alpha,
        verdict=verdict,
        flagged=flagged,
    )


def verify_ownership(
    suspect: SuspectModel,
    sv: Dataset,
    s0: Dataset,
    g: Distinguisher,
    k: int,
    walk_cfg: WalkConfig,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
    suspect_tag: str = "suspect",
    workers: int = 1,
) -> VerificationReport:
    """
    被疑モデルの所有権を検証する

    S_V と S_0 から k 個ずつ選び、被疑モデルへの Blind Walk で埋め込みを作り、
    g_V で採点して片側t検定を行う。walk_cfg.seed は被害者の歩行鍵で、方向は
    source_ids() の番号から決まる。g_V の学習と同じ鍵を渡せば、学習に使った
    サンプルは学習時と同じ方向に歩く。

    Raises:
        ProtocolError: k がデータセットサイズを超える場合
    """
    if not 1 <= k <= min(len(sv), len(s0)):
        raise ProtocolError(f"1 ≤ k ≤ min(|S_V|, |S_0|) が必要です: k={k}")
    rng = make_rng(derive_seed(seed, "reveal"))
    idx_v = np.sort(rng.choice(len(sv), size=k, replace=False))
    idx_0 = np.sort(rng.choice(len(s0), size=k, replace=False))
    sv_ids, s0_ids = source_ids(idx_v, idx_0, len(sv))
    batch = embed_dataset(
        suspect,
        sv.subset(idx_v),
        s0.subset(idx_0),
        walk_cfg,
        workers=workers,
        sv_ids=sv_ids,
        s0_ids=s0_ids,
    )
    private = [e for e in batch.embeddings if e.b == 1]
    public = [e for e in batch.embeddings if e.b == 0]
    report = hypothesis_test(score_batch(g, private), score_batch(g, public), alpha)
    report = replace(report, suspect=suspect_tag, k=k, seed=seed)
    logger.info(
        f"検証結果: {suspect_tag}, Δμ={report.delta_mu:.4f}, p={report.p_value:.3e}, "
        f"判定={report.verdict}"
    )
    return report


def source_ids(
    idx_v: np.ndarray, idx_0: np.ndarray, n_private: int
) -> tuple[np.ndarray, np.ndarray]:
    """S_V と S_0 のサンプル位置を、重ならない通し番号（S_0 側は |S_V| だけずらす）にする"""
    return np.asarray(idx_v, dtype=np.int64), np.asarray(idx_0, dtype=np.int64) + n_private


def augment_gv_training(
    model_v: SuspectModel,
    sv: Dataset,
    s0: Dataset,
    si_portion: Dataset | None,
    walk_cfg: WalkConfig,
    arch: Architecture | str = Architecture.TWO_LAYER_TANH,
    seed: int = 0,
    train_cfg: TrainConfig = DEFAULT_GV_TRAIN,
    hidden: int = DEFAULT_HIDDEN_WIDTH,
    workers: int = 1,
    sv_ids: np.ndarray | None = None,
    s0_ids: np.ndarray | None = None,
) -> Distinguisher:
    """
    公開データに S_I の一部を加えて g_V を学習する

    si_portion が None または空なら、embed_dataset() の埋め込みで train_gv() と同じ結果になる。
    """
    batch = embed_dataset(
        model_v, sv, s0, walk_cfg, workers=workers, sv_ids=sv_ids, s0_ids=s0_ids
    )
    embeddings = list(batch.embeddings)
    if si_portion is not None and len(si_portion) > 0:
        # S_0 と方向が重ならないよう別の鍵で歩き、サンプル番号は既存の最大値の後ろに続ける
        extra_cfg = replace(walk_cfg, seed=derive_seed(walk_cfg.seed, "augment"))
        extra = embed_samples(model_v, si_portion, extra_cfg, b=0, workers=workers)
        offset = max(e.sample_id for e in embeddings) + 1
        embeddings += [_shifted(e, offset) for e in extra]
        logger.info(f"公開データを S_I の {len(si_portion)} 件で拡張しました")
    return train_gv(embeddings, arch, seed=seed, train_cfg=train_cfg, hidden=hidden)


def _shifted(e: Embedding, offset: int) -> Embedding:
    return Embedding(
        distances=e.distances, sample_id=e.sample_id + offset, b=e.b, queries=e.queries
    )


def report_row(report: VerificationReport) -> dict[str, Any]:
    """CSV行 suspect,delta_mu,t,p,alpha,verdict,k,seed"""
    return {
        "suspect": report.suspect,
        "delta_mu": report.delta_mu,
        "t": report.t_statistic,
        "p": report.p_value,
        "alpha": report.alpha,
        "verdict": str(report.verdict),
        "k": report.k,
        "seed": report.seed,
    }


def format_report(report: VerificationReport) -> str:
    """人が読むための検証レポート"""
    lines = [
        f"suspect: {report.suspect}",
        f"mu: {report.mu:.6g}",
        f"mu_v: {report.mu_v:.6g}",
        f"delta_mu: {report.delta_mu:.6g}",
        f"t: {report.t_statistic:.6g}",
        f"p: {report.p_value:.6g}",
        f"alpha: {report.alpha:g}",
        f"verdict: {report.verdict}",
        f"k: {report.k}",
        f"seed: {report.seed}",
    ]
    if report.flagged:
        lines.append("flagged: zero-variance")
    return "\n".join(lines) + "\n"
