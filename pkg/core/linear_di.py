"""
線形被疑モデルと判定関数 Ψ
閉形式の重み w1 = m·u, w2 = Σ y·x2、予測マージン、公開サンプルによる盗用判定を提供する
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from core.distribution import Dataset, DistributionSpec, LabeledSample, Provenance
from core.errors import DecisionConfigError, FormatError, ShapeError
from utils.file_io import atomic_write_json, read_json
from utils.seeding import make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LinearModel:
    """
    線形モデル f(x) = w1·x1 + w2·x2

    Attributes:
        w1: 信号部分の重み（長さK）
        w2: ノイズ部分の重み（長さD）
        trained_on: 学習に使ったデータセットの由来タグ
    """

    w1: np.ndarray
    w2: np.ndarray
    trained_on: Provenance = Provenance.CUSTOM

    def __post_init__(self) -> None:
        for name in ("w1", "w2"):
            array = np.array(getattr(self, name), dtype=np.float64, copy=True)
            if array.ndim != 1 or array.size == 0:
                raise ShapeError(f"{name} は空でない1次元配列が必要です: {array.shape}")
            array.flags.writeable = False
            object.__setattr__(self, name, array)
        object.__setattr__(self, "trained_on", Provenance(self.trained_on))

    @property
    def k(self) -> int:
        return int(self.w1.shape[0])

    @property
    def d(self) -> int:
        return int(self.w2.shape[0])

    @property
    def weights(self) -> np.ndarray:
        """連結した重み (w1, w2)"""
        return np.concatenate([self.w1, self.w2])

    def decision_values(self, inputs: np.ndarray) -> np.ndarray:
        """f(x) を返す。inputs は形状 (K+D,) または (n, K+D)"""
        x = np.asarray(inputs, dtype=np.float64)
        if x.shape[-1] != self.k + self.d:
            raise ShapeError(f"入力次元 {x.shape[-1]} がモデルの {self.k + self.d} と一致しません")
        return x @ self.weights

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        """sgn(f(x)) によるラベル ±1（f(x)=0 は +1）"""
        values = np.atleast_1d(self.decision_values(inputs))
        return np.where(values >= 0, 1, -1).astype(np.int64)


@dataclass(frozen=True)
class DecisionConfig:
    """
    判定関数 Ψ の設定

    Attributes:
        lam: しきい値 λ（0 ≤ λ ≤ Dσ²）
        k_reveal: 公開する検証サンプル数
    """

    lam: float
    k_reveal: int

    def __post_init__(self) -> None:
        if not self.lam >= 0:
            raise DecisionConfigError(f"λ は0以上が必要です: {self.lam}")
        if self.k_reveal < 1:
            raise DecisionConfigError(f"k は1以上が必要です: {self.k_reveal}")

    @classmethod
    def default_for(cls, spec: DistributionSpec, k_reveal: int) -> "DecisionConfig":
        """既定のしきい値 λ = Dσ²/2 で設定を作る"""
        return cls(lam=spec.noise_dim * spec.noise_std**2 / 2.0, k_reveal=k_reveal)

    def validate(self, spec: DistributionSpec) -> None:
        """λ ≤ Dσ² と k ≤ m を確認する"""
        upper = spec.noise_dim * spec.noise_std**2
        if self.lam > upper * (1 + 1e-12):
            raise DecisionConfigError(f"λ={self.lam} が Dσ²={upper} を超えています")
        if self.k_reveal > spec.dataset_size:
            raise DecisionConfigError(
                f"k={self.k_reveal} が m={spec.dataset_size} を超えています"
            )


class PsiResult(NamedTuple):
    """判定結果（1: 盗用, 0: 独立）とマージン差統計量 t"""

    decision: int
    t: float


def train_linear(s: Dataset) -> LinearModel:
    """
    データセットから閉形式の重みを求める

    w1 = m·u、w2 = Σᵢ y⁽ⁱ⁾ x2⁽ⁱ⁾。サンプルの順序やバッチ分割に依存しない。

    Raises:
        ShapeError: データセットが空の場合
    """
    n = len(s)
    if n == 0:
        raise ShapeError("空のデータセットでは学習できません")
    w1 = n * s.spec.u_array
    # 和の順序を固定して並べ替えに対してビット一致させる
    order = np.lexsort(s.x2.T[::-1])
    w2 = s.y[order].astype(np.float64) @ s.x2[order]
    logger.debug(f"線形モデルを学習: m={n}, 由来={s.provenance}")
    return LinearModel(w1=w1, w2=w2, trained_on=s.provenance)


def margin(f: LinearModel, sample: LabeledSample) -> float:
    """予測マージン y·f(x)"""
    if sample.x1.shape[0] != f.k or sample.x2.shape[0] != f.d:
        raise ShapeError(
            f"サンプル次元 ({sample.x1.shape[0]}, {sample.x2.shape[0]}) が"
            f"モデルの ({f.k}, {f.d}) と一致しません"
        )
    return float(sample.y * (f.w1 @ sample.x1 + f.w2 @ sample.x2))


def margins(f: LinearModel, d: Dataset) -> np.ndarray:
    """データセット全体のマージンをまとめて計算する"""
    if d.spec.k != f.k or d.spec.noise_dim != f.d:
        raise ShapeError(
            f"データ次元 ({d.spec.k}, {d.spec.noise_dim}) がモデルの ({f.k}, {f.d}) と一致しません"
        )
    return d.y * (d.x1 @ f.w1 + d.x2 @ f.w2)


def accuracy(f: LinearModel, d: Dataset) -> float:
    """マージンが0以上のサンプルの割合"""
    if len(d) == 0:
        raise ShapeError("空のデータセットでは精度を計算できません")
    return float(np.mean(margins(f, d) >= 0))


def psi_decide(
    f: LinearModel,
    sv: Dataset,
    s0: Dataset,
    cfg: DecisionConfig,
    seed: int,
) -> PsiResult:
    """
    判定関数 Ψ

    S_V と S_0 からそれぞれ k 個を非復元抽出し、平均マージンの差 t が λ 以上なら1を返す。

    Raises:
        DecisionConfigError: k がどちらかのデータセットより大きい場合
    """
    k = cfg.k_reveal
    if k > min(len(sv), len(s0)):
        raise DecisionConfigError(
            f"k={k} がデータセットサイズ (|S_V|={len(sv)}, |S_0|={len(s0)}) を超えています"
        )
    rng = make_rng(seed)
    idx_v = np.sort(rng.choice(len(sv), size=k, replace=False))
    idx_0 = np.sort(rng.choice(len(s0), size=k, replace=False))
    t = float(np.mean(margins(f, sv)[idx_v]) - np.mean(margins(f, s0)[idx_0]))
    decision = 1 if t >= cfg.lam else 0
    return PsiResult(decision=decision, t=t)


def _join(values: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in values)


def save_linear(f: LinearModel, path: str | Path) -> None:
    """線形モデルをJSONとして保存する"""
    atomic_write_json(
        path,
        {
            "k": f.k,
            "d": f.d,
            "w1": _join(f.w1),
            "w2": _join(f.w2),
            "provenance": str(f.trained_on),
        },
    )
    logger.info(f"線形モデルを保存しました: {path}")


def load_linear(path: str | Path) -> LinearModel:
    """save_linear() で保存したモデルを読み込む"""
    try:
        data = read_json(path)
        w1 = np.array([float(v) for v in str(data["w1"]).split(",")])
        w2 = np.array([float(v) for v in str(data["w2"]).split(",")])
        model = LinearModel(
            w1=w1, w2=w2, trained_on=Provenance(data.get("provenance", "custom"))
        )
    except (OSError, KeyError, ValueError) as e:
        raise FormatError(f"線形モデルの読み込みに失敗: {path}: {e}") from e
    if model.k != int(data["k"]) or model.d != int(data["d"]):
        raise FormatError(f"k, d が重みの長さと一致しません: {path}")
    return model
