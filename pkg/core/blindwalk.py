"""
Blind Walk 埋め込み生成
ランダムな方向へ誤分類が起きるまで歩き、そのステップ距離をサンプルの埋め込みとする
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
import pandas as pd

from core.distribution import Dataset, LabeledSample
from core.errors import ConfigError, FormatError, InterfaceError, ProtocolError, ShapeError
from utils.file_io import atomic_write_csv
from utils.seeding import derive_seed, make_rng, parallel_map

logger = logging.getLogger(__name__)

DEFAULT_N_DIRECTIONS = 30
DEFAULT_MAX_STEPS = 200
DEFAULT_STEP_SIZE = 0.005


class SuspectModel(Protocol):
    """入力バッチにラベル ±1 を返す被疑モデル"""

    def predict(self, inputs: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class WalkConfig:
    """
    Blind Walk の設定

    Attributes:
        n_directions: 1サンプルあたりの方向数
        max_steps: 1方向あたりの最大ステップ数
        step_size: 1ステップの ℓ∞ 幅
        seed: 方向生成のシード
    """

    n_directions: int = DEFAULT_N_DIRECTIONS
    max_steps: int = DEFAULT_MAX_STEPS
    step_size: float = DEFAULT_STEP_SIZE
    seed: int = 0
    norm: str = "linf"

    def __post_init__(self) -> None:
        if self.n_directions < 1:
            raise ConfigError(f"方向数は1以上が必要です: {self.n_directions}")
        if self.max_steps < 1:
            raise ConfigError(f"最大ステップ数は1以上が必要です: {self.max_steps}")
        if not self.step_size > 0:
            raise ConfigError(f"ステップ幅は正の値が必要です: {self.step_size}")
        if self.norm != "linf":
            raise ConfigError(f"対応しているノルムは linf のみです: {self.norm}")

    @property
    def cap(self) -> float:
        return self.max_steps * self.step_size


@dataclass(frozen=True, eq=False)
class Embedding:
    """
    1サンプルの埋め込み

    Attributes:
        distances: 方向ごとの誤分類までの距離（上限は max_steps·step_size）
        sample_id: 由来データセット内のサンプル番号
        b: メンバーシップラベル（1: S_V 由来, 0: S_0 由来, None: 未設定）
        queries: 消費したクエリ数
    """

    distances: np.ndarray
    sample_id: int
    b: int | None = None
    queries: int = 0

    def with_label(self, b: int) -> "Embedding":
        return Embedding(
            distances=self.distances, sample_id=self.sample_id, b=b, queries=self.queries
        )


@dataclass(frozen=True)
class EmbeddingBatch:
    """ラベル付き埋め込みの一覧と合計クエリ数"""

    embeddings: list[Embedding]
    queries: int

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.b for e in self.embeddings], dtype=np.int64)

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([e.distances for e in self.embeddings])


def _checked_labels(model: SuspectModel, inputs: np.ndarray) -> np.ndarray:
    labels = np.asarray(model.predict(inputs))
    if labels.shape != (inputs.shape[0],):
        raise InterfaceError(f"予測の形状 {labels.shape} が入力数 {inputs.shape[0]} と一致しません")
    if not np.all((labels == 1) | (labels == -1)):
        raise InterfaceError(f"モデルが ±1 以外のラベルを返しました: {np.unique(labels)[:5]}")
    return labels


def walk_direction(
    model: SuspectModel,
    x: np.ndarray,
    y: int,
    direction: np.ndarray,
    step_size: float,
    max_steps: int,
) -> tuple[float, int]:
    """
    1方向に歩き、最初に誤分類するステップでの距離を返す

    Returns:
        (距離 = ステップ数·step_size, クエリ数)。誤分類しなければ上限値
    """
    x = np.asarray(x, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if direction.shape != x.shape:
        raise ShapeError(f"方向の形状 {direction.shape} が入力 {x.shape} と一致しません")
    steps = np.arange(1, max_steps + 1, dtype=np.float64)[:, None]
    probes = x[None, :] + steps * step_size * direction[None, :]
    flipped = np.flatnonzero(_checked_labels(model, probes) != y)
    if flipped.size == 0:
        return max_steps * step_size, max_steps
    first = int(flipped[0]) + 1
    return first * step_size, first


def walk_directions(cfg: WalkConfig, dim: int, sample_id: int) -> np.ndarray:
    """サンプル番号ごとに決まるランダムな符号ベクトル（形状 (n_directions, dim)）"""
    rng = make_rng(derive_seed(cfg.seed, "walk", sample_id))
    return rng.choice(np.array([-1.0, 1.0]), size=(cfg.n_directions, dim))


def blind_walk(
    model: SuspectModel, sample: LabeledSample, cfg: WalkConfig, sample_id: int = 0
) -> Embedding:
    """
    Blind Walk で1サンプルの埋め込みを作る

    方向ごとに x + k·δ を問い合わせ、f(x + kδ) ≠ y となる最小の k を距離にする。
    すべての方向の探査点をまとめて1回のバッチで評価し、クエリ数は
    実際に必要なステップ数の合計として数える。
    """
    x = sample.x
    directions = walk_directions(cfg, x.shape[0], sample_id)
    steps = np.arange(1, cfg.max_steps + 1, dtype=np.float64)
    probes = (
        x[None, None, :]
        + steps[None, :, None] * cfg.step_size * directions[:, None, :]
    ).reshape(-1, x.shape[0])
    labels = _checked_labels(model, probes).reshape(cfg.n_directions, cfg.max_steps)
    flipped = labels != sample.y
    first = np.where(flipped.any(axis=1), flipped.argmax(axis=1) + 1, cfg.max_steps)
    return Embedding(
        distances=first.astype(np.float64) * cfg.step_size,
        sample_id=sample_id,
        queries=int(first.sum()),
    )


def _walk_job(job: tuple[SuspectModel, Dataset, WalkConfig, int, int]) -> Embedding:
    model, dataset, cfg, index, sample_id = job
    return blind_walk(model, dataset[index], cfg, sample_id=sample_id)


def embed_samples(
    model: SuspectModel,
    dataset: Dataset,
    cfg: WalkConfig,
    b: int,
    workers: int = 1,
    sample_ids: Sequence[int] | np.ndarray | None = None,
) -> list[Embedding]:
    """
    データセットの各サンプルを埋め込む

    sample_ids を渡すと、方向はその番号（由来データセット内の番号）から決まる。
    省略時は 0..n-1。
    """
    ids = np.arange(len(dataset)) if sample_ids is None else np.asarray(sample_ids)
    if ids.shape != (len(dataset),):
        raise ShapeError(f"サンプル番号の数 {ids.shape} がサンプル数 {len(dataset)} と一致しません")
    jobs = [(model, dataset, cfg, i, int(ids[i])) for i in range(len(dataset))]
    return [e.with_label(b) for e in parallel_map(_walk_job, jobs, workers=workers)]


def embed_dataset(
    model: SuspectModel,
    sv_subset: Dataset,
    s0_subset: Dataset,
    cfg: WalkConfig,
    workers: int = 1,
    sv_ids: Sequence[int] | np.ndarray | None = None,
    s0_ids: Sequence[int] | np.ndarray | None = None,
) -> EmbeddingBatch:
    """
    S_V 由来と S_0 由来のサンプルを埋め込み、b=1 / b=0 のラベルを付ける

    同じ cfg.seed と同じサンプル番号には同じ方向を使うため、g_V の学習と検証で
    番号を揃えれば同じサンプルは同じ方向に歩く。

    Raises:
        ProtocolError: 2つの部分集合のサイズが異なる、または空の場合
    """
    if len(sv_subset) == 0 or len(s0_subset) == 0:
        raise ProtocolError("空の部分集合は埋め込めません")
    if len(sv_subset) != len(s0_subset):
        raise ProtocolError(
            f"公開・非公開のサンプル数が異なります: |S_V|={len(sv_subset)}, |S_0|={len(s0_subset)}"
        )
    embeddings = embed_samples(model, sv_subset, cfg, b=1, workers=workers, sample_ids=sv_ids)
    embeddings += embed_samples(model, s0_subset, cfg, b=0, workers=workers, sample_ids=s0_ids)
    queries = sum(e.queries for e in embeddings)
    logger.info(
        f"埋め込みを生成: {len(embeddings)}件, 方向数={cfg.n_directions}, クエリ数={queries}"
    )
    return EmbeddingBatch(embeddings=embeddings, queries=queries)


def mean_linf_noise(embeddings: Sequence[Embedding]) -> float:
    """埋め込み生成で加えた ℓ∞ ノイズの平均（全方向の距離の平均）"""
    if not embeddings:
        raise ProtocolError("埋め込みがありません")
    return float(np.mean(np.concatenate([e.distances for e in embeddings])))


def embeddings_frame(embeddings: Sequence[Embedding]) -> pd.DataFrame:
    if not embeddings:
        raise ProtocolError("埋め込みがありません")
    n = embeddings[0].distances.shape[0]
    frame = pd.DataFrame(
        np.vstack([e.distances for e in embeddings]),
        columns=[f"d_{i}" for i in range(n)],
    )
    frame.insert(0, "b", [-1 if e.b is None else e.b for e in embeddings])
    frame.insert(0, "sample_id", [e.sample_id for e in embeddings])
    return frame


def save_embeddings(embeddings: Sequence[Embedding], path: str | Path) -> None:
    """埋め込みを CSV（sample_id,b,d_0..d_{n-1}）に保存する"""
    atomic_write_csv(path, embeddings_frame(embeddings))


def load_embeddings(path: str | Path) -> list[Embedding]:
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, ValueError) as e:
        raise FormatError(f"埋め込みの読み込みに失敗: {path}: {e}") from e
    columns = list(frame.columns)
    if columns[:2] != ["sample_id", "b"] or not all(
        c == f"d_{i}" for i, c in enumerate(columns[2:])
    ):
        raise FormatError(f"埋め込みCSVのヘッダーが不正です: {columns[:4]}...")
    distances = frame[columns[2:]].to_numpy(dtype=np.float64)
    return [
        Embedding(
            distances=distances[i],
            sample_id=int(row.sample_id),
            b=None if int(row.b) < 0 else int(row.b),
        )
        for i, row in enumerate(frame.itertuples(index=False))
    ]
