"""
データ分布とデータセット生成
信号+ノイズ分布 y∼{−1,+1}, x1 = y·u, x2 ∼ N(0, σ²I) からシード付きでサンプルを生成する
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):  # type: ignore[no-redef]
        __str__ = str.__str__
        __format__ = str.__format__
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from core.errors import FormatError, PartitionError, ShapeError, SpecificationError
from utils.file_io import atomic_write_json, atomic_write_text, read_json
from utils.seeding import make_rng

logger = logging.getLogger(__name__)

# 分割比率の合計に許す誤差
FRACTION_TOLERANCE = 1e-9


class Provenance(StrEnum):
    """データセットの由来タグ"""

    S_V = "S_V"
    S_0 = "S_0"
    S_I = "S_I"
    CUSTOM = "custom"


@dataclass(frozen=True)
class DistributionSpec:
    """
    パラメトリック分布の仕様

    Attributes:
        u: 信号ベクトル（長さK）
        noise_dim: ノイズ次元 D
        noise_std: ノイズの座標ごとの標準偏差 σ
        dataset_size: 学習集合のサイズ m（|S_V|）
    """

    u: tuple[float, ...]
    noise_dim: int
    noise_std: float
    dataset_size: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "u", tuple(float(v) for v in self.u))
        if len(self.u) < 1:
            raise SpecificationError("信号ベクトル u の長さ K は1以上が必要です")
        if not all(math.isfinite(v) for v in self.u):
            raise SpecificationError("信号ベクトル u に非有限値が含まれています")
        if int(self.noise_dim) < 1:
            raise SpecificationError(f"ノイズ次元 D は1以上が必要です: {self.noise_dim}")
        if not (self.noise_std > 0 and math.isfinite(self.noise_std)):
            raise SpecificationError(f"σ は正の有限値が必要です: {self.noise_std}")
        if int(self.dataset_size) < 1:
            raise SpecificationError(f"m は1以上が必要です: {self.dataset_size}")
        object.__setattr__(self, "noise_dim", int(self.noise_dim))
        object.__setattr__(self, "dataset_size", int(self.dataset_size))

    @property
    def k(self) -> int:
        """信号次元 K"""
        return len(self.u)

    @property
    def input_dim(self) -> int:
        return self.k + self.noise_dim

    @property
    def u_array(self) -> np.ndarray:
        return np.asarray(self.u, dtype=np.float64)

    @property
    def u_norm_sq(self) -> float:
        return float(np.dot(self.u_array, self.u_array))

    def is_bounded_signal(self) -> bool:
        """‖u‖₂ ≤ 1/√m かつ σ² > 1/(10√m) の部分空間に属するか"""
        m = self.dataset_size
        norm = math.sqrt(self.u_norm_sq)
        return norm <= (1.0 / math.sqrt(m)) * (1 + 1e-12) and self.noise_std**2 > 1.0 / (
            10.0 * math.sqrt(m)
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "d": self.noise_dim,
            "sigma": self.noise_std,
            "m": self.dataset_size,
            "u": list(self.u),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DistributionSpec":
        try:
            u = data["u"]
            if isinstance(u, str):
                u = [float(v) for v in u.split(",")]
            spec = cls(
                u=tuple(u),
                noise_dim=int(data["d"]),
                noise_std=float(data["sigma"]),
                dataset_size=int(data["m"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, SpecificationError):
                raise
            raise SpecificationError(f"分布仕様の読み込みに失敗: {e}") from e
        if "k" in data and int(data["k"]) != spec.k:
            raise SpecificationError(f"k={data['k']} と u の長さ {spec.k} が一致しません")
        return spec


def bounded_signal_u(k: int, m: int) -> tuple[float, ...]:
    """有界信号部分空間の既定値 u = (1/√m)·e₁ を長さKで返す"""
    if k < 1 or m < 1:
        raise SpecificationError(f"K, m は1以上が必要です: K={k}, m={m}")
    return (1.0 / math.sqrt(m),) + (0.0,) * (k - 1)


@dataclass(frozen=True, eq=False)
class LabeledSample:
    """1つの入力・ラベル対 (x, y)"""

    x1: np.ndarray
    x2: np.ndarray
    y: int

    def __post_init__(self) -> None:
        if self.y not in (-1, 1):
            raise SpecificationError(f"ラベルは ±1 である必要があります: {self.y}")

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.x1, self.x2])


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, order="C", copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    同一の分布仕様から生成されたサンプルの順序付き集合

    x1 は常に y·u から再構成される（ビット一致）。
    """

    spec: DistributionSpec
    y: np.ndarray
    x2: np.ndarray
    provenance: Provenance = Provenance.CUSTOM
    seed: int = 0
    x1: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        y = np.array(self.y, dtype=np.int64, copy=True)
        x2 = np.asarray(self.x2, dtype=np.float64)
        if y.ndim != 1:
            raise ShapeError(f"ラベル配列は1次元である必要があります: {y.shape}")
        if x2.ndim != 2 or x2.shape != (y.shape[0], self.spec.noise_dim):
            raise ShapeError(
                f"x2 の形状 {x2.shape} が (n={y.shape[0]}, D={self.spec.noise_dim}) と一致しません"
            )
        if not np.all((y == 1) | (y == -1)):
            raise SpecificationError("ラベルは ±1 である必要があります")
        y.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x2", _readonly(x2))
        object.__setattr__(self, "x1", _readonly(y[:, None] * self.spec.u_array[None, :]))
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def __getitem__(self, index: int) -> LabeledSample:
        return LabeledSample(x1=self.x1[index], x2=self.x2[index], y=int(self.y[index]))

    @cached_property
    def inputs(self) -> np.ndarray:
        """連結した入力 x = (x1, x2)、形状 (n, K+D)"""
        return _readonly(np.hstack([self.x1, self.x2]))

    def subset(
        self, indices: Sequence[int] | np.ndarray, provenance: Provenance | None = None
    ) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            spec=self.spec,
            y=self.y[idx],
            x2=self.x2[idx],
            provenance=self.provenance if provenance is None else provenance,
            seed=self.seed,
        )

    @classmethod
    def merge(
        cls, parts: Sequence["Dataset"], provenance: Provenance = Provenance.CUSTOM
    ) -> "Dataset":
        """同じ仕様のデータセットを順に連結する"""
        if not parts:
            raise PartitionError("連結するデータセットがありません")
        spec = parts[0].spec
        if any(p.spec != spec for p in parts):
            raise SpecificationError("仕様の異なるデータセットは連結できません")
        return cls(
            spec=spec,
            y=np.concatenate([p.y for p in parts]),
            x2=np.vstack([p.x2 for p in parts]),
            provenance=provenance,
            seed=parts[0].seed,
        )


def sample_dataset(
    spec: DistributionSpec,
    n: int,
    seed: int,
    provenance: Provenance = Provenance.CUSTOM,
    balanced: bool = False,
) -> Dataset:
    """
    分布からn個のサンプルを生成する

    Args:
        spec: 分布仕様
        n: サンプル数（1以上）
        seed: 64ビットシード
        provenance: 由来タグ
        balanced: Trueの場合、ラベルを正確に半数ずつにする（奇数時は+1が1つ多い）

    Returns:
        生成したデータセット。同じ (spec, n, seed) からは常にビット一致する
    """
    if n < 1:
        raise SpecificationError(f"サンプル数は1以上が必要です: {n}")
    rng = make_rng(seed)
    if balanced:
        y = np.array([1] * (n - n // 2) + [-1] * (n // 2), dtype=np.int64)
        y = rng.permutation(y)
    else:
        y = rng.choice(np.array([-1, 1], dtype=np.int64), size=n)
    x2 = rng.standard_normal((n, spec.noise_dim)) * spec.noise_std
    logger.debug(f"データセットを生成: n={n}, D={spec.noise_dim}, seed={seed}")
    return Dataset(spec=spec, y=y, x2=x2, provenance=provenance, seed=seed)


def split_dataset(
    d: Dataset,
    fractions: Sequence[float],
    seed: int,
    provenances: Sequence[Provenance] | None = None,
) -> list[Dataset]:
    """
    データセットを比率に従って互いに素な部分集合に分割する

    Raises:
        PartitionError: 比率が不正、または空の部分集合ができる場合
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions):
        raise PartitionError(f"比率は正の値が必要です: {fractions}")
    if abs(sum(fractions) - 1.0) > FRACTION_TOLERANCE:
        raise PartitionError(f"比率の合計が1ではありません: {sum(fractions)}")
    if provenances is not None and len(provenances) != len(fractions):
        raise PartitionError("provenances の長さが比率の数と一致しません")

    n = len(d)
    order = make_rng(seed).permutation(n)
    bounds = np.rint(np.cumsum([0.0] + fractions) * n).astype(np.int64)
    bounds[-1] = n
    parts = []
    for i in range(len(fractions)):
        idx = order[bounds[i] : bounds[i + 1]]
        if idx.size == 0:
            raise PartitionError(f"分割 {i} が空になりました (n={n}, 比率={fractions})")
        tag = provenances[i] if provenances is not None else d.provenance
        parts.append(d.subset(idx, provenance=tag))
    return parts


def dataset_columns(spec: DistributionSpec) -> list[str]:
    return (
        ["y"]
        + [f"x1_{i}" for i in range(spec.k)]
        + [f"x2_{i}" for i in range(spec.noise_dim)]
    )


def save_dataset(d: Dataset, path: str | Path) -> None:
    """データセットをCSVとサイドカーJSON（<path>.json）に保存する"""
    frame = pd.DataFrame(
        np.hstack([d.y[:, None].astype(np.float64), d.x1, d.x2]),
        columns=dataset_columns(d.spec),
    )
    frame["y"] = d.y
    text = frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")
    atomic_write_text(path, text)
    sidecar = d.spec.to_dict() | {"seed": int(d.seed), "provenance": str(d.provenance)}
    sidecar["u"] = ",".join(repr(v) for v in d.spec.u)
    atomic_write_json(str(path) + ".json", sidecar)
    logger.info(f"データセットを保存しました: {path} ({len(d)}件)")


def load_dataset(path: str | Path) -> Dataset:
    """save_dataset() で保存したデータセットを読み込む"""
    try:
        meta = read_json(str(path) + ".json")
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, ValueError) as e:
        raise FormatError(f"データセットの読み込みに失敗: {path}: {e}") from e
    spec = DistributionSpec.from_dict(meta)
    expected = dataset_columns(spec)
    if list(frame.columns) != expected:
        raise FormatError(f"CSVヘッダーが仕様と一致しません: {list(frame.columns)[:5]}...")
    d = Dataset(
        spec=spec,
        y=frame["y"].to_numpy(dtype=np.int64),
        x2=frame[expected[1 + spec.k :]].to_numpy(dtype=np.float64),
        provenance=Provenance(meta.get("provenance", "custom")),
        seed=int(meta.get("seed", 0)),
    )
    stored_x1 = frame[expected[1 : 1 + spec.k]].to_numpy(dtype=np.float64)
    if not np.array_equal(stored_x1, d.x1):
        raise FormatError("x1 列が y·u と一致しません")
    return d
