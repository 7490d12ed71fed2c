"""
例外クラス定義
各モジュールの失敗を種類ごとに区別できるようにする
"""

from typing import Any


class FingerprintError(Exception):
    """本パッケージ内のすべての例外の基底クラス"""


class SpecificationError(FingerprintError, ValueError):
    """分布仕様（DistributionSpec）が不正"""


class PartitionError(FingerprintError, ValueError):
    """データセット分割の結果が不正（空の部分集合など）"""


class ShapeError(FingerprintError, ValueError):
    """ベクトル・行列の次元が一致しない"""


class DecisionConfigError(FingerprintError, ValueError):
    """判定関数の設定（k, λ）が不正"""


class DomainError(FingerprintError, ValueError):
    """解析式の定義域外の入力"""


class PlanError(FingerprintError, ValueError):
    """モンテカルロ試行計画が不正"""


class InterfaceError(FingerprintError, ValueError):
    """モデルが想定外の出力を返した"""


class ProtocolError(FingerprintError, ValueError):
    """検証プロトコルの前提（同数サンプルなど）が満たされない"""


class BoundInapplicableError(FingerprintError, ValueError):
    """摂動の大きさが上界の前提条件を満たさない"""


class StructureError(FingerprintError, ValueError):
    """比較する2つのモデルの構造が異なる"""


class FormatError(FingerprintError, ValueError):
    """ファイル形式・CSVヘッダーが不正"""


class ConfigError(FingerprintError, ValueError):
    """実験設定が不正"""


class TrainingError(FingerprintError, RuntimeError):
    """学習の失敗（損失の発散など）"""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch

    def __reduce__(self) -> tuple[Any, ...]:
        return (TrainingError, (str(self), self.epoch))


class StageError(FingerprintError, RuntimeError):
    """実験ステージの失敗。ステージ名とシードを保持する"""

    def __init__(self, stage: str, seed: int | None, cause: BaseException):
        super().__init__(f"ステージ '{stage}' が失敗しました (seed={seed}): {cause}")
        self.stage = stage
        self.seed = seed
        self.cause = cause

    # ワーカープロセスから親へ送るときも stage と seed を保つ
    def __reduce__(self) -> tuple[Any, ...]:
        return (StageError, (self.stage, self.seed, self.cause))
