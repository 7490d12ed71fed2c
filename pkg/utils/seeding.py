"""
乱数シード・並列実行ユーティリティ
再現可能な乱数生成と順序を保つ並列マップを純粋関数として提供
"""

import hashlib
import logging
from collections.abc import Callable, Iterable
from concurrent.futures import ProcessPoolExecutor
from typing import Any, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

SEED_MASK = (1 << 64) - 1


def key_hash(*keys: Any) -> int:
    """
    任意のキー列から64ビットのハッシュ値を計算する

    Args:
        keys: 文字列化可能なキー（試行番号、グリッド点、サンプルIDなど）

    Returns:
        64ビット符号なし整数
    """
    h = hashlib.blake2b(digest_size=8)
    for key in keys:
        if isinstance(key, bytes | bytearray | memoryview):
            h.update(bytes(key))
        else:
            h.update(repr(key).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def derive_seed(base_seed: int, *keys: Any) -> int:
    """
    基準シードとキーから子シードを導出する（base_seed XOR hash(keys)）

    同じ引数からは常に同じシードが得られ、並列実行でも結果が変わらない。
    """
    return (int(base_seed) ^ key_hash(*keys)) & SEED_MASK


def make_rng(seed: int) -> np.random.Generator:
    """カウンタベースのPhiloxビット生成器で乱数生成器を作る"""
    return np.random.Generator(np.random.Philox(int(seed) & SEED_MASK))


def parallel_map(
    fn: Callable[[T], R], items: Iterable[T], workers: int = 1
) -> list[R]:
    """
    順序を保つ並列マップ

    Args:
        fn: モジュールレベルの関数（プロセス間でpickle可能であること）
        items: 入力の列
        workers: ワーカー数。1以下なら逐次実行

    Returns:
        入力順に並んだ結果のリスト
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    logger.debug(f"並列実行を開始: {len(items)}件, workers={workers}")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map()は投入順に結果を返すため集約順序は逐次実行と同じ
        return list(pool.map(fn, items))
