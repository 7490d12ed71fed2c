"""
ファイルI/Oユーティリティ
結果CSV・マニフェスト・モデルファイルの原子的書き込みを提供する
"""

import json
import logging
import os
import shutil
from pathlib import Path
from typing import Any

import pandas as pd

logger = logging.getLogger(__name__)

# 浮動小数点のCSV出力形式（再実行でバイト一致させるため固定）
CSV_FLOAT_FORMAT = "%.10g"


def atomic_write_text(filepath: str | Path, text: str) -> None:
    """
    テキストファイルを原子的に書き込む

    Args:
        filepath: 書き込むファイルのパス
        text: 書き込む内容

    Raises:
        OSError: ファイル操作に失敗した場合

    処理フロー:
    1. 既存ファイルがある場合はバックアップを作成（.bak）
    2. 一時ファイル（.tmp）に書き込む
    3. os.replace()で原子的にリネームし、バックアップを削除
    4. エラー時は一時ファイルを削除し、バックアップから復旧を試みる
    """
    target = Path(filepath)
    target.parent.mkdir(parents=True, exist_ok=True)
    backup_path = target.with_suffix(target.suffix + ".bak")
    temp_path = target.with_suffix(target.suffix + ".tmp")

    if target.exists():
        try:
            shutil.copy2(target, backup_path)
            logger.debug(f"バックアップを作成: {backup_path}")
        except OSError as e:
            logger.warning(f"バックアップ作成に失敗: {e}")

    try:
        # newline="" で改行コードをプラットフォームに依存させない
        with open(temp_path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(temp_path, target)
        logger.debug(f"ファイルを原子的に書き込みました: {target}")

        if backup_path.exists():
            try:
                backup_path.unlink()
            except OSError as e:
                logger.warning(f"バックアップ削除に失敗（無視）: {e}")

    except OSError as e:
        if temp_path.exists():
            try:
                temp_path.unlink()
            except OSError:
                pass

        if backup_path.exists():
            try:
                shutil.copy2(backup_path, target)
                logger.warning(f"バックアップから復旧しました: {target}")
            except OSError as restore_error:
                logger.error(f"バックアップからの復旧に失敗: {restore_error}")

        logger.error(f"ファイル書き込みに失敗: {target}, エラー: {e}")
        raise


def atomic_write_json(filepath: str | Path, data: dict[str, Any] | list[Any]) -> None:
    """
    JSONファイルを原子的に書き込む

    Raises:
        OSError: ファイル操作に失敗した場合
        TypeError, ValueError: JSONエンコードに失敗した場合（ファイルは変更されない）
    """
    text = json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n"
    atomic_write_text(filepath, text)


def frame_to_csv_text(frame: pd.DataFrame) -> str:
    """DataFrameを固定書式のCSV文字列に変換する"""
    return frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


def atomic_write_csv(filepath: str | Path, frame: pd.DataFrame) -> None:
    """DataFrameをCSVとして原子的に書き込む"""
    atomic_write_text(filepath, frame_to_csv_text(frame))
    logger.info(f"CSVを書き込みました: {filepath} ({len(frame)}行)")


def read_json(filepath: str | Path) -> Any:
    """JSONファイルを読み込む"""
    with open(filepath, encoding="utf-8") as f:
        return json.load(f)
