"""
utils/file_io.py のテスト
"""

import json
import os
from pathlib import Path
from typing import Any
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from utils.file_io import (
    atomic_write_csv,
    atomic_write_json,
    atomic_write_text,
    frame_to_csv_text,
    read_json,
)


class TestAtomicWriteText:
    """atomic_write_text() のテスト"""

    def test_new_file(self, temp_data_dir):
        """新規ファイルを書き込み、一時ファイルとバックアップが残らない"""
        filepath = Path(temp_data_dir) / "out.txt"

        atomic_write_text(filepath, "a b\n1 2\n")

        assert filepath.read_text(encoding="utf-8") == "a b\n1 2\n"
        assert not filepath.with_suffix(".txt.tmp").exists()
        assert not filepath.with_suffix(".txt.bak").exists()

    def test_creates_parent_directory(self, temp_data_dir):
        """親ディレクトリがなければ作成する"""
        filepath = Path(temp_data_dir) / "nested" / "dir" / "out.txt"

        atomic_write_text(filepath, "x")

        assert filepath.exists()

    def test_restore_on_failure(self, temp_data_dir):
        """置き換えに失敗したら元の内容が残り、例外は呼び出し側に伝わる"""
        filepath = Path(temp_data_dir) / "out.txt"
        atomic_write_text(filepath, "original")

        with patch("utils.file_io.os.replace", side_effect=OSError("disk full")):
            with pytest.raises(OSError):
                atomic_write_text(filepath, "new")

        assert filepath.read_text(encoding="utf-8") == "original"
        assert not filepath.with_suffix(".txt.tmp").exists()

    def test_newlines_not_translated(self, temp_data_dir):
        """改行コードはそのまま書かれる"""
        filepath = Path(temp_data_dir) / "out.txt"

        atomic_write_text(filepath, "1\n2\n")

        assert filepath.read_bytes() == b"1\n2\n"


class TestAtomicWriteJson:
    """atomic_write_json() / read_json() のテスト"""

    def test_sorted_keys_and_unicode(self, temp_data_dir):
        """キーは整列され、非ASCII文字はエスケープされない"""
        filepath = Path(temp_data_dir) / "manifest.json"

        atomic_write_json(filepath, {"b": 1, "a": "検証"})

        text = filepath.read_text(encoding="utf-8")
        assert text.index('"a"') < text.index('"b"')
        assert "検証" in text
        assert read_json(filepath) == {"a": "検証", "b": 1}

    def test_overwrite(self, temp_data_dir):
        """既存ファイルの上書き"""
        filepath = Path(temp_data_dir) / "test.json"
        atomic_write_json(filepath, {"original": "data"})

        atomic_write_json(filepath, [{"item": 1}, {"item": 2}])

        with open(filepath, encoding="utf-8") as f:
            assert json.load(f) == [{"item": 1}, {"item": 2}]

    def test_encode_error_leaves_file(self, temp_data_dir):
        """エンコードできないデータでは既存ファイルを変更しない"""
        filepath = Path(temp_data_dir) / "test.json"
        atomic_write_json(filepath, {"keep": True})
        data: dict[str, Any] = {}
        data["self"] = data

        with pytest.raises((TypeError, ValueError)):
            atomic_write_json(filepath, data)

        assert read_json(filepath) == {"keep": True}

    def test_identical_bytes(self, temp_data_dir):
        """同じデータはバイト一致で書かれる"""
        a = Path(temp_data_dir) / "a.json"
        b = Path(temp_data_dir) / "b.json"
        data = {"seeds": [0, 1], "config": {"sigma": 0.25}}

        atomic_write_json(a, data)
        atomic_write_json(b, dict(reversed(list(data.items()))))

        assert a.read_bytes() == b.read_bytes()


class TestCsv:
    """frame_to_csv_text() / atomic_write_csv() のテスト"""

    def test_float_format(self):
        """浮動小数点は10桁の有効数字で固定書式になる"""
        frame = pd.DataFrame({"k": [1, 10], "rate": [1 / 3, 0.5]})

        text = frame_to_csv_text(frame)

        assert text == "k,rate\n1,0.3333333333\n10,0.5\n"

    def test_round_trip_values(self, temp_data_dir):
        """書き込んだCSVを読み戻すと10桁以内で一致する"""
        filepath = Path(temp_data_dir) / "table.csv"
        values = np.linspace(0.001, 0.999, 7)
        atomic_write_csv(filepath, pd.DataFrame({"x": values}))

        loaded = pd.read_csv(filepath)

        np.testing.assert_allclose(loaded["x"].to_numpy(), values, rtol=1e-9)

    def test_no_temp_left(self, temp_data_dir):
        """書き込み後に一時ファイルが残らない"""
        filepath = Path(temp_data_dir) / "table.csv"

        atomic_write_csv(filepath, pd.DataFrame({"x": [1]}))

        assert sorted(os.listdir(temp_data_dir)) == ["table.csv"]
