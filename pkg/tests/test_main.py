"""
main.py（コマンドラインインターフェース）のテスト
"""

import json
import logging
from pathlib import Path

import pytest

from core.neuralnet import init_mlp, save_mlp
from main import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main


@pytest.fixture(autouse=True)
def reset_logging():
    """main() が追加したログハンドラーをテストごとに閉じる"""
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        handler.close()
        root.removeHandler(handler)


class TestTheoryCommand:
    """theory サブコマンドのテスト"""

    def test_csv_output(self, capsys):
        """解析表をCSVで標準出力に書く"""
        assert main(["theory", "--csv"]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.splitlines()[0] == "formula,inputs,value"
        assert "accuracy_bound" in out

    def test_writes_output(self, temp_data_dir):
        """--out があれば theory.csv と run.log を書く"""
        assert main(["theory", "--out", temp_data_dir]) == EXIT_OK
        assert (Path(temp_data_dir) / "theory.csv").exists()
        assert (Path(temp_data_dir) / "run.log").exists()


class TestExperimentCommand:
    """experiment サブコマンドのテスト"""

    def test_theory_tables_check(self, temp_data_dir, capsys):
        """受け入れ基準をすべて満たせば終了コード0"""
        code = main(["experiment", "theory_tables", "--check", "--out", temp_data_dir])
        assert code == EXIT_OK
        assert capsys.readouterr().out.count("PASS") == 3
        checks = json.loads((Path(temp_data_dir) / "checks.json").read_text(encoding="utf-8"))
        assert all(c["passed"] for c in checks)

    def test_failed_check(self, temp_data_dir):
        """基準を満たさなければ終了コード4"""
        config = Path(temp_data_dir) / "theory.json"
        config.write_text(
            json.dumps({"experiment": "theory_tables", "theory": {"noise_dims": [5]}}),
            encoding="utf-8",
        )
        out = str(Path(temp_data_dir) / "out")
        code = main(["experiment", "theory_tables", "--config", str(config), "--check", "--out", out])
        assert code == EXIT_CHECK

    def test_experiment_mismatch(self, temp_data_dir):
        """設定ファイルの実験IDと指定が違えば終了コード2"""
        config = Path(temp_data_dir) / "cfg.json"
        config.write_text(json.dumps({"experiment": "fp_curve"}), encoding="utf-8")
        assert main(["experiment", "theory_tables", "--config", str(config)]) == EXIT_CONFIG

    def test_missing_config(self, temp_data_dir):
        """設定ファイルがなければ終了コード2"""
        missing = str(Path(temp_data_dir) / "none.json")
        assert main(["experiment", "fp_curve", "--config", missing]) == EXIT_CONFIG


class TestOtherCommands:
    """summarize / pacbayes サブコマンドのテスト"""

    def test_summarize_missing_file(self, temp_data_dir):
        """読めない結果ファイルは終了コード3"""
        assert main(["summarize", str(Path(temp_data_dir) / "none.csv")]) == EXIT_STAGE

    def test_pacbayes_components(self, temp_data_dir, capsys):
        """保存したモデルから層ごとの成分表を出す"""
        path = Path(temp_data_dir) / "f.mlp"
        save_mlp(init_mlp([14, 8, 2], seed=0, use_bias=False), path)
        code = main(["pacbayes", "--model", str(path), "--bound", "2.0", "--m", "100"])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "layer,spectral_norm,frobenius_norm,beta,epsilon"
        assert len(lines) == 3
