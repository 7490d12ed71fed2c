"""
config.py のテスト
"""

import json
from pathlib import Path

import pandas as pd
import pytest

from config import (
    DEFAULT_SEEDS,
    EXPERIMENT_IDS,
    ResultStore,
    build_experiment_config,
    default_experiment_config,
    get_distribution_config,
    get_section,
    load_experiment_config,
    with_output_dir,
)
from core.errors import ConfigError
from core.verifier import Architecture

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class TestSections:
    """get_section() / get_distribution_config() のテスト"""

    def test_defaults_applied(self):
        """未指定のキーは既定値で補う"""
        section = get_section({"walk": {"n_directions": 5}}, "walk")
        assert section["n_directions"] == 5
        assert section["max_steps"] == 200

    def test_unknown_key(self):
        """未知のキーは ConfigError"""
        with pytest.raises(ConfigError):
            get_section({"walk": {"directions": 5}}, "walk")

    def test_section_must_be_object(self):
        """セクションがオブジェクトでなければ ConfigError"""
        with pytest.raises(ConfigError):
            get_section({"walk": [1, 2]}, "walk")

    def test_default_signal(self):
        """u 未指定なら有界信号の既定値に u_scale を掛ける"""
        spec = get_distribution_config({"distribution": {"m": 400, "u_scale": 2.0}})
        assert spec.k == 4
        assert spec.u_norm_sq == pytest.approx(4.0 / 400)

    def test_explicit_u(self):
        """u を明示した場合はそのまま使う"""
        spec = get_distribution_config({"distribution": {"k": 2, "u": [0.1, 0.2]}})
        assert spec.u == (0.1, 0.2)

    def test_invalid_distribution(self):
        """不正な分布仕様は ConfigError"""
        with pytest.raises(ConfigError):
            get_distribution_config({"distribution": {"sigma": 0.0}})


class TestBuildExperimentConfig:
    """build_experiment_config() / load_experiment_config() のテスト"""

    def test_defaults(self):
        """既定値だけの設定"""
        cfg = default_experiment_config("nonlinear_fp")
        assert cfg.seeds == tuple(DEFAULT_SEEDS)
        assert cfg.output_dir == Path("results/nonlinear_fp")
        assert cfg.spec.noise_dim == 10
        assert cfg.suspect.hidden == (64, 64)
        assert cfg.verification.arch is Architecture.TWO_LAYER_TANH
        assert cfg.adversarial.pgd.step == pytest.approx(10 / 255 / 4)

    def test_overrides(self):
        """--seed と --out の上書き"""
        cfg = build_experiment_config(
            {"experiment": "fp_curve", "seeds": [1, 2]}, seed_override=7, output_override="x"
        )
        assert cfg.seeds == (7,)
        assert cfg.output_dir == Path("x")
        assert with_output_dir(cfg, "y").output_dir == Path("y")

    @pytest.mark.parametrize(
        "raw",
        [
            {"experiment": "unknown"},
            {"experiment": "fp_curve", "typo": 1},
            {"experiment": "fp_curve", "seeds": []},
            {"experiment": "fp_curve", "seeds": ["a"]},
            {"experiment": "fp_curve", "verification": {"alpha": 1.5}},
            {"experiment": "fp_curve", "verification": {"arch": "cnn"}},
            {"experiment": "fp_curve", "suspect": {"epochs": -1}},
            {"experiment": "fp_curve", "walk": {"step_size": 0}},
            {"experiment": "fp_curve", "adversarial": {"gamma": 0}},
        ],
    )
    def test_invalid(self, raw):
        """不正な設定は ConfigError"""
        with pytest.raises(ConfigError):
            build_experiment_config(raw)

    def test_hash_stable(self):
        """同じ設定は同じハッシュ、値が違えば別のハッシュ"""
        a = build_experiment_config({"experiment": "fp_curve", "walk": {"max_steps": 5}})
        b = build_experiment_config({"walk": {"max_steps": 5}, "experiment": "fp_curve"})
        c = build_experiment_config({"experiment": "fp_curve", "walk": {"max_steps": 6}})
        assert a.config_hash == b.config_hash
        assert a.config_hash != c.config_hash

    def test_hash_includes_defaults(self):
        """既定値を明示しても省略しても同じハッシュ"""
        a = build_experiment_config({"experiment": "fp_curve"})
        b = build_experiment_config({"experiment": "fp_curve", "walk": {"max_steps": 200}})
        assert a.config_hash == b.config_hash

    def test_load_file(self, temp_data_dir):
        """JSONファイルから読み込む"""
        path = Path(temp_data_dir) / "cfg.json"
        path.write_text(
            json.dumps({"experiment": "linear_mc", "seeds": [3], "workers": 2}),
            encoding="utf-8",
        )
        cfg = load_experiment_config(path)
        assert cfg.experiment == "linear_mc"
        assert cfg.seeds == (3,)
        assert cfg.workers == 2

    def test_missing_file(self, temp_data_dir):
        """存在しないファイルは ConfigError"""
        with pytest.raises(ConfigError):
            load_experiment_config(Path(temp_data_dir) / "none.json")

    def test_broken_json(self, temp_data_dir):
        """JSONとして読めなければ ConfigError"""
        path = Path(temp_data_dir) / "cfg.json"
        path.write_text("{experiment: ", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_experiment_config(path)

    @pytest.mark.parametrize("experiment", EXPERIMENT_IDS)
    def test_bundled_configs(self, experiment):
        """同梱の設定ファイルはすべて読み込める"""
        cfg = load_experiment_config(CONFIG_DIR / f"{experiment}.json")
        assert cfg.experiment == experiment


class TestResultStore:
    """ResultStore のテスト"""

    def test_manifest(self, temp_data_dir):
        """マニフェストに設定ハッシュ・シード・ファイル一覧を記録する"""
        cfg = default_experiment_config("theory_tables", output_override=temp_data_dir)
        store = ResultStore(cfg.output_dir)
        store.write_csv("theory.csv", pd.DataFrame({"a": [1]}))
        store.write_text("curve.dat", "# k fp\n1 0.5\n")
        store.write_manifest(cfg, {"checks": "skipped"})

        manifest = json.loads((Path(temp_data_dir) / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["experiment"] == "theory_tables"
        assert manifest["config_hash"] == cfg.config_hash
        assert manifest["seeds"] == list(DEFAULT_SEEDS)
        assert manifest["files"] == ["curve.dat", "theory.csv"]
        assert manifest["checks"] == "skipped"
        assert "numpy" in manifest["versions"]

    def test_manifest_deterministic(self, temp_data_dir):
        """同じ設定・同じファイルからはバイト一致のマニフェスト"""
        cfg = default_experiment_config("theory_tables")
        paths = []
        for name in ("a", "b"):
            store = ResultStore(Path(temp_data_dir) / name)
            store.write_json("x.json", {"v": 1})
            paths.append(store.write_manifest(cfg))
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_creates_directory(self, temp_data_dir):
        """出力ディレクトリがなければ作る"""
        target = Path(temp_data_dir) / "nested" / "out"
        ResultStore(target)
        assert target.is_dir()
