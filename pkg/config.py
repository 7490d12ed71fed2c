"""
実験設定管理
JSON設定ファイルの読み込み、既定値の適用、型付き設定への変換、結果ファイルの保存を行う
"""

import hashlib
import json
import logging
import platform
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import scipy

from core.blindwalk import WalkConfig
from core.distribution import DistributionSpec, bounded_signal_u
from core.errors import ConfigError, FingerprintError
from core.neuralnet import PgdConfig, TrainConfig
from core.verifier import Architecture
from utils.file_io import atomic_write_csv, atomic_write_json, atomic_write_text, read_json

logger = logging.getLogger(__name__)

APP_VERSION = "1.0.0"

EXPERIMENT_IDS = (
    "theory_tables",
    "fp_curve",
    "linear_mc",
    "nonlinear_fp",
    "adversarial_fn",
    "countermeasure_gv",
    "countermeasure_noise",
    "pacbayes_check",
)

# デフォルト値（机上規模）
DEFAULT_DISTRIBUTION: dict[str, Any] = {
    "k": 4,
    "d": 10,
    "sigma": 0.25,
    "m": 2000,
    "u": None,
    "u_scale": 1.0,
    "balanced": False,
}
DEFAULT_SUSPECT: dict[str, Any] = {
    "hidden": [64, 64],
    "activation": "relu",
    "use_bias": True,
    "epochs": 30,
    "batch_size": 32,
    "learning_rate": 0.05,
    "momentum": 0.9,
}
DEFAULT_ADVERSARIAL: dict[str, Any] = {
    "gamma": 10 / 255,
    "step_size": None,
    "n_steps": 10,
    "extraction": False,
    "attack_size": 1000,
}
DEFAULT_WALK: dict[str, Any] = {
    "n_directions": 30,
    "max_steps": 200,
    "step_size": 0.005,
    "noise_steps": [25, 50, 100, 200],
}
DEFAULT_VERIFICATION: dict[str, Any] = {
    "k": 10,
    "alpha": 0.01,
    "arch": "two_layer_tanh",
    "hidden": 32,
    "gv_samples": 1000,
    "gv_epochs": 300,
    "gv_learning_rate": 0.05,
    "k_grid": [10, 30, 100],
    "augment": False,
}
DEFAULT_MONTECARLO: dict[str, Any] = {
    "n_trials": 10000,
    "finite_sample": True,
    "curve_d": 10,
    "curve_m": 5000,
    "curve_k": [1, 10, 100, 1000],
    "curve_trials": 2000,
    "margin_gap_cells": [[10, 0.25], [64, 0.25], [10, 1.0]],
    "margin_gap_m": 200,
    "margin_gap_trials": 400,
}
DEFAULT_THEORY: dict[str, Any] = {
    "noise_dims": [1, 10, 100, 1000],
    "boundary_m": 500,
    "fp_k": 10000,
    "fp_d": 10,
    "fp_m": 50000,
}
DEFAULT_PACBAYES: dict[str, Any] = {
    "hidden": [8],
    "m": 1000,
    "epochs": 20,
    "gamma_margin": 1.0,
    "sigma_p": 0.01,
    "n_perturbations": 200,
    "n_draws": 1000,
    "probe_size": 512,
}
DEFAULT_SEEDS = [0, 1, 2, 3, 4]

SECTION_DEFAULTS: dict[str, dict[str, Any]] = {
    "distribution": DEFAULT_DISTRIBUTION,
    "suspect": DEFAULT_SUSPECT,
    "adversarial": DEFAULT_ADVERSARIAL,
    "walk": DEFAULT_WALK,
    "verification": DEFAULT_VERIFICATION,
    "montecarlo": DEFAULT_MONTECARLO,
    "theory": DEFAULT_THEORY,
    "pacbayes": DEFAULT_PACBAYES,
}
TOP_LEVEL_KEYS = {"experiment", "seeds", "output_dir", "workers", *SECTION_DEFAULTS}


def get_section(raw: dict[str, Any], name: str) -> dict[str, Any]:
    """
    設定ファイルのセクションを既定値に重ねて取得する

    Args:
        raw: 設定ファイル全体
        name: セクション名

    Returns:
        既定値を補ったセクションの辞書

    Raises:
        ConfigError: 未知のキーがある場合
    """
    defaults = SECTION_DEFAULTS[name]
    section = raw.get(name, {}) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"セクション '{name}' はオブジェクトである必要があります")
    unknown = set(section) - set(defaults)
    if unknown:
        raise ConfigError(f"セクション '{name}' に未知のキーがあります: {sorted(unknown)}")
    return {**defaults, **section}


def get_distribution_config(raw: dict[str, Any]) -> DistributionSpec:
    """distribution セクションから分布仕様を作る（u が未指定なら有界信号の既定値）"""
    section = get_section(raw, "distribution")
    try:
        u = section["u"]
        if u is None:
            u = [
                v * float(section["u_scale"])
                for v in bounded_signal_u(int(section["k"]), int(section["m"]))
            ]
        return DistributionSpec.from_dict({**section, "u": u})
    except FingerprintError as e:
        raise ConfigError(f"distribution セクションが不正です: {e}") from e


@dataclass(frozen=True)
class SuspectConfig:
    """被疑モデルの構造と学習設定"""

    hidden: tuple[int, ...]
    activation: str
    use_bias: bool
    train: TrainConfig


def get_suspect_config(raw: dict[str, Any]) -> SuspectConfig:
    section = get_section(raw, "suspect")
    try:
        return SuspectConfig(
            hidden=tuple(int(h) for h in section["hidden"]),
            activation=str(section["activation"]),
            use_bias=bool(section["use_bias"]),
            train=TrainConfig(
                epochs=int(section["epochs"]),
                batch_size=int(section["batch_size"]),
                learning_rate=float(section["learning_rate"]),
                momentum=float(section["momentum"]),
            ),
        )
    except (FingerprintError, TypeError, ValueError) as e:
        raise ConfigError(f"suspect セクションが不正です: {e}") from e


@dataclass(frozen=True)
class AdversarialConfig:
    """敵対的学習（f_A）とモデル抽出（f_Q）の設定"""

    pgd: PgdConfig
    extraction: bool = False
    attack_size: int = 1000


def get_adversarial_config(raw: dict[str, Any]) -> AdversarialConfig:
    section = get_section(raw, "adversarial")
    try:
        step = section["step_size"]
        return AdversarialConfig(
            pgd=PgdConfig(
                gamma=float(section["gamma"]),
                step_size=None if step is None else float(step),
                n_steps=int(section["n_steps"]),
            ),
            extraction=bool(section["extraction"]),
            attack_size=int(section["attack_size"]),
        )
    except (FingerprintError, TypeError, ValueError) as e:
        raise ConfigError(f"adversarial セクションが不正です: {e}") from e


@dataclass(frozen=True)
class WalkSettings:
    walk: WalkConfig
    noise_steps: tuple[int, ...]


def get_walk_config(raw: dict[str, Any]) -> WalkSettings:
    section = get_section(raw, "walk")
    try:
        return WalkSettings(
            walk=WalkConfig(
                n_directions=int(section["n_directions"]),
                max_steps=int(section["max_steps"]),
                step_size=float(section["step_size"]),
            ),
            noise_steps=tuple(int(s) for s in section["noise_steps"]),
        )
    except (FingerprintError, TypeError, ValueError) as e:
        raise ConfigError(f"walk セクションが不正です: {e}") from e


@dataclass(frozen=True)
class VerificationConfig:
    """検証（識別器 g_V と仮説検定）の設定"""

    k: int
    alpha: float
    arch: Architecture
    hidden: int
    gv_samples: int
    gv_train: TrainConfig
    k_grid: tuple[int, ...]
    augment: bool


def get_verification_config(raw: dict[str, Any]) -> VerificationConfig:
    section = get_section(raw, "verification")
    try:
        alpha = float(section["alpha"])
        if not 0 < alpha < 1:
            raise ConfigError(f"alpha は (0, 1) が必要です: {alpha}")
        return VerificationConfig(
            k=int(section["k"]),
            alpha=alpha,
            arch=Architecture(section["arch"]),
            hidden=int(section["hidden"]),
            gv_samples=int(section["gv_samples"]),
            gv_train=TrainConfig(
                epochs=int(section["gv_epochs"]),
                learning_rate=float(section["gv_learning_rate"]),
            ),
            k_grid=tuple(int(k) for k in section["k_grid"]),
            augment=bool(section["augment"]),
        )
    except (FingerprintError, TypeError, ValueError) as e:
        raise ConfigError(f"verification セクションが不正です: {e}") from e


def get_plain_section(raw: dict[str, Any], name: str) -> dict[str, Any]:
    """型変換を伴わないセクション（montecarlo, theory, pacbayes）"""
    return get_section(raw, name)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    1つの実験の完全な設定

    Attributes:
        experiment: 実験ID
        spec: 分布仕様
        balanced: ラベルを半数ずつにするか
        seeds: 実行シードの一覧
        output_dir: 出力ディレクトリ
        workers: 並列ワーカー数
        raw: 既定値を補った設定全体（マニフェストとハッシュに使う）
    """

    experiment: str
    spec: DistributionSpec
    balanced: bool
    suspect: SuspectConfig
    adversarial: AdversarialConfig
    walk: WalkSettings
    verification: VerificationConfig
    montecarlo: dict[str, Any]
    theory: dict[str, Any]
    pacbayes: dict[str, Any]
    seeds: tuple[int, ...]
    output_dir: Path
    workers: int = 1
    raw: dict[str, Any] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_experiment_config(
    raw: dict[str, Any],
    seed_override: int | None = None,
    output_override: str | Path | None = None,
) -> ExperimentConfig:
    """
    設定辞書から ExperimentConfig を作る

    Raises:
        ConfigError: 実験IDが不明、未知のキー、値が不正な場合
    """
    if not isinstance(raw, dict):
        raise ConfigError("設定のトップレベルはオブジェクトである必要があります")
    unknown = set(raw) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"未知のトップレベルキーがあります: {sorted(unknown)}")
    experiment = raw.get("experiment")
    if experiment not in EXPERIMENT_IDS:
        raise ConfigError(f"不明な実験IDです: {experiment} (候補: {', '.join(EXPERIMENT_IDS)})")

    seeds = [seed_override] if seed_override is not None else raw.get("seeds", DEFAULT_SEEDS)
    try:
        seeds = [int(s) for s in seeds]
        workers = int(raw.get("workers", 1))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"seeds / workers が不正です: {e}") from e
    if not seeds:
        raise ConfigError("seeds が空です")
    output_dir = Path(output_override or raw.get("output_dir") or f"results/{experiment}")

    merged: dict[str, Any] = {name: get_section(raw, name) for name in SECTION_DEFAULTS}
    merged.update(
        {"experiment": experiment, "seeds": seeds, "workers": workers}
    )
    return ExperimentConfig(
        experiment=experiment,
        spec=get_distribution_config(raw),
        balanced=bool(merged["distribution"]["balanced"]),
        suspect=get_suspect_config(raw),
        adversarial=get_adversarial_config(raw),
        walk=get_walk_config(raw),
        verification=get_verification_config(raw),
        montecarlo=get_plain_section(raw, "montecarlo"),
        theory=get_plain_section(raw, "theory"),
        pacbayes=get_plain_section(raw, "pacbayes"),
        seeds=tuple(seeds),
        output_dir=output_dir,
        workers=workers,
        raw=merged,
    )


def load_experiment_config(
    path: str | Path,
    seed_override: int | None = None,
    output_override: str | Path | None = None,
) -> ExperimentConfig:
    """
    JSON設定ファイルを読み込む

    Raises:
        ConfigError: ファイルが読めない、JSONが不正、または設定が不正な場合
    """
    try:
        raw = read_json(path)
    except FileNotFoundError as e:
        raise ConfigError(f"設定ファイルが見つかりません: {path}") from e
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"設定ファイルの読み込みに失敗: {path}: {e}", exc_info=True)
        raise ConfigError(f"設定ファイルの読み込みに失敗: {path}: {e}") from e
    cfg = build_experiment_config(raw, seed_override, output_override)
    logger.info(f"設定を読み込みました: {path} (実験={cfg.experiment}, seeds={list(cfg.seeds)})")
    return cfg


def default_experiment_config(
    experiment: str, seed_override: int | None = None, output_override: str | Path | None = None
) -> ExperimentConfig:
    """設定ファイルなしで既定値だけの設定を作る"""
    return build_experiment_config({"experiment": experiment}, seed_override, output_override)


def with_output_dir(cfg: ExperimentConfig, output_dir: str | Path) -> ExperimentConfig:
    return replace(cfg, output_dir=Path(output_dir))


def library_versions() -> dict[str, str]:
    return {
        "app": APP_VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


class ResultStore:
    """
    実験の出力ディレクトリ

    すべてのファイルは原子的に書き込み、書いたファイル名をマニフェストに記録する。
    """

    def __init__(self, output_dir: str | Path):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def _record(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.path(name)

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        path = self._record(name)
        atomic_write_csv(path, frame)
        return path

    def write_json(self, name: str, data: dict[str, Any] | list[Any]) -> Path:
        path = self._record(name)
        atomic_write_json(path, data)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self._record(name)
        atomic_write_text(path, text)
        return path

    def write_manifest(self, cfg: ExperimentConfig, extra: dict[str, Any] | None = None) -> Path:
        """再実行に必要な情報（設定ハッシュ・シード・バージョン）を manifest.json に書く"""
        manifest = {
            "experiment": cfg.experiment,
            "config_hash": cfg.config_hash,
            "config": cfg.raw,
            "seeds": list(cfg.seeds),
            "versions": library_versions(),
            "files": sorted(self.files),
        }
        if extra:
            manifest.update(extra)
        path = self.path("manifest.json")
        atomic_write_json(path, manifest)
        logger.info(f"マニフェストを書き込みました: {path}")
        return path
