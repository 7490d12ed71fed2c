"""
実験の実行と集計
設定ファイルに従って各実験を最初から最後まで実行し、結果表・プロット用データ・マニフェストを書き出す
"""

import logging
import math
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from config import ExperimentConfig, ResultStore
from core.analytic import fp_curve, theory_table
from core.blindwalk import WalkConfig, embed_dataset, mean_linf_noise
from core.distribution import (
    Dataset,
    DistributionSpec,
    Provenance,
    bounded_signal_u,
    sample_dataset,
    split_dataset,
)
from core.errors import FingerprintError, FormatError, ProtocolError, StageError
from core.montecarlo import (
    Scenario,
    TrialPlan,
    evaluate_plans,
    margin_gap_experiment,
    sweep,
    validation_grid,
)
from core.neuralnet import (
    MlpModel,
    PgdConfig,
    dataset_accuracy,
    fit,
    init_mlp,
    label_to_class,
    train,
)
from core.pacbayes import (
    bias_free,
    bound_components_frame,
    bound_inputs_from_model,
    margin_similarity_check,
    perturbation_domination_check,
    spectral_tail_check,
)
from core.verifier import (
    Architecture,
    Distinguisher,
    Verdict,
    augment_gv_training,
    source_ids,
    train_gv,
    verify_ownership,
)
from utils.file_io import CSV_FLOAT_FORMAT, atomic_write_text
from utils.seeding import derive_seed, make_rng, parallel_map

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "experiment",
    "suspect",
    "seed",
    "accuracy",
    "delta_mu",
    "t",
    "p_value",
    "verdict",
    "k",
]
EXTRA_COLUMNS: dict[str, list[str]] = {
    "countermeasure_gv": ["gv_variant"],
    "countermeasure_noise": ["max_steps", "mean_noise"],
}
GROUP_KEYS = ["experiment", "suspect", "gv_variant", "max_steps", "k"]
SUMMARY_VALUES = ["accuracy", "delta_mu", "t", "p_value", "mean_noise"]
K_CURVE_COLUMNS = ["suspect", "seed", "k", "delta_mu", "p_value"]
PACBAYES_COLUMNS = [
    "seed",
    "accuracy_v",
    "accuracy_i",
    "n_applicable",
    "inapplicable",
    "domination_holds",
    "tail_threshold",
    "tail_predicted",
    "tail_empirical_max",
    "epsilon",
    "base_gap",
    "max_gap",
    "fraction_within_epsilon",
]
MARGIN_GAP_COLUMNS = [
    "seed",
    "D",
    "sigma",
    "m",
    "n_trials",
    "mean_gap",
    "stderr",
    "expected_gap",
    "z_gap",
    "train_accuracy",
    "test_accuracy",
]

# p値0の対数を避けるための下限
P_VALUE_FLOOR = np.finfo(np.float64).tiny
S0_FRACTION = 0.5

# 受け入れ基準のしきい値
Z_GAP_LIMIT_GRID = 4.0
Z_GAP_LIMIT_CURVE = 3.0
Z_GAP_LIMIT_MARGIN = 3.0
GRID_PASS_FRACTION = 0.95
MIN_APPLICABLE_PERTURBATIONS = 100
ANCHORS = (
    ("accuracy_bound", "D=1000", 0.6241, 5e-4),
    ("accuracy_bound", "D=10", 0.9992, 5e-4),
    ("analytic_fp", "k=10000", 0.309, 1e-3),
)


@dataclass(frozen=True)
class CheckResult:
    """受け入れ基準1つの判定"""

    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentResult:
    """実験1回分の結果表と書き出したファイル"""

    experiment: str
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    files: list[Path] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class Splits:
    """
    データ分割

    S_V と S_I は同じプールを半分ずつに分けたもので互いに素。
    S_0 と精度評価用の test は別シードで生成する。
    """

    sv: Dataset
    si: Dataset
    s0: Dataset
    test: Dataset


@contextmanager
def stage(name: str, seed: int | None) -> Iterator[None]:
    """ステージ内の失敗をステージ名とシード付きの StageError に変換する"""
    try:
        yield
    except StageError:
        raise
    except (FingerprintError, ArithmeticError, ValueError, OSError) as e:
        logger.error(f"ステージ '{name}' が失敗しました (seed={seed}): {e}", exc_info=True)
        raise StageError(name, seed, e) from e


def build_splits(cfg: ExperimentConfig, seed: int) -> Splits:
    spec = cfg.spec
    m = spec.dataset_size
    pool = sample_dataset(
        spec, 2 * m, derive_seed(seed, "pool"), Provenance.CUSTOM, cfg.balanced
    )
    sv, si = split_dataset(
        pool, [0.5, 0.5], derive_seed(seed, "split"), [Provenance.S_V, Provenance.S_I]
    )
    n_public = max(2, int(m * S0_FRACTION))
    s0 = sample_dataset(spec, n_public, derive_seed(seed, "S_0"), Provenance.S_0, cfg.balanced)
    test = sample_dataset(spec, n_public, derive_seed(seed, "test"), Provenance.CUSTOM)
    return Splits(sv=sv, si=si, s0=s0, test=test)


def train_suspect(
    cfg: ExperimentConfig,
    d: Dataset,
    seed: int,
    tag: str,
    adversarial: PgdConfig | None = None,
) -> MlpModel:
    """被疑モデル（2クラスMLP）を設定に従って学習する"""
    sizes = [cfg.spec.input_dim, *cfg.suspect.hidden, 2]
    f = init_mlp(
        sizes,
        seed=derive_seed(seed, "init", tag),
        hidden_activation=cfg.suspect.activation,
        use_bias=cfg.suspect.use_bias,
    )
    train_cfg = replace(
        cfg.suspect.train, adversarial=adversarial, seed=derive_seed(seed, "train", tag)
    )
    return train(f, d, train_cfg).model


def train_extracted(cfg: ExperimentConfig, victim: MlpModel, seed: int) -> MlpModel:
    """
    攻撃者が独自の入力を被害者モデルに問い合わせ、得たラベルで敵対的学習したモデル f_Q
    """
    attack = sample_dataset(
        cfg.spec, cfg.adversarial.attack_size, derive_seed(seed, "attack"), Provenance.CUSTOM
    )
    stolen_labels = victim.predict(attack.inputs)
    sizes = [cfg.spec.input_dim, *cfg.suspect.hidden, 2]
    f = init_mlp(
        sizes,
        seed=derive_seed(seed, "init", "f_Q"),
        hidden_activation=cfg.suspect.activation,
        use_bias=cfg.suspect.use_bias,
    )
    train_cfg = replace(
        cfg.suspect.train,
        adversarial=cfg.adversarial.pgd,
        seed=derive_seed(seed, "train", "f_Q"),
    )
    logger.info(f"抽出モデルを学習: 問い合わせ数={len(attack)}")
    return fit(f, attack.inputs, label_to_class(stolen_labels), train_cfg).model


def victim_walk(cfg: ExperimentConfig, seed: int, max_steps: int | None = None) -> WalkConfig:
    """被害者の歩行鍵を持つ Blind Walk 設定（g_V の学習と検証で共有する）"""
    walk = replace(cfg.walk.walk, seed=derive_seed(seed, "walk_key"))
    return walk if max_steps is None else replace(walk, max_steps=max_steps)


def fit_distinguisher(
    cfg: ExperimentConfig,
    victim: MlpModel,
    splits: Splits,
    seed: int,
    walk: WalkConfig,
    arch: Architecture,
    augment: bool = False,
) -> tuple[Distinguisher, float]:
    """
    被害者モデルの埋め込みで g_V を学習する

    S_V と S_0 から gv_samples 件ずつ選ぶ（gv_samples = |S_0| なら S_0 全体）。
    walk は検証と同じ歩行鍵を使う。

    Returns:
        (識別器, 学習用埋め込みの平均 ℓ∞ ノイズ。拡張時は NaN)
    """
    n = cfg.verification.gv_samples
    if not 1 <= n <= min(len(splits.sv), len(splits.s0)):
        raise ProtocolError(
            f"g_V の学習サンプル数 {n} が |S_V|={len(splits.sv)}, |S_0|={len(splits.s0)} を超えています"
        )
    rng = make_rng(derive_seed(seed, "gv_samples"))
    idx_v = np.sort(rng.choice(len(splits.sv), size=n, replace=False))
    idx_0 = np.sort(rng.choice(len(splits.s0), size=n, replace=False))
    sv_ids, s0_ids = source_ids(idx_v, idx_0, len(splits.sv))
    gv_sv, gv_s0 = splits.sv.subset(idx_v), splits.s0.subset(idx_0)
    gv_seed = derive_seed(seed, "gv")
    if augment:
        portion = splits.si.subset(np.arange(min(n, len(splits.si))))
        g = augment_gv_training(
            victim,
            gv_sv,
            gv_s0,
            portion,
            walk,
            arch=arch,
            seed=gv_seed,
            train_cfg=cfg.verification.gv_train,
            hidden=cfg.verification.hidden,
            sv_ids=sv_ids,
            s0_ids=s0_ids,
        )
        return g, math.nan
    batch = embed_dataset(victim, gv_sv, gv_s0, walk, sv_ids=sv_ids, s0_ids=s0_ids)
    g = train_gv(
        batch.embeddings,
        arch=arch,
        seed=gv_seed,
        train_cfg=cfg.verification.gv_train,
        hidden=cfg.verification.hidden,
    )
    return g, mean_linf_noise(batch.embeddings)


def verify_row(
    cfg: ExperimentConfig,
    suspect: MlpModel,
    tag: str,
    splits: Splits,
    g: Distinguisher,
    seed: int,
    walk: WalkConfig,
    k: int,
) -> dict[str, Any]:
    report = verify_ownership(
        suspect,
        splits.sv,
        splits.s0,
        g,
        k,
        walk,
        alpha=cfg.verification.alpha,
        seed=derive_seed(seed, "verify", k),
        suspect_tag=tag,
    )
    return {
        "experiment": cfg.experiment,
        "suspect": tag,
        "seed": seed,
        "accuracy": dataset_accuracy(suspect, splits.test),
        "delta_mu": report.delta_mu,
        "t": report.t_statistic,
        "p_value": report.p_value,
        "verdict": str(report.verdict),
        "k": k,
    }


def _independent_suspects(
    cfg: ExperimentConfig, splits: Splits, seed: int
) -> dict[str, MlpModel]:
    suspects = {}
    for tag, d in (("f_V", splits.sv), ("f_I", splits.si), ("f_0", splits.s0)):
        with stage(f"train {tag}", seed):
            suspects[tag] = train_suspect(cfg, d, seed, tag)
    return suspects


def _adversarial_suspects(
    cfg: ExperimentConfig, splits: Splits, seed: int
) -> dict[str, MlpModel]:
    suspects = {}
    with stage("train f_V", seed):
        suspects["f_V"] = train_suspect(cfg, splits.sv, seed, "f_V")
    with stage("train f_A", seed):
        suspects["f_A"] = train_suspect(cfg, splits.sv, seed, "f_A", cfg.adversarial.pgd)
    if cfg.adversarial.extraction:
        with stage("train f_Q", seed):
            suspects["f_Q"] = train_extracted(cfg, suspects["f_V"], seed)
    with stage("train f_0", seed):
        suspects["f_0"] = train_suspect(cfg, splits.s0, seed, "f_0")
    return suspects


def nonlinear_fp_seed(job: tuple[ExperimentConfig, int]) -> tuple[list[dict], list[dict]]:
    """5段階の分割手順で f_V, f_I, f_0 を学習し、k を変えながら検証する"""
    cfg, seed = job
    with stage("split", seed):
        splits = build_splits(cfg, seed)
    suspects = _independent_suspects(cfg, splits, seed)
    walk = victim_walk(cfg, seed)
    with stage("train g_V", seed):
        g, _ = fit_distinguisher(
            cfg,
            suspects["f_V"],
            splits,
            seed,
            walk,
            cfg.verification.arch,
            augment=cfg.verification.augment,
        )
    rows, curve = [], []
    with stage("verify", seed):
        for tag, f in suspects.items():
            rows.append(verify_row(cfg, f, tag, splits, g, seed, walk, cfg.verification.k))
            for k in cfg.verification.k_grid:
                row = verify_row(cfg, f, tag, splits, g, seed, walk, k)
                curve.append({c: row[c] for c in K_CURVE_COLUMNS})
    return rows, curve


def adversarial_fn_seed(job: tuple[ExperimentConfig, int]) -> list[dict]:
    """S_V を盗んで敵対的学習したモデル f_A（と任意で抽出モデル f_Q）を検証する"""
    cfg, seed = job
    with stage("split", seed):
        splits = build_splits(cfg, seed)
    suspects = _adversarial_suspects(cfg, splits, seed)
    walk = victim_walk(cfg, seed)
    with stage("train g_V", seed):
        g, _ = fit_distinguisher(
            cfg,
            suspects["f_V"],
            splits,
            seed,
            walk,
            cfg.verification.arch,
            augment=cfg.verification.augment,
        )
    with stage("verify", seed):
        return [
            verify_row(cfg, f, tag, splits, g, seed, walk, cfg.verification.k)
            for tag, f in suspects.items()
        ]


GV_VARIANTS: tuple[tuple[str, Architecture | None, bool], ...] = (
    ("baseline", None, False),
    ("augmented", None, True),
    ("four_layer", Architecture.FOUR_LAYER_DROPOUT, False),
)


def countermeasure_gv_seed(job: tuple[ExperimentConfig, int]) -> list[dict]:
    """識別器を変えた場合（データ拡張・4層化）でも f_I が検出されるかを調べる"""
    cfg, seed = job
    with stage("split", seed):
        splits = build_splits(cfg, seed)
    suspects = _independent_suspects(cfg, splits, seed)
    walk = victim_walk(cfg, seed)
    rows = []
    for variant, arch, augment in GV_VARIANTS:
        with stage(f"train g_V ({variant})", seed):
            g, _ = fit_distinguisher(
                cfg,
                suspects["f_V"],
                splits,
                seed,
                walk,
                arch or cfg.verification.arch,
                augment=augment,
            )
        with stage(f"verify ({variant})", seed):
            for tag, f in suspects.items():
                row = verify_row(cfg, f, tag, splits, g, seed, walk, cfg.verification.k)
                rows.append({**row, "gv_variant": variant})
    return rows


def countermeasure_noise_seed(job: tuple[ExperimentConfig, int]) -> list[dict]:
    """Blind Walk の最大ステップ数を増やしたときの f_A の検証結果"""
    cfg, seed = job
    with stage("split", seed):
        splits = build_splits(cfg, seed)
    suspects = _adversarial_suspects(cfg, splits, seed)
    rows = []
    for max_steps in cfg.walk.noise_steps:
        walk = victim_walk(cfg, seed, max_steps)
        with stage(f"train g_V (max_steps={max_steps})", seed):
            g, noise = fit_distinguisher(
                cfg, suspects["f_V"], splits, seed, walk, cfg.verification.arch
            )
        with stage(f"verify (max_steps={max_steps})", seed):
            for tag, f in suspects.items():
                row = verify_row(cfg, f, tag, splits, g, seed, walk, cfg.verification.k)
                rows.append({**row, "max_steps": max_steps, "mean_noise": noise})
    return rows


def pacbayes_seed(job: tuple[ExperimentConfig, int]) -> tuple[dict, pd.DataFrame]:
    """
    バイアスなしの小さなReLUネット2つ（S_V と S_I で学習）について
    摂動上界・スペクトルノルムの裾・マージン類似性を測る
    """
    cfg, seed = job
    section = cfg.pacbayes
    spec = replace(cfg.spec, dataset_size=int(section["m"]))
    with stage("split", seed):
        pool = sample_dataset(spec, 2 * spec.dataset_size, derive_seed(seed, "pool"))
        sv, si = split_dataset(
            pool, [0.5, 0.5], derive_seed(seed, "split"), [Provenance.S_V, Provenance.S_I]
        )
        probes = sample_dataset(spec, int(section["probe_size"]), derive_seed(seed, "probe"))
    models = {}
    sizes = [spec.input_dim, *[int(h) for h in section["hidden"]], 2]
    for tag, d in (("f_V", sv), ("f_I", si)):
        with stage(f"train {tag}", seed):
            f = init_mlp(sizes, seed=derive_seed(seed, "init", "pacbayes"), use_bias=False)
            train_cfg = replace(
                cfg.suspect.train,
                epochs=int(section["epochs"]),
                seed=derive_seed(seed, "train", tag),
            )
            models[tag] = train(f, d, train_cfg).model
    sigma_p = float(section["sigma_p"])
    with stage("perturbation bound", seed):
        domination = perturbation_domination_check(
            models["f_V"], probes.inputs, sigma_p, int(section["n_perturbations"]), seed
        )
    with stage("spectral tail", seed):
        tail = spectral_tail_check(models["f_V"], sigma_p, int(section["n_draws"]), seed)
    with stage("margin similarity", seed):
        similarity = margin_similarity_check(
            models["f_V"],
            models["f_I"],
            probes.inputs,
            label_to_class(probes.y),
            sigma_p,
            int(section["n_perturbations"]),
            seed,
            gamma_margin=float(section["gamma_margin"]),
            m=spec.dataset_size,
        )
        B = float(np.max(np.linalg.norm(probes.inputs, axis=1)))
        components = bound_components_frame(
            bound_inputs_from_model(
                bias_free(models["f_V"]),
                B,
                float(section["gamma_margin"]),
                spec.dataset_size,
                sigma_p,
            )
        )
    components.insert(0, "seed", seed)
    row = {
        "seed": seed,
        "accuracy_v": dataset_accuracy(models["f_V"], probes),
        "accuracy_i": dataset_accuracy(models["f_I"], probes),
        "n_applicable": len(domination.measured),
        "inapplicable": domination.inapplicable,
        "domination_holds": domination.holds,
        "tail_threshold": tail.threshold,
        "tail_predicted": tail.predicted,
        "tail_empirical_max": max(tail.empirical),
        "epsilon": similarity.epsilon,
        "base_gap": similarity.base_gap,
        "max_gap": similarity.max_gap,
        "fraction_within_epsilon": similarity.fraction_within_epsilon,
    }
    return row, components


def load_result_tables(paths: Sequence[str | Path]) -> list[pd.DataFrame]:
    """
    結果CSVを読み込む

    Raises:
        FormatError: 読み込めない、またはヘッダーが一致しない場合
    """
    tables = []
    for path in paths:
        try:
            tables.append(pd.read_csv(path, float_precision="round_trip"))
        except (OSError, ValueError) as e:
            raise FormatError(f"結果CSVの読み込みに失敗: {path}: {e}") from e
    check_headers(tables)
    return tables


def check_headers(tables: Sequence[pd.DataFrame]) -> None:
    if not tables:
        raise FormatError("集計する結果がありません")
    header = list(tables[0].columns)
    for i, table in enumerate(tables[1:], start=1):
        if list(table.columns) != header:
            raise FormatError(f"ヘッダーが一致しません (表 {i}): {list(table.columns)} != {header}")


def summarize(tables: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """
    シード間の平均・標準偏差をまとめる

    p値は算術平均に加えて幾何平均と桁（log10 の切り捨て）も出す。
    標準偏差は母標準偏差（1行だけの群は0）。

    Raises:
        FormatError: ヘッダーが一致しない、空、または必要な列がない場合
    """
    check_headers(tables)
    frame = pd.concat(tables, ignore_index=True)
    if frame.empty:
        raise FormatError("集計する行がありません")
    keys = [c for c in GROUP_KEYS if c in frame.columns]
    values = [c for c in SUMMARY_VALUES if c in frame.columns]
    if not keys or "p_value" not in values:
        raise FormatError(f"結果表に必要な列がありません: {list(frame.columns)}")

    frame = frame.assign(
        log_p=np.log(np.clip(frame["p_value"].to_numpy(dtype=np.float64), P_VALUE_FLOOR, 1.0))
    )
    if "verdict" in frame.columns:
        frame = frame.assign(stolen=(frame["verdict"] == str(Verdict.STOLEN)).astype(float))
    grouped = frame.groupby(keys, sort=True, dropna=False)
    means = grouped[values].mean()
    stds = grouped[values].std(ddof=0).fillna(0.0)

    summary = pd.DataFrame(index=means.index)
    summary["n_runs"] = grouped.size()
    for c in values:
        summary[f"{c}_mean"] = means[c]
        summary[f"{c}_std"] = stds[c]
    geomean = np.exp(grouped["log_p"].mean())
    summary["p_value_geomean"] = geomean
    summary["p_value_order"] = np.floor(np.log10(geomean)).astype(int)
    if "stolen" in frame.columns:
        summary["stolen_fraction"] = grouped["stolen"].mean()
    return summary.reset_index()


def emit_plotdata(
    frame: pd.DataFrame, x: str, y: str, yerr: str | None = None
) -> str:
    """
    空白区切りの x y [yerr] 行を作る（yerr 列が指定なし・全て欠損なら2列）
    """
    columns = [x, y]
    if yerr is not None and yerr in frame.columns and frame[yerr].notna().any():
        columns.append(yerr)
    lines = [f"# {' '.join(columns)}"]
    for values in frame[columns].itertuples(index=False):
        lines.append(" ".join(CSV_FLOAT_FORMAT % float(v) for v in values))
    return "\n".join(lines) + "\n"


def write_plotdata(
    path: str | Path, frame: pd.DataFrame, x: str, y: str, yerr: str | None = None
) -> None:
    atomic_write_text(path, emit_plotdata(frame, x, y, yerr))


def _median_by(frame: pd.DataFrame, keys: list[str], column: str) -> pd.Series:
    return frame.groupby(keys, sort=True)[column].median()


def _share(mask: pd.Series) -> float:
    return float(mask.mean()) if len(mask) else 0.0


class ExperimentManager:
    """
    設定1つ分の実験を実行し、結果を ResultStore に保存する

    シードごとの処理はワーカープールに投げ、投入順に集約する。
    """

    def __init__(self, cfg: ExperimentConfig, store: ResultStore | None = None):
        self.cfg = cfg
        self.store = store or ResultStore(cfg.output_dir)
        self.runners: dict[str, Callable[[], dict[str, pd.DataFrame]]] = {
            "theory_tables": self._run_theory_tables,
            "fp_curve": self._run_fp_curve,
            "linear_mc": self._run_linear_mc,
            "nonlinear_fp": self._run_nonlinear_fp,
            "adversarial_fn": self._run_adversarial_fn,
            "countermeasure_gv": self._run_countermeasure_gv,
            "countermeasure_noise": self._run_countermeasure_noise,
            "pacbayes_check": self._run_pacbayes_check,
        }
        self.checkers: dict[str, Callable[[dict[str, pd.DataFrame]], list[CheckResult]]] = {
            "theory_tables": self._check_theory_tables,
            "fp_curve": self._check_fp_curve,
            "linear_mc": self._check_linear_mc,
            "nonlinear_fp": self._check_nonlinear_fp,
            "adversarial_fn": self._check_adversarial_fn,
            "countermeasure_gv": self._check_countermeasure_gv,
            "countermeasure_noise": self._check_countermeasure_noise,
            "pacbayes_check": self._check_pacbayes_check,
        }

    def run_experiment(self) -> ExperimentResult:
        """
        設定された実験を実行する

        Returns:
            結果表（名前→DataFrame）と書き出したファイル

        Raises:
            StageError: いずれかのステージが失敗した場合（ステージ名とシード付き）
        """
        experiment = self.cfg.experiment
        logger.info(
            f"実験を開始: {experiment}, seeds={list(self.cfg.seeds)}, workers={self.cfg.workers}"
        )
        tables = self.runners[experiment]()
        result = ExperimentResult(experiment=experiment, tables=tables)
        for name, frame in tables.items():
            result.files.append(self.store.write_csv(f"{name}.csv", frame))
        self._write_plotdata(result)
        result.files.append(self.store.write_manifest(self.cfg))
        logger.info(f"実験が完了しました: {experiment} -> {self.store.output_dir}")
        return result

    def _jobs(self) -> list[tuple[ExperimentConfig, int]]:
        return [(self.cfg, seed) for seed in self.cfg.seeds]

    def _result_frame(self, rows: list[dict]) -> pd.DataFrame:
        columns = RESULT_COLUMNS + EXTRA_COLUMNS.get(self.cfg.experiment, [])
        return pd.DataFrame(rows, columns=columns)

    def _run_theory_tables(self) -> dict[str, pd.DataFrame]:
        theory = self.cfg.theory
        with stage("theory", None):
            table = theory_table(
                noise_dims=[int(d) for d in theory["noise_dims"]],
                boundary_m=int(theory["boundary_m"]),
                fp_k=int(theory["fp_k"]),
                fp_d=int(theory["fp_d"]),
                fp_m=int(theory["fp_m"]),
            )
        return {"theory": table}

    def _curve_template(self, seed: int) -> TrialPlan:
        mc = self.cfg.montecarlo
        m = int(mc["curve_m"])
        spec = DistributionSpec(
            u=bounded_signal_u(self.cfg.spec.k, m),
            noise_dim=int(mc["curve_d"]),
            noise_std=self.cfg.spec.noise_std,
            dataset_size=m,
        )
        return TrialPlan(
            spec=spec,
            k_reveal=1,
            n_trials=int(mc["curve_trials"]),
            scenario=Scenario.FP_INDEPENDENT,
            base_seed=derive_seed(seed, "fp_curve"),
            finite_sample=bool(mc["finite_sample"]),
        )

    def _run_fp_curve(self) -> dict[str, pd.DataFrame]:
        mc = self.cfg.montecarlo
        grid = [int(k) for k in mc["curve_k"]]
        with stage("fp_curve analytic", None):
            analytic = fp_curve(int(mc["curve_d"]), int(mc["curve_m"]), grid)
        frames = []
        for seed in self.cfg.seeds:
            with stage("fp_curve simulation", seed):
                frame = sweep(self._curve_template(seed), "k", grid, workers=self.cfg.workers)
            frame.insert(0, "seed", seed)
            frames.append(frame.merge(analytic, on="k", how="left"))
        return {"fp_curve": pd.concat(frames, ignore_index=True)}

    def _run_linear_mc(self) -> dict[str, pd.DataFrame]:
        mc = self.cfg.montecarlo
        sigma = self.cfg.spec.noise_std
        grids, gaps = [], []
        for seed in self.cfg.seeds:
            with stage("validation grid", seed):
                plans = validation_grid(
                    int(mc["n_trials"]), base_seed=derive_seed(seed, "grid"), sigma=sigma
                )
                plans = [replace(p, finite_sample=bool(mc["finite_sample"])) for p in plans]
                frame = evaluate_plans(plans, workers=self.cfg.workers)
            frame.insert(0, "seed", seed)
            grids.append(frame)
            m = int(mc["margin_gap_m"])
            for D, cell_sigma in mc["margin_gap_cells"]:
                spec = DistributionSpec(
                    u=bounded_signal_u(self.cfg.spec.k, m),
                    noise_dim=int(D),
                    noise_std=float(cell_sigma),
                    dataset_size=m,
                )
                with stage(f"margin gap D={D} sigma={cell_sigma}", seed):
                    r = margin_gap_experiment(
                        spec,
                        int(mc["margin_gap_trials"]),
                        derive_seed(seed, "margin_gap", int(D), float(cell_sigma)),
                        workers=self.cfg.workers,
                    )
                gaps.append(
                    {
                        "seed": seed,
                        "D": spec.noise_dim,
                        "sigma": spec.noise_std,
                        "m": m,
                        "n_trials": r.n_trials,
                        "mean_gap": r.mean_gap,
                        "stderr": r.stderr,
                        "expected_gap": r.expected_gap,
                        "z_gap": r.z_gap,
                        "train_accuracy": r.train_accuracy,
                        "test_accuracy": r.test_accuracy,
                    }
                )
        return {
            "linear_mc": pd.concat(grids, ignore_index=True),
            "margin_gap": pd.DataFrame(gaps, columns=MARGIN_GAP_COLUMNS),
        }

    def _run_nonlinear_fp(self) -> dict[str, pd.DataFrame]:
        rows, curve = [], []
        for seed_rows, seed_curve in parallel_map(
            nonlinear_fp_seed, self._jobs(), workers=self.cfg.workers
        ):
            rows += seed_rows
            curve += seed_curve
        results = self._result_frame(rows)
        return {
            "results": results,
            "k_curve": pd.DataFrame(curve, columns=K_CURVE_COLUMNS),
            "summary": summarize([results]),
        }

    def _run_seedwise(
        self, fn: Callable[[tuple[ExperimentConfig, int]], list[dict]]
    ) -> dict[str, pd.DataFrame]:
        outcomes = parallel_map(fn, self._jobs(), workers=self.cfg.workers)
        rows = [row for seed_rows in outcomes for row in seed_rows]
        results = self._result_frame(rows)
        return {"results": results, "summary": summarize([results])}

    def _run_adversarial_fn(self) -> dict[str, pd.DataFrame]:
        return self._run_seedwise(adversarial_fn_seed)

    def _run_countermeasure_gv(self) -> dict[str, pd.DataFrame]:
        return self._run_seedwise(countermeasure_gv_seed)

    def _run_countermeasure_noise(self) -> dict[str, pd.DataFrame]:
        return self._run_seedwise(countermeasure_noise_seed)

    def _run_pacbayes_check(self) -> dict[str, pd.DataFrame]:
        outcomes = parallel_map(pacbayes_seed, self._jobs(), workers=self.cfg.workers)
        return {
            "pacbayes": pd.DataFrame([row for row, _ in outcomes], columns=PACBAYES_COLUMNS),
            "bound_components": pd.concat([c for _, c in outcomes], ignore_index=True),
        }

    def _write_plotdata(self, result: ExperimentResult) -> None:
        tables = result.tables
        if "fp_curve" in tables:
            frame = tables["fp_curve"]
            pooled = (
                frame.groupby("k", sort=False)
                .agg(
                    rate=("rate", "mean"),
                    var=("stderr", lambda s: float(np.mean(np.square(s)) / len(s))),
                    analytic_fp=("analytic_fp", "first"),
                )
                .reset_index()
            )
            pooled["stderr"] = np.sqrt(pooled["var"])
            self._plot(result, "fp_curve_analytic.dat", pooled, "k", "analytic_fp")
            self._plot(result, "fp_curve_mc.dat", pooled, "k", "rate", "stderr")
        if "k_curve" in tables:
            medians = (
                tables["k_curve"].groupby(["suspect", "k"], sort=True)["p_value"].median().reset_index()
            )
            for suspect, group in medians.groupby("suspect", sort=True):
                self._plot(result, f"ver_more_data_{suspect}.dat", group, "k", "p_value")
        if result.experiment == "countermeasure_noise":
            medians = (
                tables["results"]
                .groupby(["suspect", "max_steps"], sort=True)["p_value"]
                .median()
                .reset_index()
            )
            for suspect, group in medians.groupby("suspect", sort=True):
                self._plot(result, f"more_noise_{suspect}.dat", group, "max_steps", "p_value")

    def _plot(
        self,
        result: ExperimentResult,
        name: str,
        frame: pd.DataFrame,
        x: str,
        y: str,
        yerr: str | None = None,
    ) -> None:
        result.files.append(self.store.write_text(name, emit_plotdata(frame, x, y, yerr)))

    def check(self, result: ExperimentResult) -> list[CheckResult]:
        """
        受け入れ基準を評価し、checks.json に書き出す

        Returns:
            基準ごとの判定
        """
        checks = self.checkers[result.experiment](result.tables)
        for c in checks:
            log = logger.info if c.passed else logger.warning
            log(f"受け入れ基準 {c.name}: {'合格' if c.passed else '不合格'} ({c.detail})")
        self.store.write_json(
            "checks.json",
            [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks],
        )
        return checks

    def _check_theory_tables(self, tables: dict[str, pd.DataFrame]) -> list[CheckResult]:
        table = tables["theory"]
        checks = []
        for formula, token, expected, tol in ANCHORS:
            hit = table[(table["formula"] == formula) & table["inputs"].str.contains(f"{token};|{token}$")]
            if hit.empty:
                checks.append(CheckResult(f"{formula}({token})", False, "行がありません"))
                continue
            value = float(hit["value"].iloc[0])
            checks.append(
                CheckResult(
                    f"{formula}({token})",
                    abs(value - expected) <= tol,
                    f"値={value:.6f}, 期待値={expected}±{tol:g}",
                )
            )
        return checks

    def _check_fp_curve(self, tables: dict[str, pd.DataFrame]) -> list[CheckResult]:
        frame = tables["fp_curve"]
        analytic = frame.groupby("k", sort=False)["analytic_fp"].first().to_numpy()
        monotone = bool(np.all(np.diff(analytic) <= 0))
        pooled = frame.groupby("k", sort=False).agg(
            rate=("rate", "mean"),
            analytic=("analytic", "first"),
            se=("stderr", lambda s: float(np.sqrt(np.mean(np.square(s)) / len(s)))),
        )
        z = (pooled["rate"] - pooled["analytic"]) / pooled["se"].where(pooled["se"] > 0)
        within = bool(np.all(z.abs().fillna(0.0) <= Z_GAP_LIMIT_CURVE))
        return [
            CheckResult("analytic monotone in k", monotone, f"値={np.round(analytic, 6).tolist()}"),
            CheckResult(
                "simulation within 3 stderr",
                within,
                f"max|z|={float(z.abs().max()) if z.notna().any() else 0.0:.3f}",
            ),
        ]

    def _check_linear_mc(self, tables: dict[str, pd.DataFrame]) -> list[CheckResult]:
        grid = tables["linear_mc"]
        z = grid["z_gap"].abs()
        defined = z.notna()
        share = _share(z[defined] <= Z_GAP_LIMIT_GRID)
        gaps = tables["margin_gap"]
        gap_ok = bool(np.all(gaps["z_gap"].abs().fillna(math.inf) <= Z_GAP_LIMIT_MARGIN))
        acc_ok = bool(gaps["train_accuracy"].mean() >= gaps["test_accuracy"].mean())
        return [
            CheckResult(
                "theory vs simulation grid",
                share >= GRID_PASS_FRACTION and len(grid) >= 12,
                f"|z|≤4 のセル割合={share:.3f} ({int(defined.sum())}セル)",
            ),
            CheckResult(
                "margin gap law",
                gap_ok,
                f"max|z|={float(gaps['z_gap'].abs().max()):.3f}",
            ),
            CheckResult(
                "train accuracy at least test accuracy",
                acc_ok,
                f"train={gaps['train_accuracy'].mean():.4f}, test={gaps['test_accuracy'].mean():.4f}",
            ),
        ]

    def _check_nonlinear_fp(self, tables: dict[str, pd.DataFrame]) -> list[CheckResult]:
        results = tables["results"]
        p = results.pivot_table(index="seed", columns="suspect", values="p_value")
        dmu = results.pivot_table(index="seed", columns="suspect", values="delta_mu")
        med = p.median()
        ordering = bool(med["f_V"] < med["f_I"] < med["f_0"])
        fi_share = _share(p["f_I"] < p["f_0"] / 10.0)
        dmu_share = _share((dmu["f_V"] > dmu["f_I"]) & (dmu["f_I"] > dmu["f_0"]))
        return [
            CheckResult(
                "median p ordering f_V < f_I < f_0",
                ordering,
                f"中央値 f_V={med['f_V']:.3g}, f_I={med['f_I']:.3g}, f_0={med['f_0']:.3g}",
            ),
            CheckResult("p(f_V) < 0.01", bool(med["f_V"] < 0.01), f"中央値={med['f_V']:.3g}"),
            CheckResult("p(f_0) > 0.1", bool(med["f_0"] > 0.1), f"中央値={med['f_0']:.3g}"),
            CheckResult("p(f_I) < p(f_0)/10 in 60% of seeds", fi_share >= 0.6, f"割合={fi_share:.2f}"),
            CheckResult(
                "delta_mu ordering in 80% of seeds", dmu_share >= 0.8, f"割合={dmu_share:.2f}"
            ),
        ]

    def _check_adversarial_fn(self, tables: dict[str, pd.DataFrame]) -> list[CheckResult]:
        results = tables["results"]
        alpha = self.cfg.verification.alpha
        fa = results[results["suspect"] == "f_A"]
        fv = results[results["suspect"] == "f_V"]
        fa_share = _share(fa["p_value"] > alpha)
        fv_share = _share(fv["p_value"] < alpha)
        return [
            CheckResult("f_A inconclusive in 80% of seeds", fa_share >= 0.8, f"割合={fa_share:.2f}"),
            CheckResult("f_V stolen in 80% of seeds", fv_share >= 0.8, f"割合={fv_share:.2f}"),
            CheckResult(
                "f_A accuracy below f_V",
                bool(fa["accuracy"].mean() < fv["accuracy"].mean()),
                f"f_A={fa['accuracy'].mean():.4f}, f_V={fv['accuracy'].mean():.4f}",
            ),
        ]

    def _check_countermeasure_gv(self, tables: dict[str, pd.DataFrame]) -> list[CheckResult]:
        results = tables["results"]
        alpha = self.cfg.verification.alpha
        med = _median_by(results[results["suspect"] == "f_I"], ["gv_variant"], "p_value")
        return [
            CheckResult(
                f"f_I still flagged ({variant})",
                bool(variant in med.index and med[variant] < alpha),
                f"中央値p={med.get(variant, math.nan):.3g}",
            )
            for variant in ("augmented", "four_layer")
        ]

    def _check_countermeasure_noise(self, tables: dict[str, pd.DataFrame]) -> list[CheckResult]:
        results = tables["results"]
        alpha = self.cfg.verification.alpha
        med = _median_by(results[results["suspect"] == "f_A"], ["max_steps"], "p_value")
        return [
            CheckResult(
                f"f_A inconclusive (max_steps={steps})",
                bool(value > alpha),
                f"中央値p={value:.3g}",
            )
            for steps, value in med.items()
        ]

    def _check_pacbayes_check(self, tables: dict[str, pd.DataFrame]) -> list[CheckResult]:
        frame = tables["pacbayes"]
        tail_ok = bool(np.all(frame["tail_empirical_max"] <= frame["tail_predicted"]))
        return [
            CheckResult(
                "perturbation bound dominates",
                bool(
                    frame["domination_holds"].all()
                    and (frame["n_applicable"] >= MIN_APPLICABLE_PERTURBATIONS).all()
                ),
                f"適用可能な摂動={frame['n_applicable'].tolist()} (必要数 {MIN_APPLICABLE_PERTURBATIONS})",
            ),
            CheckResult("spectral tail bound", tail_ok, f"経験最大={frame['tail_empirical_max'].max():.4g}"),
            CheckResult(
                "margin similarity within epsilon",
                bool(np.all(frame["fraction_within_epsilon"] >= 0.5)),
                f"割合={frame['fraction_within_epsilon'].round(3).tolist()}",
            ),
        ]
