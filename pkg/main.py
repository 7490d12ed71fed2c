"""
データセット推論（DI）指紋検証ラボ コマンドラインインターフェース
"""

import argparse
import logging
import sys
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from config import (
    EXPERIMENT_IDS,
    ExperimentConfig,
    ResultStore,
    default_experiment_config,
    load_experiment_config,
)
from core.analytic import theory_table
from core.blindwalk import WalkConfig, embed_dataset, embed_samples, save_embeddings
from core.distribution import load_dataset, save_dataset
from core.errors import ConfigError, FingerprintError
from core.montecarlo import Scenario, TrialPlan, outcome_row, run_trials
from core.neuralnet import PgdConfig, dataset_accuracy, load_mlp, save_mlp
from core.pacbayes import bias_free, bound_components_frame, bound_inputs_from_model
from core.verifier import format_report, source_ids, train_gv, verify_ownership
from experiment_manager import (
    ExperimentManager,
    build_splits,
    load_result_tables,
    summarize,
    train_suspect,
)
from utils.file_io import frame_to_csv_text
from utils.seeding import derive_seed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_CHECK = 4
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

logger = logging.getLogger(__name__)


def setup_logging(level: str, out_dir: Path | None) -> None:
    """
    ログ設定（標準エラー出力と、出力先があれば <out>/run.log に追記）

    標準出力はCSVやレポートの出力に使う。
    """
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(out_dir / "run.log", encoding="utf-8"))
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, handlers=handlers, force=True)


def resolve_config(args: argparse.Namespace, experiment: str) -> ExperimentConfig:
    """--config があれば読み込み、なければ既定値の設定を作る"""
    if args.config:
        cfg = load_experiment_config(args.config, args.seed, args.out)
    else:
        cfg = default_experiment_config(experiment, args.seed, args.out)
    return cfg


def _print_frame(frame: pd.DataFrame, as_csv: bool = True) -> None:
    sys.stdout.write(frame_to_csv_text(frame) if as_csv else frame.to_string(index=False) + "\n")


def cmd_theory(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, "theory_tables")
    theory = cfg.theory
    table = theory_table(
        noise_dims=[int(d) for d in theory["noise_dims"]],
        boundary_m=int(theory["boundary_m"]),
        fp_k=int(theory["fp_k"]),
        fp_d=int(theory["fp_d"]),
        fp_m=int(theory["fp_m"]),
    )
    _print_frame(table, as_csv=args.csv)
    if args.out:
        ResultStore(args.out).write_csv("theory.csv", table)
    return EXIT_OK


def cmd_simulate_linear(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, "linear_mc")
    spec = cfg.spec
    if args.noise_dim is not None:
        spec = replace(spec, noise_dim=args.noise_dim)
    if args.m is not None:
        spec = replace(spec, dataset_size=args.m)
    try:
        plan = TrialPlan(
            spec=spec,
            k_reveal=args.k,
            lam=args.lam,
            n_trials=args.trials or int(cfg.montecarlo["n_trials"]),
            scenario=Scenario(args.scenario),
            base_seed=cfg.seeds[0],
            p_overlap=args.p_overlap,
            finite_sample=bool(cfg.montecarlo["finite_sample"]),
        )
    except ValueError as e:
        raise ConfigError(f"試行計画が不正です: {e}") from e
    frame = pd.DataFrame([outcome_row(plan, run_trials(plan, workers=cfg.workers))])
    _print_frame(frame)
    if args.out:
        ResultStore(args.out).write_csv("simulate_linear.csv", frame)
    return EXIT_OK


def cmd_train_suspect(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, "nonlinear_fp")
    if args.epochs is not None:
        train_cfg = replace(cfg.suspect.train, epochs=args.epochs)
        cfg = replace(cfg, suspect=replace(cfg.suspect, train=train_cfg))
    seed = cfg.seeds[0]
    splits = build_splits(cfg, seed)
    adversarial = PgdConfig(gamma=args.adv_gamma) if args.adv_gamma else None
    tag = "f_A" if adversarial else "f_V"
    model = train_suspect(cfg, splits.sv, seed, tag, adversarial)
    store = ResultStore(cfg.output_dir)
    save_mlp(model, store.path(f"{tag}.mlp"))
    save_dataset(splits.sv, store.path("S_V.csv"))
    save_dataset(splits.s0, store.path("S_0.csv"))
    save_dataset(splits.si, store.path("S_I.csv"))
    print(f"{tag} accuracy={dataset_accuracy(model, splits.test):.6f}")
    return EXIT_OK


def _walk_config(args: argparse.Namespace, cfg: ExperimentConfig) -> WalkConfig:
    walk = cfg.walk.walk
    return WalkConfig(
        n_directions=args.directions or walk.n_directions,
        max_steps=args.max_steps or walk.max_steps,
        step_size=args.step_size or walk.step_size,
        seed=cfg.seeds[0],
    )


def cmd_embed(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, "nonlinear_fp")
    model = load_mlp(args.model)
    data = load_dataset(args.data)
    walk = _walk_config(args, cfg)
    embeddings = embed_samples(model, data, walk, b=args.label, workers=cfg.workers)
    target = Path(args.out or ".") / "embeddings.csv"
    save_embeddings(embeddings, target)
    print(f"embeddings={len(embeddings)} queries={sum(e.queries for e in embeddings)} -> {target}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, "nonlinear_fp")
    seed = cfg.seeds[0]
    victim = load_mlp(args.victim)
    suspect = load_mlp(args.suspect)
    sv, s0 = load_dataset(args.sv), load_dataset(args.s0)
    walk = _walk_config(args, cfg)
    n = min(cfg.verification.gv_samples, len(sv), len(s0))
    sv_ids, s0_ids = source_ids(np.arange(n), np.arange(n), len(sv))
    batch = embed_dataset(
        victim,
        sv.subset(np.arange(n)),
        s0.subset(np.arange(n)),
        walk,
        workers=cfg.workers,
        sv_ids=sv_ids,
        s0_ids=s0_ids,
    )
    g = train_gv(
        batch.embeddings,
        arch=cfg.verification.arch,
        seed=derive_seed(seed, "gv"),
        train_cfg=cfg.verification.gv_train,
        hidden=cfg.verification.hidden,
    )
    report = verify_ownership(
        suspect,
        sv,
        s0,
        g,
        args.k or cfg.verification.k,
        walk,
        alpha=cfg.verification.alpha,
        seed=derive_seed(seed, "verify"),
        suspect_tag=Path(args.suspect).stem,
        workers=cfg.workers,
    )
    print(format_report(report))
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, args.experiment)
    if cfg.experiment != args.experiment:
        raise ConfigError(f"設定ファイルの実験ID {cfg.experiment} が指定 {args.experiment} と異なります")
    manager = ExperimentManager(cfg)
    result = manager.run_experiment()
    if args.check:
        checks = manager.check(result)
        for c in checks:
            print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
        if not all(c.passed for c in checks):
            return EXIT_CHECK
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    summary = summarize(load_result_tables(args.results))
    _print_frame(summary)
    if args.out:
        ResultStore(args.out).write_csv("summary.csv", summary)
    return EXIT_OK


def cmd_pacbayes(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, "pacbayes_check")
    section = cfg.pacbayes
    model = bias_free(load_mlp(args.model))
    B = args.bound
    if B is None:
        probes = build_splits(cfg, cfg.seeds[0]).test.inputs
        B = float(np.max(np.linalg.norm(probes, axis=1)))
    inputs = bound_inputs_from_model(
        model,
        B,
        args.gamma_margin or float(section["gamma_margin"]),
        args.m or int(section["m"]),
        args.sigma_p or float(section["sigma_p"]),
    )
    frame = bound_components_frame(inputs)
    _print_frame(frame)
    if args.out:
        ResultStore(args.out).write_csv("bound_components.csv", frame)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON実験設定ファイル")
    common.add_argument("--seed", type=int, help="シード一覧を1つのシードで上書き")
    common.add_argument("--out", help="出力ディレクトリ")
    common.add_argument("--check", action="store_true", help="受け入れ基準を評価（不合格なら終了コード4）")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="di-lab", description="データセット推論の指紋検証ラボ")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("theory", parents=[common], help="解析値の表")
    p.add_argument("--csv", action="store_true", help="CSVで出力")
    p.set_defaults(handler=cmd_theory)

    p = sub.add_parser("simulate-linear", parents=[common], help="線形DIのモンテカルロ試行")
    p.add_argument("--scenario", default=str(Scenario.FP_INDEPENDENT), choices=[str(s) for s in Scenario])
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--lam", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--p-overlap", type=int, default=0)
    p.add_argument("--noise-dim", type=int)
    p.add_argument("--m", type=int)
    p.set_defaults(handler=cmd_simulate_linear)

    p = sub.add_parser("train-suspect", parents=[common], help="被疑モデルを学習して保存")
    p.add_argument("--adv-gamma", type=float, help="指定するとPGD敵対的学習")
    p.add_argument("--epochs", type=int)
    p.set_defaults(handler=cmd_train_suspect)

    walk_args = argparse.ArgumentParser(add_help=False)
    walk_args.add_argument("--directions", type=int)
    walk_args.add_argument("--max-steps", type=int)
    walk_args.add_argument("--step-size", type=float)

    p = sub.add_parser("embed", parents=[common, walk_args], help="Blind Walk 埋め込み")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label", type=int, default=1, choices=[0, 1])
    p.set_defaults(handler=cmd_embed)

    p = sub.add_parser("verify", parents=[common, walk_args], help="所有権の検証")
    p.add_argument("--victim", required=True)
    p.add_argument("--suspect", required=True)
    p.add_argument("--sv", required=True)
    p.add_argument("--s0", required=True)
    p.add_argument("--k", type=int)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("experiment", parents=[common], help="実験を実行")
    p.add_argument("experiment", choices=EXPERIMENT_IDS)
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser("summarize", parents=[common], help="結果CSVを集計")
    p.add_argument("results", nargs="+")
    p.set_defaults(handler=cmd_summarize)

    p = sub.add_parser("pacbayes", parents=[common], help="PAC-Bayes 上界の成分")
    p.add_argument("--model", required=True)
    p.add_argument("--bound", type=float, help="入力ノルムの上限 B")
    p.add_argument("--m", type=int)
    p.add_argument("--gamma-margin", type=float)
    p.add_argument("--sigma-p", type=float)
    p.set_defaults(handler=cmd_pacbayes)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """メイン関数（終了コードを返す）"""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, Path(args.out) if args.out else None)
    try:
        return int(args.handler(args))
    except ConfigError as e:
        logger.error(f"設定エラー: {e}")
        return EXIT_CONFIG
    except (FingerprintError, OSError) as e:
        logger.error(f"実行に失敗しました: {e}", exc_info=True)
        return EXIT_STAGE
    except KeyboardInterrupt:
        logger.info("中断されました")
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
