"""
全結合ニューラルネットワーク
順伝播・誤差逆伝播・SGD・PGD敵対的学習・スペクトルノルムを numpy で提供する
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
from pathlib import Path

import numpy as np

from core.distribution import Dataset
from core.errors import ConfigError, FormatError, ShapeError, StructureError, TrainingError
from core.linear_di import LinearModel
from utils.file_io import atomic_write_text
from utils.seeding import make_rng

logger = logging.getLogger(__name__)

MLP_FORMAT_VERSION = "mlp v1"

# PGDの既定値（ステップ幅は γ/4）
DEFAULT_PGD_STEPS = 10
DEFAULT_PGD_STEP_FRACTION = 0.25

DEFAULT_SPECTRAL_ITERS = 500


class Activation(StrEnum):
    RELU = "relu"
    TANH = "tanh"
    IDENTITY = "identity"


def _activate(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.TANH:
        return np.tanh(z)
    return z


def _activation_grad(kind: Activation, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return (z > 0).astype(np.float64)
    if kind is Activation.TANH:
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass(frozen=True, eq=False)
class MlpModel:
    """
    d層の全結合ネットワーク

    Attributes:
        weights: 各層の重み行列 W_i（形状 (出力, 入力)）
        biases: 各層のバイアスベクトル
        activations: 各層の活性化関数
        use_bias: Falseの場合バイアスは常に0で学習されない
        dropout: 学習時に隠れ層へ適用するドロップアウト率
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activations: tuple[Activation, ...]
    use_bias: bool = True
    dropout: float = 0.0

    def __post_init__(self) -> None:
        weights = tuple(_frozen_array(w, ndim=2) for w in self.weights)
        biases = tuple(_frozen_array(b, ndim=1) for b in self.biases)
        activations = tuple(Activation(a) for a in self.activations)
        if not weights:
            raise StructureError("層が1つ以上必要です")
        if not len(weights) == len(biases) == len(activations):
            raise StructureError("重み・バイアス・活性化関数の数が一致しません")
        for i, (w, b) in enumerate(zip(weights, biases, strict=True)):
            if b.shape[0] != w.shape[0]:
                raise ShapeError(f"層{i}のバイアス長 {b.shape[0]} が出力次元 {w.shape[0]} と一致しません")
            if i > 0 and w.shape[1] != weights[i - 1].shape[0]:
                raise ShapeError(
                    f"層{i}の入力次元 {w.shape[1]} が前層の出力次元 {weights[i - 1].shape[0]} と一致しません"
                )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"ドロップアウト率は [0, 1) が必要です: {self.dropout}")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "activations", activations)

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.weights[-1].shape[0])

    @property
    def max_width(self) -> int:
        """最大層幅 h"""
        return max(max(w.shape) for w in self.weights)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [int(w.shape[0]) for w in self.weights]

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        """ラベル ±1 を返す（2クラス出力は argmax、1出力は符号）"""
        logits = np.atleast_2d(forward(self, inputs))
        if self.output_dim == 1:
            return np.where(logits[:, 0] >= 0, 1, -1).astype(np.int64)
        return class_to_label(np.argmax(logits, axis=1))

    def with_params(
        self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]
    ) -> "MlpModel":
        return MlpModel(
            weights=tuple(weights),
            biases=tuple(biases),
            activations=self.activations,
            use_bias=self.use_bias,
            dropout=self.dropout,
        )


def _frozen_array(values: np.ndarray, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True)
    if array.ndim != ndim:
        raise ShapeError(f"{ndim}次元配列が必要です: {array.shape}")
    array.flags.writeable = False
    return array


def label_to_class(y: np.ndarray | int) -> np.ndarray:
    """ラベル {−1,+1} をクラス番号 {0,1} に変換する"""
    return ((np.asarray(y, dtype=np.int64) + 1) // 2).astype(np.int64)


def class_to_label(c: np.ndarray | int) -> np.ndarray:
    """クラス番号 {0,1} をラベル {−1,+1} に変換する"""
    return (2 * np.asarray(c, dtype=np.int64) - 1).astype(np.int64)


@dataclass(frozen=True)
class PgdConfig:
    """
    PGD攻撃の設定

    Attributes:
        gamma: ℓ∞ 予算 γ
        step_size: 1ステップの幅（Noneなら γ/4）
        n_steps: ステップ数
    """

    gamma: float
    step_size: float | None = None
    n_steps: int = DEFAULT_PGD_STEPS

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ConfigError(f"γ は正の値が必要です: {self.gamma}")
        if self.step_size is None:
            object.__setattr__(self, "step_size", self.gamma * DEFAULT_PGD_STEP_FRACTION)
        if not 0 < self.step_size <= self.gamma:  # type: ignore[operator]
            raise ConfigError(f"0 < step_size ≤ γ が必要です: {self.step_size}")
        if self.n_steps < 1:
            raise ConfigError(f"ステップ数は1以上が必要です: {self.n_steps}")

    @property
    def step(self) -> float:
        return float(self.step_size)  # type: ignore[arg-type]


@dataclass(frozen=True)
class TrainConfig:
    """
    SGD学習の設定

    Attributes:
        epochs: エポック数（0なら重みは変わらない）
        batch_size: ミニバッチサイズ
        learning_rate: 学習率
        adversarial: 指定するとバッチをPGD摂動で置き換えて学習する
        seed: シャッフル・ドロップアウト用のシード
        momentum: モーメンタム係数
    """

    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    adversarial: PgdConfig | None = None
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"エポック数は0以上が必要です: {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"バッチサイズは1以上が必要です: {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"学習率は正の値が必要です: {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"モーメンタムは [0, 1) が必要です: {self.momentum}")


@dataclass
class TrainResult:
    """学習済みモデルとエポックごとの平均損失"""

    model: MlpModel
    loss_history: list[float] = field(default_factory=list)


def init_mlp(
    layer_sizes: Sequence[int],
    seed: int,
    hidden_activation: Activation | str = Activation.RELU,
    output_activation: Activation | str = Activation.IDENTITY,
    use_bias: bool = True,
    dropout: float = 0.0,
) -> MlpModel:
    """
    ファンインでスケールした一様分布で重みを初期化する

    Args:
        layer_sizes: [入力次元, 隠れ層幅..., 出力次元]
        seed: 初期化シード
        hidden_activation: 隠れ層の活性化関数
        output_activation: 出力層の活性化関数
        use_bias: バイアスを使うか（使う場合も初期値は0）
        dropout: 学習時のドロップアウト率
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise StructureError(f"層サイズが不正です: {sizes}")
    rng = make_rng(seed)
    weights = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:], strict=True):
        limit = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
    biases = [np.zeros(s) for s in sizes[1:]]
    activations = [Activation(hidden_activation)] * (len(sizes) - 2) + [
        Activation(output_activation)
    ]
    return MlpModel(
        weights=tuple(weights),
        biases=tuple(biases),
        activations=tuple(activations),
        use_bias=use_bias,
        dropout=dropout,
    )


def _as_batch(f: MlpModel, x: np.ndarray) -> tuple[np.ndarray, bool]:
    array = np.asarray(x, dtype=np.float64)
    single = array.ndim == 1
    batch = array[None, :] if single else array
    if batch.ndim != 2 or batch.shape[1] != f.input_dim:
        raise ShapeError(f"入力の形状 {array.shape} がモデルの入力次元 {f.input_dim} と一致しません")
    return batch, single


def _forward_cache(
    f: MlpModel, x: np.ndarray, rng: np.random.Generator | None = None
) -> tuple[list[np.ndarray], list[np.ndarray], list[np.ndarray | None]]:
    """順伝播し、各層の入力・前活性・ドロップアウトマスクを返す"""
    inputs = [x]
    pre = []
    masks: list[np.ndarray | None] = []
    a = x
    for i, (w, b, act) in enumerate(zip(f.weights, f.biases, f.activations, strict=True)):
        z = a @ w.T + b
        a = _activate(act, z)
        mask = None
        if rng is not None and f.dropout > 0 and i < f.depth - 1:
            keep = 1.0 - f.dropout
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        pre.append(z)
        masks.append(mask)
        inputs.append(a)
    return inputs, pre, masks


def forward(f: MlpModel, x: np.ndarray) -> np.ndarray:
    """
    順伝播（推論時、ドロップアウトなし）

    Args:
        x: 形状 (入力次元,) または (n, 入力次元)

    Returns:
        出力ロジット。入力と同じ先頭形状
    """
    batch, single = _as_batch(f, x)
    out = _forward_cache(f, batch)[0][-1]
    return out[0] if single else out


def _loss_and_output_grad(
    f: MlpModel, out: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """平均損失、出力に対する勾配、サンプルごとの損失"""
    n = out.shape[0]
    if f.output_dim == 1:
        t = np.asarray(targets, dtype=np.float64).reshape(n)
        diff = out[:, 0] - t
        per_sample = 0.5 * diff * diff
        return float(np.mean(per_sample)), (diff / n)[:, None], per_sample
    classes = np.asarray(targets, dtype=np.int64).reshape(n)
    if np.any((classes < 0) | (classes >= f.output_dim)):
        raise ShapeError(f"クラス番号が範囲外です: 出力数={f.output_dim}")
    shifted = out - out.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    per_sample = -log_probs[np.arange(n), classes]
    grad = np.exp(log_probs)
    grad[np.arange(n), classes] -= 1.0
    return float(np.mean(per_sample)), grad / n, per_sample


def _backward(
    f: MlpModel,
    inputs: list[np.ndarray],
    pre: list[np.ndarray],
    masks: list[np.ndarray | None],
    grad_out: np.ndarray,
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    grads_w: list[np.ndarray] = [np.empty(0)] * f.depth
    grads_b: list[np.ndarray] = [np.empty(0)] * f.depth
    grad_a = grad_out
    for i in reversed(range(f.depth)):
        a_out = inputs[i + 1]
        mask = masks[i]
        if mask is not None:
            grad_a = grad_a * mask
            # 活性化の微分はマスク前の出力で評価する
            a_out = _activate(f.activations[i], pre[i])
        delta = grad_a * _activation_grad(f.activations[i], pre[i], a_out)
        grads_w[i] = delta.T @ inputs[i]
        grads_b[i] = delta.sum(axis=0) if f.use_bias else np.zeros_like(f.biases[i])
        grad_a = delta @ f.weights[i]
    return grads_w, grads_b, grad_a


def loss_and_gradients(
    f: MlpModel,
    x: np.ndarray,
    targets: np.ndarray,
    rng: np.random.Generator | None = None,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """
    平均損失と各層の重み・バイアスの勾配

    出力が2以上ならクロスエントロピー（targetsはクラス番号）、
    1なら二乗損失 0.5·(出力−target)²（回帰ヘッド）。
    rngを渡すとドロップアウトを適用する。
    """
    batch, _ = _as_batch(f, x)
    inputs, pre, masks = _forward_cache(f, batch, rng)
    loss, grad_out, _ = _loss_and_output_grad(f, inputs[-1], targets)
    grads_w, grads_b, _ = _backward(f, inputs, pre, masks, grad_out)
    return loss, grads_w, grads_b


def input_gradient(f: MlpModel, x: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """サンプルごとの損失の入力に対する勾配（形状は x と同じ）"""
    batch, single = _as_batch(f, x)
    inputs, pre, masks = _forward_cache(f, batch)
    _, grad_out, _ = _loss_and_output_grad(f, inputs[-1], targets)
    # 平均損失の勾配をサンプル単位に戻す
    grad_x = _backward(f, inputs, pre, masks, grad_out * batch.shape[0])[2]
    return grad_x[0] if single else grad_x


def sample_losses(f: MlpModel, x: np.ndarray, targets: np.ndarray) -> np.ndarray:
    batch, _ = _as_batch(f, x)
    out = _forward_cache(f, batch)[0][-1]
    return _loss_and_output_grad(f, out, targets)[2]


def margin_nl(f: MlpModel, x: np.ndarray, y: int) -> float:
    """
    多クラスの予測マージン f(x)[y] − max_{j≠y} f(x)[j]

    Args:
        y: クラス番号（2値ラベル ±1 は label_to_class() で変換してから渡す）
    """
    logits = np.asarray(forward(f, x), dtype=np.float64)
    if logits.ndim != 1:
        raise ShapeError("margin_nl は1サンプルの入力を受け取ります")
    return float(margins_nl(f, logits[None, :], np.array([y]), logits_given=True)[0])


def margins_nl(
    f: MlpModel, x: np.ndarray, classes: np.ndarray, logits_given: bool = False
) -> np.ndarray:
    """バッチ版の予測マージン"""
    logits = np.asarray(x, dtype=np.float64) if logits_given else np.atleast_2d(forward(f, x))
    classes = np.asarray(classes, dtype=np.int64)
    if logits.shape[1] < 2:
        raise ShapeError("マージンの計算には2つ以上の出力が必要です")
    if np.any((classes < 0) | (classes >= logits.shape[1])):
        raise ShapeError(f"クラス番号が範囲外です: 出力数={logits.shape[1]}")
    rows = np.arange(logits.shape[0])
    true_logit = logits[rows, classes]
    others = logits.copy()
    others[rows, classes] = -np.inf
    return true_logit - others.max(axis=1)


def predict_labels(f: MlpModel, x: np.ndarray) -> np.ndarray:
    """クラス番号（argmax）を返す"""
    return np.argmax(np.atleast_2d(forward(f, x)), axis=1)


def dataset_accuracy(f: MlpModel, d: Dataset) -> float:
    """データセットに対する分類精度"""
    return float(np.mean(f.predict(d.inputs) == d.y))


def pgd_attack(
    f: MlpModel, x: np.ndarray, y: np.ndarray | int, cfg: PgdConfig
) -> np.ndarray:
    """
    ℓ∞ 球への射影付き勾配上昇で損失を大きくする摂動を求める

    Args:
        x: 入力（1サンプルまたはバッチ）
        y: クラス番号（回帰ヘッドの場合は目標値）
        cfg: PGD設定

    Returns:
        ‖x'−x‖∞ ≤ γ を満たす敵対的入力
    """
    x0 = np.asarray(x, dtype=np.float64)
    x_adv = x0.copy()
    targets = np.atleast_1d(np.asarray(y))
    for _ in range(cfg.n_steps):
        grad = input_gradient(f, x_adv, targets)
        x_adv = x_adv + cfg.step * np.sign(grad)
        x_adv = np.clip(x_adv, x0 - cfg.gamma, x0 + cfg.gamma)
    return x_adv


def fit(
    f: MlpModel, x: np.ndarray, targets: np.ndarray, cfg: TrainConfig
) -> TrainResult:
    """
    ミニバッチSGDで学習する（元のモデルは変更しない）

    Raises:
        TrainingError: 損失が非有限になった場合（エポック番号付き）
    """
    batch_x, _ = _as_batch(f, x)
    targets = np.asarray(targets)
    n = batch_x.shape[0]
    if n == 0:
        raise TrainingError("学習データが空です", epoch=0)
    if targets.shape[0] != n:
        raise ShapeError(f"目標値の数 {targets.shape[0]} が入力数 {n} と一致しません")

    rng = make_rng(cfg.seed)
    weights = [w.copy() for w in f.weights]
    biases = [b.copy() for b in f.biases]
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    model = f
    history: list[float] = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, tb = batch_x[idx], targets[idx]
            if cfg.adversarial is not None:
                xb = pgd_attack(model, xb, tb, cfg.adversarial)
            loss, grads_w, grads_b = loss_and_gradients(model, xb, tb, rng)
            if not math.isfinite(loss):
                logger.error(f"損失が発散しました: epoch={epoch}")
                raise TrainingError(f"損失が非有限になりました (epoch={epoch})", epoch=epoch)
            total += loss * idx.size
            for i in range(model.depth):
                vel_w[i] = cfg.momentum * vel_w[i] - cfg.learning_rate * grads_w[i]
                weights[i] += vel_w[i]
                if model.use_bias:
                    vel_b[i] = cfg.momentum * vel_b[i] - cfg.learning_rate * grads_b[i]
                    biases[i] += vel_b[i]
            model = f.with_params(weights, biases)
        history.append(total / n)
        logger.debug(f"epoch {epoch}: 平均損失={history[-1]:.6f}")

    return TrainResult(model=model, loss_history=history)


def train(f: MlpModel, d: Dataset, cfg: TrainConfig) -> TrainResult:
    """
    データセットで分類器を学習する

    ラベル ±1 はクラス番号 {0,1} に変換する。cfg.adversarial を指定すると
    各バッチのサンプルをPGD摂動で置き換えてから勾配ステップを行う。
    """
    if len(d) == 0:
        raise TrainingError("学習データが空です", epoch=0)
    if f.output_dim < 2:
        raise StructureError("分類の学習には2つ以上の出力が必要です")
    mode = "敵対的学習" if cfg.adversarial is not None else "通常学習"
    logger.info(f"{mode}を開始: n={len(d)}, epochs={cfg.epochs}, 由来={d.provenance}")
    return fit(f, d.inputs, label_to_class(d.y), cfg)


def mlp_from_linear(f: LinearModel) -> MlpModel:
    """
    線形モデルを2出力・バイアスなし1層ネットに変換する

    ロジットは (−f(x)/2, f(x)/2) となり、margin_nl は y·f(x) と一致する。
    """
    w = f.weights
    return MlpModel(
        weights=(np.vstack([-w / 2.0, w / 2.0]),),
        biases=(np.zeros(2),),
        activations=(Activation.IDENTITY,),
        use_bias=False,
    )


def spectral_norm(
    w: np.ndarray, iters: int = DEFAULT_SPECTRAL_ITERS, tol: float = 1e-14
) -> float:
    """
    べき乗法による最大特異値の推定

    Args:
        w: 行列
        iters: 最大反復回数（1以上）
        tol: 相対変化がこれ未満になったら打ち切る

    Returns:
        ‖w‖₂ の推定値。零行列なら0
    """
    if iters < 1:
        raise ConfigError(f"反復回数は1以上が必要です: {iters}")
    matrix = np.atleast_2d(np.asarray(w, dtype=np.float64))
    if not np.any(matrix):
        return 0.0
    v = make_rng(0).standard_normal(matrix.shape[1])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iters):
        u = matrix @ v
        sigma = float(np.linalg.norm(u))
        if sigma == 0.0:
            return 0.0
        v = matrix.T @ (u / sigma)
        v_norm = float(np.linalg.norm(v))
        if v_norm == 0.0:
            return sigma
        v /= v_norm
        if abs(v_norm - estimate) <= tol * v_norm:
            estimate = v_norm
            break
        estimate = v_norm
    return float(np.linalg.norm(matrix @ v))


def layer_spectral_norms(f: MlpModel) -> list[float]:
    return [spectral_norm(w) for w in f.weights]


def layer_frobenius_norms(f: MlpModel) -> list[float]:
    return [float(np.linalg.norm(w, "fro")) for w in f.weights]


def perturb(
    f: MlpModel, sigma_p: float, rng: np.random.Generator
) -> tuple[MlpModel, list[np.ndarray]]:
    """
    重みに N(0, σ_p²) の摂動 U_i を加える（バイアスは変えない）

    Returns:
        (摂動後のモデル, 摂動行列のリスト)
    """
    if sigma_p < 0:
        raise ConfigError(f"σ_p は0以上が必要です: {sigma_p}")
    noise = [rng.standard_normal(w.shape) * sigma_p for w in f.weights]
    perturbed = f.with_params(
        [w + u for w, u in zip(f.weights, noise, strict=True)], f.biases
    )
    return perturbed, noise


def normalize_layers(f: MlpModel, beta: float | None = None) -> MlpModel:
    """
    各層を W̃_i = (β/‖W_i‖₂)W_i に正規化する

    β を省略すると ∏‖W_i‖₂ の幾何平均を使い、スペクトルノルムの積を保つ。
    バイアスなしReLUネットでは関数が変わらない。

    Raises:
        StructureError: バイアスを持つモデルの場合
    """
    if f.use_bias and any(np.any(b) for b in f.biases):
        raise StructureError("バイアスを持つモデルは正規化できません")
    norms = layer_spectral_norms(f)
    if any(n == 0.0 for n in norms):
        raise StructureError("零行列の層は正規化できません")
    if beta is None:
        beta = math.exp(sum(math.log(n) for n in norms) / len(norms))
    return f.with_params([w * (beta / n) for w, n in zip(f.weights, norms, strict=True)], f.biases)


def _join(values: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in np.ravel(values))


def mlp_to_text(f: MlpModel) -> str:
    lines = [
        MLP_FORMAT_VERSION,
        f"use_bias: {str(f.use_bias).lower()}",
        f"dropout: {f.dropout!r}",
    ]
    for i, (w, b, act) in enumerate(zip(f.weights, f.biases, f.activations, strict=True)):
        rows, cols = w.shape
        lines.append(f"layer_{i}: {rows} {cols}; {_join(w)}; {act}")
        lines.append(f"bias_{i}: {_join(b)}")
    return "\n".join(lines) + "\n"


def mlp_from_text(text: str) -> MlpModel:
    """
    mlp_to_text() の形式を解析する

    Raises:
        FormatError: 形式が不正な場合
    """
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines or lines[0].strip() != MLP_FORMAT_VERSION:
        raise FormatError(f"未対応のモデル形式です: {lines[0] if lines else ''}")
    try:
        header = dict(line.split(":", 1) for line in lines[1:3])
        use_bias = header["use_bias"].strip() == "true"
        dropout = float(header["dropout"])
        body = lines[3:]
        if len(body) % 2 != 0:
            raise ValueError("layer行とbias行の数が一致しません")
        weights, biases, activations = [], [], []
        for i in range(0, len(body), 2):
            name, rest = body[i].split(":", 1)
            if name.strip() != f"layer_{i // 2}":
                raise ValueError(f"想定外の行: {name}")
            shape_part, values_part, act_part = (p.strip() for p in rest.split(";"))
            rows, cols = (int(v) for v in shape_part.split())
            values = np.array([float(v) for v in values_part.split(",")])
            weights.append(values.reshape(rows, cols))
            activations.append(Activation(act_part))
            bias_name, bias_rest = body[i + 1].split(":", 1)
            if bias_name.strip() != f"bias_{i // 2}":
                raise ValueError(f"想定外の行: {bias_name}")
            biases.append(np.array([float(v) for v in bias_rest.strip().split(",")]))
    except (KeyError, ValueError) as e:
        raise FormatError(f"モデルファイルの解析に失敗: {e}") from e
    return MlpModel(
        weights=tuple(weights),
        biases=tuple(biases),
        activations=tuple(activations),
        use_bias=use_bias,
        dropout=dropout,
    )


def save_mlp(f: MlpModel, path: str | Path) -> None:
    atomic_write_text(path, mlp_to_text(f))
    logger.info(f"モデルを保存しました: {path} (層数={f.depth})")


def load_mlp(path: str | Path) -> MlpModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise FormatError(f"モデルファイルを読み込めません: {path}: {e}") from e
    return mlp_from_text(text)
