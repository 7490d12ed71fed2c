"""
core/pacbayes.py のテスト
"""

import math

import numpy as np
import pytest

from core.errors import BoundInapplicableError, DomainError, ShapeError, StructureError
from core.neuralnet import Activation, MlpModel, init_mlp, label_to_class
from core.pacbayes import (
    BoundInputs,
    bias_free,
    bound_components_frame,
    bound_inputs_from_model,
    generalization_epsilon,
    margin_similarity_check,
    perturbation_bound,
    perturbation_domination_check,
    spectral_tail_bound,
    spectral_tail_check,
    spectral_tail_threshold,
)
from utils.seeding import make_rng


@pytest.fixture
def relu_net():
    """バイアスなしReLUネット（5→8→2）"""
    return init_mlp([5, 8, 2], seed=4, use_bias=False)


@pytest.fixture
def probes():
    return make_rng(9).standard_normal((32, 5))


def _scaled_identity(scale: float, size: int = 3) -> MlpModel:
    return MlpModel(
        weights=(scale * np.eye(size),),
        biases=(np.zeros(size),),
        activations=(Activation.IDENTITY,),
        use_bias=False,
    )


class TestBiasFree:
    """bias_free() のテスト"""

    def test_zero_biases(self, toy_mlp):
        """バイアスは0になり重みはそのまま"""
        f = bias_free(toy_mlp)
        assert not f.use_bias
        assert all(not np.any(b) for b in f.biases)
        for a, b in zip(f.weights, toy_mlp.weights, strict=True):
            np.testing.assert_array_equal(a, b)


class TestPerturbationBound:
    """perturbation_bound() のテスト"""

    def test_single_layer_value(self):
        """1層なら e·B·‖W‖₂·‖U‖₂/‖W‖₂ = e·B·‖U‖₂"""
        model = _scaled_identity(2.0)
        assert perturbation_bound(model, 3.0, [0.5]) == pytest.approx(math.e * 3.0 * 0.5)

    def test_inapplicable(self):
        """‖U_i‖₂ > ‖W_i‖₂/d なら BoundInapplicableError"""
        with pytest.raises(BoundInapplicableError):
            perturbation_bound(_scaled_identity(1.0), 1.0, [1.5])

    def test_length_mismatch(self, relu_net):
        """摂動ノルムの数が層数と違えば ShapeError"""
        with pytest.raises(ShapeError):
            perturbation_bound(relu_net, 1.0, [0.01])

    def test_negative_radius(self, relu_net):
        """負の B は DomainError"""
        with pytest.raises(DomainError):
            perturbation_bound(relu_net, -1.0, [0.01, 0.01])

    def test_domination(self, relu_net, probes):
        """小さな摂動では実測の出力変化が上界以下"""
        check = perturbation_domination_check(relu_net, probes, 0.001, n_draws=30, seed=0)
        assert check.inapplicable == 0
        assert len(check.measured) == 30
        assert check.holds
        assert list(check.to_frame().columns) == ["measured", "bound"]

    def test_domination_skips_large_perturbations(self, relu_net, probes):
        """前提を満たさない摂動は数えるだけで評価しない"""
        check = perturbation_domination_check(relu_net, probes, 10.0, n_draws=5, seed=0)
        assert check.inapplicable == 5
        assert check.measured == ()


class TestEpsilon:
    """BoundInputs / generalization_epsilon() のテスト"""

    def test_formula(self):
        """1層・単位ノルムの場合の値"""
        inputs = BoundInputs(
            B=1.0,
            d=1,
            h=2,
            gamma_margin=1.0,
            m=100,
            sigma_p=0.5,
            spectral_norms=(1.0,),
            frob_norms=(1.0,),
        )
        expected = math.sqrt((2 * math.log(2) + math.log(100 / 0.5)) / 100)
        assert generalization_epsilon(inputs) == pytest.approx(expected)

    def test_negative_radicand(self):
        """σ_p が d·m を大きく超えて根号の中が負なら BoundInapplicableError"""
        inputs = BoundInputs(
            B=1.0,
            d=1,
            h=2,
            gamma_margin=1.0,
            m=1,
            sigma_p=100.0,
            spectral_norms=(1.0,),
            frob_norms=(1.0,),
        )
        with pytest.raises(BoundInapplicableError, match="d·m"):
            generalization_epsilon(inputs)

    def test_large_sigma_still_defined(self):
        """σ_p > d·m でも根号の中が非負なら値を返す"""
        inputs = BoundInputs(
            B=1.0,
            d=1,
            h=2,
            gamma_margin=1.0,
            m=1,
            sigma_p=2.0,
            spectral_norms=(1.0,),
            frob_norms=(1.0,),
        )
        expected = math.sqrt(2 * math.log(2) + math.log(1 / 2.0))
        assert generalization_epsilon(inputs) == pytest.approx(expected)

    def test_decreases_with_m(self, relu_net):
        """学習集合が大きいほど ε は小さい"""
        small = generalization_epsilon(bound_inputs_from_model(relu_net, 1.0, 1.0, 100, 0.01))
        large = generalization_epsilon(bound_inputs_from_model(relu_net, 1.0, 1.0, 10000, 0.01))
        assert large < small

    def test_from_model(self, relu_net):
        """モデルから層数・最大幅・ノルムを取る"""
        inputs = bound_inputs_from_model(relu_net, 2.0, 1.0, 50, 0.01)
        assert (inputs.d, inputs.h) == (2, 8)
        assert inputs.frob_norms[0] >= inputs.spectral_norms[0]

    @pytest.mark.parametrize(
        "kwargs, error",
        [
            ({"B": 0.0}, DomainError),
            ({"gamma_margin": -1.0}, DomainError),
            ({"m": 0}, DomainError),
            ({"spectral_norms": (1.0, 1.0)}, ShapeError),
            ({"frob_norms": (0.0,)}, DomainError),
        ],
    )
    def test_invalid(self, kwargs, error):
        """不正な入力を拒否する"""
        base = {
            "B": 1.0,
            "d": 1,
            "h": 2,
            "gamma_margin": 1.0,
            "m": 10,
            "sigma_p": 0.1,
            "spectral_norms": (1.0,),
            "frob_norms": (1.0,),
        }
        with pytest.raises(error):
            BoundInputs(**(base | kwargs))

    def test_components_frame(self, relu_net):
        """層ごとのノルムと β, ε の表"""
        inputs = bound_inputs_from_model(relu_net, 1.0, 1.0, 100, 0.01)
        frame = bound_components_frame(inputs)
        assert list(frame.columns) == [
            "layer",
            "spectral_norm",
            "frobenius_norm",
            "beta",
            "epsilon",
        ]
        assert frame["beta"].iloc[0] == pytest.approx(
            math.sqrt(inputs.spectral_norms[0] * inputs.spectral_norms[1])
        )


class TestSpectralTail:
    """spectral_tail_threshold() / spectral_tail_bound() / spectral_tail_check() のテスト"""

    def test_threshold_gives_inverse_depth(self):
        """t = σ√(2h ln(2dh)) での予測値は 1/d"""
        t = spectral_tail_threshold(0.1, 3, 16)
        assert spectral_tail_bound(t, 0.1, 16) == pytest.approx(1 / 3)

    def test_bound_capped(self):
        """予測値は1を超えない"""
        assert spectral_tail_bound(0.0, 1.0, 8) == 1.0

    def test_empirical_below_prediction(self, relu_net):
        """経験頻度は予測値以下"""
        check = spectral_tail_check(relu_net, 0.01, n_draws=50, seed=0)
        assert len(check.empirical) == 2
        assert check.holds

    def test_invalid_draws(self, relu_net):
        """試行0回は DomainError"""
        with pytest.raises(DomainError):
            spectral_tail_check(relu_net, 0.01, n_draws=0, seed=0)


class TestMarginSimilarity:
    """margin_similarity_check() のテスト"""

    def test_identical_models(self, relu_net, probes):
        """同じモデル同士の摂動なしのマージン差は0"""
        classes = label_to_class(np.where(probes[:, 0] >= 0, 1, -1))
        report = margin_similarity_check(
            relu_net, relu_net, probes, classes, 0.001, n_perturbations=10, seed=0, m=100
        )
        assert report.base_gap == 0.0
        assert report.max_gap == 0.0
        assert len(report.perturbed_gaps) == 10
        assert len(report.triangle_bounds) == 10
        assert report.epsilon > 0
        assert 0.0 <= report.fraction_within_epsilon <= 1.0

    def test_perturbed_gap_within_triangle(self, relu_net, probes):
        """摂動下のマージン差は2つの上界の和の2倍以下"""
        other = init_mlp([5, 8, 2], seed=5, use_bias=False)
        classes = np.zeros(probes.shape[0], dtype=np.int64)
        report = margin_similarity_check(
            relu_net, other, probes, classes, 0.001, n_perturbations=5, seed=1, m=100
        )
        base = report.base_gap
        for gap, bound in zip(report.perturbed_gaps, report.triangle_bounds, strict=True):
            assert gap <= report.max_gap + 2 * bound + 1e-12
        assert base <= report.max_gap

    def test_structure_mismatch(self, relu_net, probes):
        """構造の異なるモデルは StructureError"""
        other = init_mlp([5, 4, 2], seed=0, use_bias=False)
        with pytest.raises(StructureError):
            margin_similarity_check(
                relu_net, other, probes, np.zeros(32, dtype=np.int64), 0.01, 1, seed=0, m=100
            )

    def test_training_size_required(self, relu_net):
        """学習集合サイズ m は省略できない"""
        inputs = make_rng(3).standard_normal((8, 5))
        classes = np.zeros(8, dtype=np.int64)
        with pytest.raises(TypeError):
            margin_similarity_check(relu_net, relu_net, inputs, classes, 0.001, 1, seed=0)
