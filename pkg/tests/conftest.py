"""
テスト共通フィクスチャ
"""

import shutil
import tempfile

import pytest

from core.distribution import DistributionSpec, Provenance, bounded_signal_u, sample_dataset
from core.linear_di import train_linear
from core.neuralnet import TrainConfig, init_mlp, train


@pytest.fixture
def temp_data_dir():
    """一時データディレクトリを作成"""
    temp_dir = tempfile.mkdtemp()
    yield temp_dir
    shutil.rmtree(temp_dir)


@pytest.fixture
def small_spec():
    """小さな分布仕様（K=2, D=5, σ=0.5, m=40）"""
    return DistributionSpec(u=(0.3, -0.2), noise_dim=5, noise_std=0.5, dataset_size=40)


@pytest.fixture
def bounded_spec():
    """有界信号部分空間に属する分布仕様（K=4, D=10, σ=0.25, m=200）"""
    return DistributionSpec(
        u=bounded_signal_u(4, 200), noise_dim=10, noise_std=0.25, dataset_size=200
    )


@pytest.fixture
def small_dataset(small_spec):
    """small_spec から生成した40サンプル"""
    return sample_dataset(small_spec, 40, seed=7, provenance=Provenance.S_V)


@pytest.fixture
def public_dataset(small_spec):
    """small_spec から別シードで生成した公開データ"""
    return sample_dataset(small_spec, 40, seed=8, provenance=Provenance.S_0)


@pytest.fixture
def linear_model(small_dataset):
    """small_dataset で学習した閉形式線形モデル"""
    return train_linear(small_dataset)


@pytest.fixture
def toy_mlp(small_spec, small_dataset):
    """small_dataset で短く学習した小さなReLUネット（2クラス）"""
    f = init_mlp([small_spec.input_dim, 8, 2], seed=3)
    return train(f, small_dataset, TrainConfig(epochs=5, batch_size=8, seed=1)).model
