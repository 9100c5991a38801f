import faulthandler

import numpy as np
import pytest

from arguments.data_arguments import DataArguments
from arguments.model_arguments import ModelArguments
from arguments.training_arguments import TrainArguments
from data_synthesis.dataset_io import generate_dataset
from modeling.configuration_mpl import MplConfig
from modeling.modeling_mpl import init_params
from prompts.prompt_bank import bank_init

faulthandler.enable()


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="run the multi-seed experiment checks (several minutes)")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-seed experiment checks, only run with --run-slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_config():
    """2-layer model with d=16 and two prompts per bank, small enough for finite differences."""
    return MplConfig(d_model=16, num_attention_heads=2, num_encoder_layers=2, num_decoder_layers=2, ffn_dim=32,
                     vocab_size=12, max_title_len=8, max_attribute_len=4, image_feature_dim=4, image_seq_len=2,
                     num_prompts=2, dropout=0.0)


@pytest.fixture
def tiny_model(tiny_config):
    return init_params(tiny_config, seed=0), bank_init(tiny_config, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_data_args(data_dir="data", **overrides) -> DataArguments:
    values = dict(data_dir=str(data_dir), num_products=120, image_seq_len=3, image_feature_dim=8,
                  max_eval_samples=12, max_predict_samples=12)
    values.update(overrides)
    return DataArguments(**values)


def small_model_args(**overrides) -> ModelArguments:
    values = dict(d_model=16, num_attention_heads=2, num_encoder_layers=1, num_decoder_layers=1, ffn_dim=32,
                  num_prompts=2, dropout=0.0)
    values.update(overrides)
    return ModelArguments(**values)


def small_train_args(output_dir="output", **overrides) -> TrainArguments:
    values = dict(output_dir=str(output_dir), num_train_epochs=2, batch_size=8, learning_rate=1e-3,
                  fewshot_fraction=0.1, disable_tqdm=True, num_beams=2)
    values.update(overrides)
    return TrainArguments(**values)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(small_data_args())
