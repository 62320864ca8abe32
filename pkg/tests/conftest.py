import src  # noqa: F401  must precede numpy

import numpy as np
import pytest

from src.models import MemoryConfig, ModelConfig


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(encoder="sanm", decoder="dfsmn", **overrides) -> ModelConfig:
    """d=8, N=M=1, K=0 with 6-wide inputs."""
    fields = dict(encoder_kind=encoder, decoder_kind=decoder, n_blocks=1, m_blocks=1, k_blocks=0,
                  d_basic=8, d_ffn=12, heads=2, vocab_size=9, input_dim=6,
                  mem_cfg=MemoryConfig(d=8, n1=2, n2=1), dropout=0.0)
    fields.update(overrides)
    if "d_basic" in overrides and "mem_cfg" not in overrides:
        fields["mem_cfg"] = MemoryConfig(d=overrides["d_basic"], n1=2, n2=1)
    return ModelConfig(**fields)
