import numpy as np
import pytest

from surfdiff.denoiser import Denoiser, DenoiserConfig


def tiny_config(**kw) -> DenoiserConfig:
    base = dict(layers=2, heads=2, hidden=16, mlp=32, n_patches=20, patch_size=6, timesteps=50, dtype="float64")
    base.update(kw)
    return DenoiserConfig(**base)


@pytest.fixture
def tiny_model():
    return Denoiser(tiny_config(), seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
