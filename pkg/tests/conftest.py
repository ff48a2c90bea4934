import numpy as np
import pytest

from xmodal.model import ModelConfig, init_model_params


@pytest.fixture(scope="session")
def tiny_cfg():
    """D=2, 8x8, small hiddens: the gradcheck-scale model."""
    return ModelConfig(
        latent_dim=2,
        frame_hidden_dim=16,
        audio_hidden_dim=16,
        recurrent_hidden_dim=16,
        height=8,
        width=8,
        channels=1,
        audio_dim=4,
        recon_weight=1.0,
        kl_weight=1.0,
        enc_channels=(8, 16),
    )


@pytest.fixture(scope="session")
def tiny_sample():
    rng = np.random.default_rng(1234)
    frames = rng.uniform(0.0, 1.0, (3, 8, 8, 1))
    audio = rng.standard_normal((3, 4))
    return frames, audio


@pytest.fixture()
def tiny_params(tiny_cfg):
    return init_model_params(tiny_cfg, rng_seed=7, dtype=np.float64)
