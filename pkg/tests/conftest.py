import numpy as np
import pytest

from sfda_lab.model import ModelConfig, SFDAModel


@pytest.fixture
def small_model():
    """A narrow model with populated running statistics."""
    model = SFDAModel(ModelConfig(input_dim=2, num_classes=4, feature_dim=16, hidden=(8, 8)), seed=3)
    x = np.random.default_rng(0).normal(size=(32, 2))
    for _ in range(3):
        model.forward(x, "train")
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def track_setup():
    """Trained source models and generated domains for each track, seed 0."""
    from sfda_lab.config import LabConfig
    from sfda_lab.data import generate
    from sfda_lab.source_trainer import train_source

    cfg = LabConfig().with_seed(0)
    out = {}
    for track in ("unida", "places", "imnet"):
        source, target_train, target_eval = generate(cfg.data[track])
        res = train_source(source, cfg.source, source.meta["num_classes"])
        out[track] = {"cfg": cfg, "source": res, "target": target_train, "eval": target_eval}
    return out
