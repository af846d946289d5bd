"""Shared fixtures: seeded generators, tiny configs and a tiny trained run."""

from pathlib import Path

import numpy as np
import pytest

from hicl.data import make_synthetic_stream
from hicl.model import HiclModel
from hicl.models import (DataConfig, EncoderConfig, ModelConfig, ReplayConfig, RunConfig, TrainSchedule,
                         load_run_config)
from hicl.trainer import ContinualTrainer
from hicl.utils import rng_stream

REPO_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = REPO_ROOT / "configs"


@pytest.fixture
def rng():
    """Fresh generator with a fixed seed."""
    return np.random.default_rng(42)


@pytest.fixture
def tiny_encoder():
    """Six inputs, 20 DG units, k = 2."""
    return EncoderConfig(
        input_dim=6,
        backbone_widths=[8],
        grid_units=2,
        grid_dim=4,
        dg_dim=20,
        sparsity_rho=0.1,
        ca3_widths=(6, 6),
        ca1_widths=(6, 6, 6),
        n_classes=2,
    )


@pytest.fixture
def tiny_model_config(tiny_encoder):
    return ModelConfig(encoder=tiny_encoder, n_experts=2)


@pytest.fixture
def tiny_model(tiny_model_config):
    return HiclModel(tiny_model_config, rng_stream(11, "init"))


@pytest.fixture
def tiny_config(tiny_model_config):
    """Two well separated 2-class tasks, a few steps per phase."""
    return RunConfig(
        name="tiny",
        seed=5,
        model=tiny_model_config,
        schedule=TrainSchedule(epochs_phase1=2, epochs_phase2=1, batch_size=8, replay_batch_size=8,
                               learning_rate=0.005, fisher_samples=8),
        replay=ReplayConfig(buffer_size=6),
        data=DataConfig(n_tasks=2, classes_per_task=2, dim=6, separation=5.0, samples_per_class=12,
                        test_samples_per_class=6),
    )


@pytest.fixture
def tiny_stream(tiny_config):
    data = tiny_config.data
    return make_synthetic_stream(data.n_tasks, data.classes_per_task, data.dim, data.separation, tiny_config.seed,
                                 data.noise_std, data.samples_per_class, data.test_samples_per_class)


@pytest.fixture
def trained_trainer(tiny_config, tiny_stream):
    """Trainer after running the whole tiny stream (no files written)."""
    trainer = ContinualTrainer(tiny_config)
    trainer.run(tiny_stream)
    return trainer


@pytest.fixture
def smoke_config_path():
    return str(CONFIG_DIR / "tiny_smoke.json")


@pytest.fixture
def desk_config():
    return load_run_config(str(CONFIG_DIR / "desk_synthetic.json"))
