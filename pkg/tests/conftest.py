"""Shared fixtures.

``world`` is the expensive one: the default-config dataset plus all four
trained checkpoints, built once and cached under .cache/avatex keyed by
the config fingerprint, so repeated test runs skip training.
"""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path

import numpy as np
import pytest
import torch

from avatex.config import ExperimentConfig
from avatex.geometry.head import ParametricHead
from avatex.nn import default_vocabulary
from avatex.nn.unet import DenoiserNetwork, UNetSpec
from avatex.nn.autoencoder import AutoEncoder, PbrDecoderSet
from avatex.diffusion import make_schedule


def _cache_root() -> Path:
    return Path(os.environ.get("AVATEX_TEST_CACHE",
                               Path(__file__).resolve().parent.parent / ".cache" / "avatex"))


@pytest.fixture(scope="session")
def default_config() -> ExperimentConfig:
    return ExperimentConfig()


@pytest.fixture(scope="session")
def head() -> ParametricHead:
    return ParametricHead()


@pytest.fixture(scope="session")
def vocab():
    return default_vocabulary()


@pytest.fixture(scope="session")
def schedule(default_config):
    s = default_config.schedule
    return make_schedule(s.kind, s.t_train, s.beta_start, s.beta_end)


@pytest.fixture(scope="session")
def tiny_net(vocab) -> DenoiserNetwork:
    """Small untrained denoiser (deterministic; zero output head)."""
    torch.manual_seed(0)
    net = DenoiserNetwork(UNetSpec(channels=(16, 24, 24), cond_dim=16, temb_dim=32), vocab)
    net.eval()
    return net


@pytest.fixture(scope="session")
def tiny_ae() -> AutoEncoder:
    torch.manual_seed(1)
    ae = AutoEncoder(image_size=64, channels=(12, 16, 24))
    ae.eval()
    return ae


@pytest.fixture(scope="session")
def tiny_decoders() -> PbrDecoderSet:
    torch.manual_seed(2)
    d = PbrDecoderSet(channels=(12, 16, 24))
    d.eval()
    return d


@pytest.fixture(scope="session")
def world(default_config):
    """Dataset + trained checkpoints at spec defaults, cached on disk."""
    from avatex import pipeline
    from avatex.synth.dataset import load_dataset

    cache = _cache_root() / default_config.fingerprint()
    config = dataclasses.replace(
        default_config,
        paths=dataclasses.replace(default_config.paths,
                                  data_root=str(cache / "data"),
                                  checkpoint_root=str(cache / "checkpoints"),
                                  runs_root=str(cache / "runs")))
    if not (cache / "data" / "manifest.json").exists():
        pipeline.cmd_synth(config)
    for component in pipeline.COMPONENTS:
        if not pipeline.checkpoint_path(config, component).exists():
            pipeline.cmd_train(config, component)
    models = pipeline.load_models(config)
    dataset = load_dataset(config.paths.data_root)
    return {"config": config, "models": models, "dataset": dataset}


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
