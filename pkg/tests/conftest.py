import numpy as np
import pytest

from deminet.data import build_samples, build_vocab, synth_generate, temporal_split
from deminet.model import DemiNet, ModelConfig, encode_batch
from deminet.rng import stream_rng


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_micro_setup(seed=11, num_samples=2):
    """Tiny synthetic dataset plus a micro model for end-to-end tests."""
    log, _ = synth_generate(6, 12, 3, 6, 0.2, stream_rng(seed, "data"))
    vocab = build_vocab(log)
    train_log, _, _ = temporal_split(log, 0.8)
    samples = build_samples(train_log, vocab, 4, 2, 1, stream_rng(seed, "negatives"))
    cfg = ModelConfig(
        num_items=vocab.num_items, num_categories=vocab.num_categories,
        d=8, heads=2, gnn_layers=2, num_interests=2, epsilon=2, n_max=4,
        interest_hidden=8, expert_hidden=(8, 8), confinet_hidden=(8, 8),
    )
    model = DemiNet(cfg, stream_rng(seed, "init"))
    batch = encode_batch(samples[:num_samples])
    return model, batch, samples, vocab


@pytest.fixture
def micro_setup():
    return make_micro_setup()
