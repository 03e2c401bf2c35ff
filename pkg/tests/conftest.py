from __future__ import annotations

import pytest

from chatscreen.augmentor import AugmentPolicy, train_max_ops, valid_max_ops
from chatscreen.encoder import EncoderConfig
from chatscreen.fixtures import CorpusSpec, generate_corpus
from chatscreen.trainer import TrainConfig, fit


@pytest.fixture(scope="session")
def mini_corpus():
    return generate_corpus(CorpusSpec(n_safe=36, n_profane=8, len_range=(4, 9), seed=13))


@pytest.fixture(scope="session")
def mini_model(mini_corpus):
    """A deliberately small trained encoder: seconds to fit, good enough for
    identical-token matches and plumbing tests (not for variant recall)."""
    safe, profane = mini_corpus
    cfg = TrainConfig(
        batch_size=16,
        epochs=30,
        lr0=3e-3,
        seed=5,
        policy_train=AugmentPolicy(max_ops=train_max_ops),
        policy_valid=AugmentPolicy(max_ops=valid_max_ops),
    )
    params, _ = fit(safe + profane, EncoderConfig(embed_dim=8, hidden_dim=16), cfg)
    return params
