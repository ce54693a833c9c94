import numpy as np
import pytest
from hypothesis import settings

from selfcritic.config import MetaConfig

settings.register_profile("pkg", max_examples=25, deadline=None)
settings.load_profile("pkg")


def tiny_config(**overrides) -> MetaConfig:
    """A few-second config for exercising the full pipeline."""
    base = dict(
        n_way=3, k_shot=1, n_target=9, n_support_steps=2, n_target_steps=1,
        hidden=(8,), critic_channels=2, critic_hidden=4, embed_dim=3, embed_hidden=4,
        relation_hidden=4, pool_family="ambiguous", pool_classes=15, d_signal=3, d_spurious=2,
        epochs=1, batches_per_epoch=4, eval_interval=2, val_episodes=4, test_episodes=4,
        meta_batch=2, seed=3,
    )
    base.update(overrides)
    return MetaConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
