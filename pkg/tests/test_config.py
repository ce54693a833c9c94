import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfcritic.config import CONFIG_HEADER, MetaConfig, parse_config_text
from selfcritic.errors import ConfigError


def test_defaults():
    c = MetaConfig()
    assert (c.n_way, c.k_shot, c.n_target) == (5, 1, 75)
    assert (c.n_support_steps, c.n_target_steps) == (5, 1)
    assert c.hidden == (40, 40)
    assert c.outer_optimizer == "adam"
    assert c.flags.use_predictions and not c.flags.use_params


def test_text_round_trip():
    c = MetaConfig(hidden=(7, 3), gamma=0.25, use_task_embedding=True, pool_family="blob", image_root="a b")
    text = c.to_text()
    assert text.splitlines()[0] == CONFIG_HEADER
    assert MetaConfig.from_text(text) == c


@given(st.integers(1, 9), st.floats(1e-4, 2.0), st.booleans(), st.lists(st.integers(1, 64), max_size=3))
def test_text_round_trip_property(n_way, gamma, embed, hidden):
    c = MetaConfig(n_way=n_way, gamma=gamma, use_task_embedding=embed, hidden=tuple(hidden))
    assert MetaConfig.from_text(c.to_text()) == c


def test_partial_file_uses_defaults(tmp_path):
    (tmp_path / "c.txt").write_text("# comment\nn_way = 3   # trailing\n\nhidden = \nuse_params = yes\n")
    c = MetaConfig.from_file(tmp_path / "c.txt")
    assert c.n_way == 3 and c.hidden == () and c.use_params and c.k_shot == 1


@pytest.mark.parametrize("text", [
    "n_wya = 3",
    "n_way = three",
    "use_params = maybe",
    "n_way 3",
    "n_way = 3\nn_way = 4",
    "beta = 0",
    "alpha = -1",
    "outer_optimizer = rmsprop",
    "pool_family = text",
    "n_support_steps = -1",
    "meta_batch = 0",
    "use_predictions = false",
])
def test_invalid_configs_raise_config_error(text):
    with pytest.raises(ConfigError):
        MetaConfig.from_text(text)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        MetaConfig.from_file(tmp_path / "nope.txt")


def test_replace_revalidates():
    with pytest.raises(ConfigError):
        MetaConfig().replace(meta_batch=0)


def test_derived_quantities():
    c = MetaConfig(epochs=3, batches_per_epoch=7, n_target_steps=0)
    assert c.outer_steps == 21
    assert not c.needs_critic
    assert c.model_spec(12).n_params == 12 * 40 + 40 + 40 * 40 + 40 + 40 * 5 + 5
    assert parse_config_text("a = 1 = 2") == {"a": "1 = 2"}
