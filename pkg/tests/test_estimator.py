import numpy as np
import pytest
from sklearn.base import clone

from conftest import tiny_config
from selfcritic.episodes import sample_episode
from selfcritic.estimator import SelfCritiqueClassifier
from selfcritic.harness import Checkpoint, build_pool, save_checkpoint
from selfcritic.meta import init_meta_params, predict


@pytest.fixture
def setup():
    config = tiny_config()
    pool = build_pool(config)
    ckpt = Checkpoint(init_meta_params(config, pool.dim), config)
    ep = sample_episode(pool, 3, 1, 9, 0)
    return ckpt, ep


def test_predictions_match_inner_loop(setup):
    ckpt, ep = setup
    clf = SelfCritiqueClassifier(ckpt).fit(ep.x_S, ep.y_S)
    logits, preds, _ = predict(ckpt.params, ep.x_S, ep.y_S, ep.x_T, ckpt.config)
    np.testing.assert_array_equal(clf.predict(ep.x_T), preds)
    proba = clf.predict_proba(ep.x_T)
    np.testing.assert_allclose(proba.sum(1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(proba.argmax(1), preds)


def test_arbitrary_labels_map_back(setup):
    ckpt, ep = setup
    names = np.array(["cat", "dog", "eel"])
    clf = SelfCritiqueClassifier(ckpt).fit(ep.x_S, names[ep.y_S])
    assert list(clf.classes_) == ["cat", "dog", "eel"]
    _, preds, _ = predict(ckpt.params, ep.x_S, ep.y_S, ep.x_T, ckpt.config)
    np.testing.assert_array_equal(clf.predict(ep.x_T), names[preds])


def test_target_steps_zero_is_support_only(setup):
    ckpt, ep = setup
    clf = SelfCritiqueClassifier(ckpt, target_steps=0).fit(ep.x_S, ep.y_S)
    _, _, trace = predict(ckpt.params, ep.x_S, ep.y_S, ep.x_T, ckpt.config)
    np.testing.assert_array_equal(clf.predict(ep.x_T), trace.logits_before.argmax(1))


def test_loads_checkpoint_path_and_clones(setup, tmp_path):
    ckpt, ep = setup
    path = save_checkpoint(ckpt, tmp_path / "c.ckpt")
    clf = SelfCritiqueClassifier(str(path), target_steps=1)
    assert clone(clf).get_params() == {"checkpoint": str(path), "target_steps": 1}
    assert clf.fit(ep.x_S, ep.y_S).score(ep.x_T, ep.y_T) >= 0.0


def test_validation_errors(setup):
    ckpt, ep = setup
    with pytest.raises(ValueError):
        SelfCritiqueClassifier().fit(ep.x_S, ep.y_S)
    with pytest.raises(ValueError, match="classes"):
        SelfCritiqueClassifier(ckpt).fit(ep.x_S[:2], ep.y_S[:2])
    with pytest.raises(ValueError, match="features"):
        SelfCritiqueClassifier(ckpt).fit(ep.x_S[:, :2], ep.y_S)
    clf = SelfCritiqueClassifier(ckpt).fit(ep.x_S, ep.y_S)
    with pytest.raises(ValueError):
        clf.predict(ep.x_T[:, :2])
    no_critic = Checkpoint(init_meta_params(ckpt.config.replace(n_target_steps=0), ep.x_S.shape[1]),
                           ckpt.config.replace(n_target_steps=0))
    with pytest.raises(ValueError, match="critic"):
        SelfCritiqueClassifier(no_critic, target_steps=2).fit(ep.x_S, ep.y_S)


def test_unfitted_predict_raises(setup):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        SelfCritiqueClassifier(setup[0]).predict(setup[1].x_T)
