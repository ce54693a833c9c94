"""End-to-end acceptance checks.

Each test records one PASS/FAIL line, printed in the terminal summary.
The two benchmark trainings run once per module from the shipped configs.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS, tiny_config
from selfcritic import cli
from selfcritic.baseline import maml_predict
from selfcritic.config import MetaConfig
from selfcritic.episodes import episode_seed, sample_episode
from selfcritic.gradcheck import META_TOL, PRIMITIVE_TOL, run_suite
from selfcritic.harness import build_pool, evaluate, load_checkpoint, read_metrics_csv, train
from selfcritic.meta import MetaParams, episode_objective, init_meta_params, predict
from selfcritic.report import interrogate

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TEST_EPISODES = 500


def record(key, ok, detail):
    ACCEPTANCE_RESULTS[key] = (bool(ok), detail)
    assert ok, detail


def random_meta_params(config, dim, rng, scale=0.3):
    mp = init_meta_params(config, dim)
    from selfcritic.autodiff import Tensor

    return MetaParams.from_set(mp.as_set().map(lambda t: Tensor(t.data + scale * rng.normal(size=t.shape))))


# -- 1 ------------------------------------------------------------------------------

def test_1_gradient_oracle_suite():
    start = time.perf_counter()
    results = run_suite("small", seed=0, n_instances=20)
    elapsed = time.perf_counter() - start
    meta = [r for r in results if r.name.startswith("meta")]
    prims = [r for r in results if not r.name.startswith(("meta", "second_order"))]
    instances = {r.name.split(".")[0] for r in meta}
    sizes_ok = all(r.detail["sizes"]["theta"] <= 300 and r.detail["sizes"]["critic"] <= 500 for r in meta)
    worst_meta = max(r.error for r in meta)
    # every checked gradient must be well above finite-difference noise
    weakest = min(r.detail["grad_norm"] for r in meta)
    first_order = [r for r in prims if r.tol == PRIMITIVE_TOL]
    worst_prim = max(r.error for r in first_order)
    ok = (len(instances) >= 20 and sizes_ok and weakest > 1e-9 and worst_meta <= META_TOL == 1e-4
          and worst_prim <= 1e-6 and all(r.ok for r in results) and elapsed < 120)
    record(1, ok, f"{len(instances)} instances, max meta rel err {worst_meta:.2e}, "
                  f"max primitive rel err {worst_prim:.2e}, smallest grad norm {weakest:.1e}, {elapsed:.1f}s")


# -- 2 ------------------------------------------------------------------------------

def test_2_exact_maml_reduction():
    config = MetaConfig(n_target_steps=0, d_signal=4, d_spurious=2, pool_classes=30, hidden=(16, 16))
    pool = build_pool(config)
    rng = np.random.default_rng(2)
    mp = random_meta_params(config, pool.dim, rng)
    mismatches = 0
    for i in range(100):
        ep = sample_episode(pool, 5, 1, 75, episode_seed(2, "meta-test", i), "meta-test")
        logits, preds, _ = predict(mp, ep.x_S, ep.y_S, ep.x_T, config)
        ref_logits, ref_preds = maml_predict(mp.theta, ep.x_S, ep.y_S, ep.x_T, config.alpha, config.n_support_steps)
        mismatches += logits.tobytes() != ref_logits.tobytes() or not np.array_equal(preds, ref_preds)
    record(2, mismatches == 0, f"{100 - mismatches}/100 episodes bitwise identical to the critic-free path")


# -- 3 ------------------------------------------------------------------------------

def test_3_label_freedom():
    config = tiny_config(n_way=5, n_target=75, pool_classes=30, use_params=True, use_task_embedding=True,
                         n_target_steps=2, gamma=0.5)
    pool = build_pool(config)
    rng = np.random.default_rng(3)
    changed = 0
    for i in range(100):
        mp = random_meta_params(config.replace(seed=i), pool.dim, rng)
        ep = sample_episode(pool, 5, 1, 75, episode_seed(3, "meta-train", i))
        _, _, a = episode_objective(mp, ep, config, create_graph=False)
        _, _, b = episode_objective(mp, ep.with_target_labels(rng.permutation(ep.y_T)), config, create_graph=False)
        same = (a.params[-1].flat_numpy().tobytes() == b.params[-1].flat_numpy().tobytes()
                and a.logits_after.tobytes() == b.logits_after.tobytes())
        changed += not same
    record(3, changed == 0, f"{100 - changed}/100 episodes unchanged under target-label permutation")


# -- 4 and 6 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ambiguous_runs(tmp_path_factory):
    config = MetaConfig.from_file(CONFIGS / "ambiguous.txt")
    pool = build_pool(config)
    start = time.perf_counter()
    out = tmp_path_factory.mktemp("sca")
    assert cli.main(["train", "--config", str(CONFIGS / "ambiguous.txt"), "--out", str(out), "--quiet"]) == 0
    sca = load_checkpoint(out / "checkpoint.ckpt")
    maml = train(config.replace(n_target_steps=0), pool).best
    seconds = time.perf_counter() - start
    return {
        "config": config, "pool": pool, "sca": sca, "maml": maml, "seconds": seconds,
        "sca_report": evaluate(sca, pool, TEST_EPISODES, 0),
        "maml_report": evaluate(maml, pool, TEST_EPISODES, 0),
    }


def test_4_transductive_benchmark(ambiguous_runs):
    runs = ambiguous_runs
    sca, maml = runs["sca_report"], runs["maml_report"]
    gain = sca.mean_post - sca.mean_pre
    over_maml = sca.mean_post - maml.mean_post
    disjoint = sca.mean_post - sca.hw_post > sca.mean_pre + sca.hw_pre
    ok = (runs["config"].outer_steps <= 2000 and gain >= 0.10 and disjoint
          and over_maml >= 0.05 and runs["seconds"] < 30 * 60)
    record(4, ok, f"pre {sca.mean_pre:.3f}±{sca.hw_pre:.3f} -> post {sca.mean_post:.3f}±{sca.hw_post:.3f} "
                  f"(+{100 * gain:.1f} pts), MAML {maml.mean_post:.3f}±{maml.hw_post:.3f} "
                  f"(+{100 * over_maml:.1f} pts), {runs['seconds'] / 60:.1f} min")


def test_6_interrogation(ambiguous_runs, tmp_path):
    runs = ambiguous_runs
    ckpt_path = tmp_path / "sca.ckpt"
    from selfcritic.harness import save_checkpoint

    save_checkpoint(runs["sca"], ckpt_path)
    out = tmp_path / "inspect"
    assert cli.main(["inspect", "--ckpt", str(ckpt_path), "--out", str(out), "--steps", "5"]) == 0
    rows = [line.split(",") for line in (out / "inspect.csv").read_text().splitlines()[2:]]
    probs = np.array([[float(v) for v in r[3:]] for r in rows])
    row_err = float(np.abs(probs.sum(1) - 1).max())
    result = interrogate(runs["sca"], runs["pool"], 0, steps=5)
    shift = float(result.argmax_shift().max())
    ok = row_err <= 1e-6 and shift >= 0.05 and len(rows) == 2 * runs["config"].n_target
    record(6, ok, f"max row-sum error {row_err:.1e}, largest argmax-probability change {shift:+.3f}")


# -- 5 ------------------------------------------------------------------------------

def test_5_blob_sanity():
    config = MetaConfig.from_file(CONFIGS / "blob.txt")
    result = train(config)
    best = max(r["val_acc_post"] for r in result.log)
    ok = config.outer_steps <= 500 and (config.n_way, config.k_shot) == (5, 1) and best >= 0.5
    record(5, ok, f"best meta-val accuracy {best:.3f} within {config.outer_steps} outer steps")


# -- 7 ------------------------------------------------------------------------------

def test_7_determinism(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text(tiny_config(use_task_embedding=True, batches_per_epoch=6).to_text())
    runs = []
    for name in ("a", "b"):
        assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / name), "--seed", "5", "--quiet"]) == 0
        runs.append({f: (tmp_path / name / f).read_bytes() for f in ("metrics.csv", "checkpoint.ckpt")})
    same = runs[0] == runs[1]
    rows = len(read_metrics_csv(tmp_path / "a" / "metrics.csv"))
    record(7, same and rows > 0, f"metrics.csv and checkpoint.ckpt bitwise identical across runs: {same}")
