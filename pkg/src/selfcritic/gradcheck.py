"""Analytic-versus-numeric gradient checks for the engine and the meta objective.

Primitive checks project each op's output onto a fixed random tensor and
compare the gradient of that scalar against central differences. Meta
checks build small random instances of the full two-phase inner loop and
compare outer gradients for the initialization, the critic and the task
embedder against central differences of the outer loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, finite_diff_oracle, grad, relative_error, variable
from .config import MetaConfig
from .critic import CriticFeatures, CriticSpec, assemble_features, critic_forward, init_critic
from .embedding import EmbedderSpec, embed_task, init_embedder, pair_count
from .episodes import gen_ambiguous_pool, sample_episode
from .meta import MetaParams, adapt_support, episode_objective, init_meta_params, meta_gradients
from .models import ModelSpec, forward, init_params
from .params import ParameterSet

PRIMITIVE_TOL = 1e-6
COMPOSITE_TOL = 1e-5
SECOND_ORDER_TOL = 1e-4
META_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return bool(self.error <= self.tol)


def _projected(fn, inputs, rng):
    """Scalar ``sum(fn(*inputs) * r)`` for a fixed random ``r``."""
    probe = fn(*[Tensor(x) for x in inputs])
    r = Tensor(rng.normal(size=probe.shape))

    def scalar(ts):
        return ad.tsum(ad.mul(fn(*ts), r))

    return scalar


def check_primitive(name, fn, inputs, rng, eps=1e-6, tol=PRIMITIVE_TOL) -> CheckResult:
    start = time.perf_counter()
    scalar = _projected(fn, inputs, rng)
    leaves = [variable(x) for x in inputs]
    analytic = grad(scalar(leaves), leaves)
    numeric = finite_diff_oracle(scalar, [Tensor(x) for x in inputs], eps)
    err = relative_error(analytic, numeric)
    return CheckResult(name, err, tol, time.perf_counter() - start)


MAX_DRAWS = 50

# biases feeding the critic's ReLU hidden layers
LIVE_BIASES = ("critic/fc0.bias", "critic/fc1.bias")

# whole networks rather than single ops
COMPOSITES = ("critic_forward", "embed_task", "forward")


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def primitive_cases(rng) -> list:
    """``(name, fn, inputs)`` triples covering every differentiable op."""
    m, k, n = rng.integers(2, 5, size=3)
    labels = rng.integers(0, n, size=m)
    kernels = rng.normal(size=(3, 2, 2))
    rows = rng.permutation(7) % 4
    w_small = init_critic(5, int(rng.integers(1 << 30)), CriticSpec(channels=2, hidden=3))
    phi_spec = EmbedderSpec(3, embed_dim=2, relation_hidden=3, hidden=3)
    phi = init_embedder(phi_spec, int(rng.integers(1 << 30)))
    x_S = rng.normal(size=(2, 3))
    mspec = ModelSpec(3, (4,), 3)
    theta = init_params(mspec, int(rng.integers(1 << 30)))
    return [
        ("add", ad.add, [rng.normal(size=(m, n)), rng.normal(size=(1, n))]),
        ("sub", ad.sub, [rng.normal(size=(m, n)), rng.normal(size=(m, n))]),
        ("mul", ad.mul, [rng.normal(size=(m, n)), rng.normal(size=(m, 1))]),
        ("mul_scalar", lambda a: ad.mul_scalar(a, -1.7), [rng.normal(size=(m, n))]),
        ("relu", ad.relu, [_away_from_zero(rng, (m, n))]),
        ("exp", ad.texp, [rng.normal(size=(m, n))]),
        ("sigmoid", ad.sigmoid, [3 * rng.normal(size=(m, n))]),
        ("softplus", ad.softplus, [3 * rng.normal(size=(m, n))]),
        ("square", ad.square, [rng.normal(size=(m, n))]),
        ("matmul", ad.matmul, [rng.normal(size=(m, k)), rng.normal(size=(k, n))]),
        ("matmul_rowwise", lambda a, b: ad.matmul(a, b, rowwise=True),
         [rng.normal(size=(m, k)), rng.normal(size=(k, n))]),
        ("sum_axis", lambda a: ad.tsum(a, axis=1, keepdims=True), [rng.normal(size=(m, n))]),
        ("mean", lambda a: ad.mean(a, axis=0), [rng.normal(size=(m, n))]),
        ("reshape", lambda a: ad.reshape(a, (-1,)), [rng.normal(size=(m, n))]),
        ("transpose", ad.transpose, [rng.normal(size=(m, n))]),
        ("broadcast_row", lambda a: ad.broadcast_row(a, 3), [rng.normal(size=(1, n))]),
        ("concat", lambda a, b: ad.concat([a, b], axis=1), [rng.normal(size=(m, 2)), rng.normal(size=(m, n))]),
        ("getitem", lambda a: a[1:, ::2], [rng.normal(size=(m, n))]),
        ("take_rows", lambda a: ad.take_rows(a, rows), [rng.normal(size=(4, n))]),
        ("ordered_row_sum", ad.ordered_row_sum, [rng.normal(size=(5, n))]),
        ("logsumexp", lambda a: ad.logsumexp(a, axis=1), [rng.normal(size=(m, n))]),
        ("softmax", lambda a: ad.softmax(a, axis=1), [rng.normal(size=(m, n))]),
        ("softmax_cross_entropy", lambda a: ad.softmax_cross_entropy(a, labels), [rng.normal(size=(m, n))]),
        ("conv1d_dilated", lambda x, w: ad.conv1d_dilated(x, w, 2), [rng.normal(size=(2, 2, 6)), kernels]),
        ("critic_forward", lambda f: critic_forward(CriticFeatures(f), w_small, 32),
         [rng.normal(size=(3, 5))]),
        ("embed_task", lambda xt: embed_task(Tensor(x_S), xt, phi), [rng.normal(size=(3, 3))]),
        ("forward", lambda x: forward(x, theta), [rng.normal(size=(m, 3))]),
    ]


def check_second_order(rng, eps=1e-6) -> CheckResult:
    """grad of a one-step meta objective (grad inside grad) versus differences."""
    start = time.perf_counter()
    spec = ModelSpec(3, (8,), 3)
    theta0 = init_params(spec, int(rng.integers(1 << 30))).map(
        lambda t: Tensor(t.data + 0.3 * rng.normal(size=t.shape)))
    x_S, y_S = rng.normal(size=(6, 3)), rng.integers(0, 3, size=6)
    x_T, y_T = rng.normal(size=(9, 3)), rng.integers(0, 3, size=9)

    def outer(ps):
        ps = ps.ensure_tracked()
        inner = ad.softmax_cross_entropy(forward(Tensor(x_S), ps), y_S)
        g = grad(inner, ps, create_graph=True)
        moved = ps.zip_map(g, lambda p, d: ad.sub(p, ad.mul_scalar(d, 0.5)))
        return ad.softmax_cross_entropy(forward(Tensor(x_T), moved), y_T)

    leaves = theta0.as_leaves()
    analytic = grad(outer(leaves), leaves)
    numeric = finite_diff_oracle(outer, theta0, eps)
    return CheckResult("second_order_one_step", relative_error(analytic, numeric), SECOND_ORDER_TOL,
                       time.perf_counter() - start, {"params": theta0.size})


# -- meta-objective checks ------------------------------------------------------


def _perturb(mp: MetaParams, rng, n_pairs: int) -> MetaParams:
    """Spread the parameters away from the zero-bias init."""
    items = []
    for name, t in mp.as_set().items():
        noise = 0.3 * rng.normal(size=t.shape)
        if name.endswith(LIVE_BIASES):
            items.append((name, Tensor(0.1 + np.abs(noise))))
        elif name.startswith("embedder/relation1."):
            # the embedding sums over every pair; keep it O(1) so the
            # critic's softplus units are not driven flat
            items.append((name, Tensor((t.data + noise) / n_pairs)))
        else:
            items.append((name, Tensor(t.data + noise)))
    return MetaParams.from_set(ParameterSet(items))


def _critic_is_flat(cfg: MetaConfig, mp: MetaParams, episode) -> bool:
    theta, _ = adapt_support(mp.theta, episode.support, cfg.alpha, cfg.n_support_steps, create_graph=False)
    emb = embed_task(episode.x_S, episode.x_T, mp.embedder) if cfg.use_task_embedding else None
    F = assemble_features(forward(Tensor(episode.x_T), theta), theta, emb, cfg.flags).matrix
    leaf = variable(F.data)
    g, = grad(critic_forward(CriticFeatures(leaf), mp.critic, cfg.critic_min_length), [leaf])
    return not np.any(g.data)


def meta_instance(seed: int, scale: str = "small"):
    """A random small instance: config, perturbed meta-parameters and one episode."""
    rng = np.random.default_rng(seed)
    n_way = int(rng.integers(2, 4))
    if scale == "small":
        width, channels, hidden = int(rng.integers(4, 9)), 2, int(rng.integers(3, 6))
    else:
        width, channels, hidden = int(rng.integers(10, 17)), 3, int(rng.integers(5, 8))
    use_params = bool(rng.integers(0, 2))
    cfg = MetaConfig(
        n_way=n_way, k_shot=1, n_target=3 * n_way,
        n_support_steps=int(rng.integers(1, 3)), n_target_steps=1,
        alpha=0.3, gamma=0.5, hidden=(width,),
        use_predictions=True, use_params=use_params, use_task_embedding=True,
        critic_channels=channels, critic_hidden=hidden,
        embed_dim=3, embed_hidden=4, relation_hidden=4, seed=seed,
    )
    # unit-scale inputs keep the base logits away from softmax saturation
    pool = gen_ambiguous_pool(12, 3, 2, seed, separation=1.0, spurious_scale=1.0)
    base = init_meta_params(cfg, pool.dim)
    episode = sample_episode(pool, n_way, 1, cfg.n_target, seed)
    # redraw while the critic is locally constant on this episode (every
    # hidden ReLU off): such an instance has no critic path to check
    for _ in range(MAX_DRAWS):
        mp = _perturb(base, rng, pair_count(n_way, cfg.n_target))
        if not _critic_is_flat(cfg, mp, episode):
            break
    return cfg, mp, episode


def check_meta_instance(seed: int, scale: str = "small", eps: float = 1e-5, tol: float = META_TOL) -> list:
    start = time.perf_counter()
    cfg, mp, episode = meta_instance(seed, scale)
    analytic, _ = meta_gradients(mp, [episode], cfg)

    def f(flat):
        return episode_objective(MetaParams.from_set(flat), episode, cfg, create_graph=True)[0]

    numeric = finite_diff_oracle(f, mp.as_set(), eps)
    elapsed = time.perf_counter() - start
    sizes = {g: s.size for g, s in mp.groups()}
    out = []
    for group in ("theta", "critic", "embedder"):
        a = ParameterSet((n, t) for n, t in analytic.items() if n.startswith(group + "/"))
        b = ParameterSet((n, t) for n, t in numeric.items() if n.startswith(group + "/"))
        out.append(CheckResult(f"meta[{seed}].{group}", relative_error(a, b), tol, elapsed / 3,
                               {"sizes": sizes, "grad_norm": float(np.linalg.norm(a.flat_numpy()))}))
    return out


def run_suite(scale: str = "small", seed: int = 0, n_instances: int | None = None) -> list:
    """Primitive, second-order and meta checks; returns every CheckResult."""
    rng = np.random.default_rng(seed)
    results = [
        check_primitive(name, fn, inputs, rng, tol=COMPOSITE_TOL if name in COMPOSITES else PRIMITIVE_TOL)
        for name, fn, inputs in primitive_cases(rng)
    ]
    results.append(check_second_order(rng))
    if n_instances is None:
        n_instances = 20 if scale == "small" else 8
    for i in range(n_instances):
        results.extend(check_meta_instance(seed * 1000 + i, scale, tol=META_TOL))
    return results
