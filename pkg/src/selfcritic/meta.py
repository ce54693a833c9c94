"""Two-phase inner loop and the joint outer update.

Per episode: ``n_support_steps`` SGD steps on the support cross-entropy,
then ``n_target_steps`` SGD steps on the learned critic loss evaluated on
the unlabelled target inputs. The outer loss is the target cross-entropy
of the final parameters, summed over the meta-batch, and is
differentiated through both phases with respect to the initialization,
the critic, the task embedder and (optionally) the inner learning rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff.grad import grad
from .autodiff.tensor import Tensor, mul, mul_scalar, softmax_cross_entropy, sub
from .config import MetaConfig
from .critic import CriticFeatureFlags, assemble_features, critic_forward, critic_rows, init_critic
from .embedding import embed_task, init_embedder
from .errors import DivergenceError
from .models import forward, init_params
from .params import ParameterSet

GROUPS = ("theta", "critic", "embedder", "lr")


@dataclass
class MetaParams:
    """Everything the outer loop learns."""

    theta: ParameterSet
    critic: ParameterSet | None = None
    embedder: ParameterSet | None = None
    inner_lrs: ParameterSet | None = None

    def groups(self) -> list:
        return [(name, s) for name, s in zip(GROUPS, (self.theta, self.critic, self.embedder, self.inner_lrs))
                if s is not None]

    def as_set(self) -> ParameterSet:
        return ParameterSet((f"{g}/{n}", t) for g, s in self.groups() for n, t in s.items())

    @classmethod
    def from_set(cls, flat: ParameterSet) -> "MetaParams":
        buckets: dict = {}
        for name, t in flat.items():
            group, _, rest = name.partition("/")
            buckets.setdefault(group, []).append((rest, t))
        sets = {g: ParameterSet(buckets[g]) if g in buckets else None for g in GROUPS}
        return cls(sets["theta"], sets["critic"], sets["embedder"], sets["lr"])

    def detach(self) -> "MetaParams":
        return MetaParams.from_set(self.as_set().detach())

    def tracked(self) -> "MetaParams":
        return MetaParams.from_set(self.as_set().as_leaves())


def init_meta_params(config: MetaConfig, input_dim: int) -> MetaParams:
    """Seeded initialization; the critic and embedder exist only when used."""
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    draw = [int(s.generate_state(1)[0]) for s in seeds]
    theta = init_params(config.model_spec(input_dim), draw[0])
    critic = embedder = lrs = None
    if config.needs_critic:
        width = config.flags.width(config.n_way, theta.size, config.embed_dim)
        critic = init_critic(width, draw[1], config.critic_spec)
        if config.use_task_embedding:
            embedder = init_embedder(config.embedder_spec(input_dim), draw[2])
    if config.learnable_inner_lr:
        items = []
        for i in range(config.n_support_steps):
            items += [(f"support.{i}.{n}", Tensor(np.array(config.alpha))) for n in theta.names]
        for j in range(config.n_target_steps):
            items += [(f"target.{j}.{n}", Tensor(np.array(config.gamma))) for n in theta.names]
        lrs = ParameterSet(items)
    return MetaParams(theta, critic, embedder, lrs)


@dataclass
class AdaptTrace:
    params: list = field(default_factory=list)
    support_losses: list = field(default_factory=list)
    critic_losses: list = field(default_factory=list)
    logits_before: np.ndarray | None = None
    logits_after: np.ndarray | None = None


def _sgd(theta: ParameterSet, grads: ParameterSet, rate, lrs, phase: str, step: int) -> ParameterSet:
    items = []
    for name, p in theta.items():
        g = grads[name]
        if lrs is not None:
            items.append((name, sub(p, mul(lrs[f"{phase}.{step}.{name}"], g))))
        else:
            items.append((name, sub(p, mul_scalar(g, rate))))
    return ParameterSet(items)


def _finite(loss: Tensor, phase: str, step: int) -> None:
    if not np.all(np.isfinite(loss.data)):
        raise DivergenceError(f"non-finite {phase} loss at inner step {step}", step=step)


def _restart(theta: ParameterSet, create_graph: bool) -> ParameterSet:
    # without higher-order gradients, later steps need no history
    return theta if create_graph else theta.detach().ensure_tracked()


def support_loss(theta: ParameterSet, x_S, y_S) -> Tensor:
    return softmax_cross_entropy(forward(x_S, theta), y_S)


def adapt_support(theta0: ParameterSet, support, alpha: float, n_steps: int,
                  create_graph: bool = True, inner_lrs: ParameterSet | None = None, loss_fn=support_loss):
    """``n_steps`` of ``theta <- theta - alpha * grad L(theta; x_S, y_S)``.

    ``L`` defaults to the cross-entropy of the base model on the support set.
    """
    x_S, y_S = support
    x_S = Tensor(x_S) if not isinstance(x_S, Tensor) else x_S
    trace = AdaptTrace(params=[theta0])
    theta = theta0.ensure_tracked() if n_steps else theta0
    for i in range(n_steps):
        loss = loss_fn(theta, x_S, y_S)
        _finite(loss, "support", i)
        trace.support_losses.append(float(loss.data))
        grads = grad(loss, theta, create_graph=create_graph)
        theta = _restart(_sgd(theta, grads, alpha, inner_lrs, "support", i), create_graph)
        trace.params.append(theta)
    return theta, trace


def adapt_target(theta_N: ParameterSet, x_T, x_S, W: ParameterSet | None, phi: ParameterSet | None,
                 gamma: float, n_steps: int, flags: CriticFeatureFlags, critic_min_length: int = 32,
                 create_graph: bool = True, inner_lrs: ParameterSet | None = None,
                 per_row: int | None = None):
    """``n_steps`` of ``theta <- theta - gamma * grad C(F(theta), W)`` on target inputs.

    No target labels enter this function. ``per_row`` restricts the critic
    loss to a single target row (used to interrogate the critic).
    """
    x_T = Tensor(x_T) if not isinstance(x_T, Tensor) else x_T
    trace = AdaptTrace(params=[theta_N])
    trace.logits_before = forward(x_T, theta_N).data
    if n_steps == 0:
        trace.logits_after = trace.logits_before
        return theta_N, trace
    emb = embed_task(x_S, x_T, phi) if flags.use_task_embedding else None
    theta = theta_N.ensure_tracked()
    for j in range(n_steps):
        features = assemble_features(forward(x_T, theta), theta, emb, flags)
        if per_row is None:
            loss = critic_forward(features, W, critic_min_length)
        else:
            loss = critic_rows(features, W, critic_min_length)[per_row, 0]
        _finite(loss, "critic", j)
        trace.critic_losses.append(float(loss.data))
        grads = grad(loss, theta, create_graph=create_graph)
        theta = _restart(_sgd(theta, grads, gamma, inner_lrs, "target", j), create_graph)
        trace.params.append(theta)
    trace.logits_after = forward(x_T, theta).data
    return theta, trace


def accuracy(logits: np.ndarray, labels) -> float:
    """Mean argmax match; ``np.argmax`` breaks ties toward the lowest index."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def episode_outer_loss(theta: ParameterSet, x_T, y_T):
    logits = forward(Tensor(x_T) if not isinstance(x_T, Tensor) else x_T, theta)
    return softmax_cross_entropy(logits, y_T), accuracy(logits.data, y_T)


def inner_loop(mp: MetaParams, x_S, y_S, x_T, config: MetaConfig, create_graph: bool = True):
    """Both inner phases; returns final parameters and the combined trace."""
    theta_N, trace_S = adapt_support(mp.theta, (x_S, y_S), config.alpha, config.n_support_steps,
                                     create_graph, mp.inner_lrs)
    theta, trace_T = adapt_target(theta_N, x_T, x_S, mp.critic, mp.embedder, config.gamma,
                                  config.n_target_steps, config.flags, config.critic_min_length,
                                  create_graph, mp.inner_lrs)
    trace = AdaptTrace(
        params=trace_S.params + trace_T.params[1:],
        support_losses=trace_S.support_losses,
        critic_losses=trace_T.critic_losses,
        logits_before=trace_T.logits_before,
        logits_after=trace_T.logits_after,
    )
    return theta, trace


def episode_objective(mp: MetaParams, episode, config: MetaConfig, create_graph: bool = True):
    """Outer loss of one episode plus pre/post target-phase accuracies."""
    theta, trace = inner_loop(mp, episode.x_S, episode.y_S, episode.x_T, config, create_graph)
    loss, acc_post = episode_outer_loss(theta, episode.x_T, episode.y_T)
    metrics = {
        "loss": float(loss.data),
        "acc_pre": accuracy(trace.logits_before, episode.y_T),
        "acc_post": acc_post,
    }
    return loss, metrics, trace


def meta_gradients(mp: MetaParams, episodes, config: MetaConfig):
    """Gradient of the summed outer loss w.r.t. every learned parameter.

    Episodes are differentiated one at a time and their gradients added in
    episode order, which keeps the reduction deterministic.
    """
    leaves = mp.tracked()
    wrt = leaves.as_set()
    total = None
    rows = []
    for b, episode in enumerate(episodes):
        try:
            loss, metrics, _ = episode_objective(leaves, episode, config, create_graph=True)
        except DivergenceError as exc:
            exc.episode = b
            raise
        if not np.isfinite(metrics["loss"]):
            raise DivergenceError(f"non-finite outer loss in episode {b}", episode=b)
        g = grad(loss, wrt)
        total = g if total is None else total.zip_map(g, lambda a, c: Tensor(a.data + c.data))
        rows.append(metrics)
    summary = {
        "loss": float(sum(r["loss"] for r in rows)),
        "acc_pre": float(np.mean([r["acc_pre"] for r in rows])),
        "acc_post": float(np.mean([r["acc_post"] for r in rows])),
    }
    return total, summary


class Adam:
    def __init__(self, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: ParameterSet, grads: ParameterSet) -> ParameterSet:
        self.t += 1
        out = []
        for name, p in params.items():
            g = grads[name].data
            m = self.m.get(name, np.zeros_like(g)) * self.b1 + (1 - self.b1) * g
            v = self.v.get(name, np.zeros_like(g)) * self.b2 + (1 - self.b2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.b1 ** self.t)
            v_hat = v / (1 - self.b2 ** self.t)
            out.append((name, Tensor(p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))))
        return ParameterSet(out)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: ParameterSet, grads: ParameterSet) -> ParameterSet:
        return params.zip_map(grads, lambda p, g: Tensor(p.data - self.lr * g.data))


def make_optimizer(config: MetaConfig):
    return Adam(config.beta) if config.outer_optimizer == "adam" else SGD(config.beta)


def meta_step(mp: MetaParams, episodes, config: MetaConfig, optimizer=None):
    """One outer update over a meta-batch; returns new parameters and metrics."""
    optimizer = optimizer or make_optimizer(config)
    grads, metrics = meta_gradients(mp, episodes, config)
    updated = optimizer.step(mp.as_set().detach(), grads)
    return MetaParams.from_set(updated), metrics


def predict(mp: MetaParams, x_S, y_S, x_T, config: MetaConfig):
    """Inference: the training inner loop without outer updates.

    Returns ``(logits_after, predictions, trace)``.
    """
    _, trace = inner_loop(mp, x_S, y_S, x_T, config, create_graph=False)
    return trace.logits_after, np.argmax(trace.logits_after, axis=1), trace
