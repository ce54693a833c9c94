"""Critic interrogation and its CSV / SVG output.

One episode is adapted on its support set, then moved by ``k`` critic
steps on the unlabelled target set; each target example's class
probabilities are recorded before and after. ``aggregate`` mode takes the
steps on the mean critic loss exactly as training does. ``per-row`` mode
restarts from the support-adapted parameters for every example and steps
on that example's own critic value.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .episodes import ClassPool, sample_episode
from .harness import Checkpoint
from .meta import adapt_support, adapt_target
from .models import forward

INSPECT_HEADER = "# selfcritic-inspect v1"
MODES = ("aggregate", "per-row")
BEFORE_COLOR = "#d62728"
AFTER_COLOR = "#2ca02c"


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class Interrogation:
    before: np.ndarray  # [n_target, n_way] probabilities
    after: np.ndarray
    labels: np.ndarray
    steps: int
    mode: str

    def argmax_shift(self) -> np.ndarray:
        """Per example: change in probability of the class predicted after the steps."""
        cls = np.argmax(self.after, axis=1)
        rows = np.arange(len(cls))
        return self.after[rows, cls] - self.before[rows, cls]

    def max_row_sum_error(self) -> float:
        return float(max(np.abs(self.before.sum(1) - 1).max(), np.abs(self.after.sum(1) - 1).max()))

    def accuracy(self) -> tuple:
        return (float(np.mean(self.before.argmax(1) == self.labels)),
                float(np.mean(self.after.argmax(1) == self.labels)))


def interrogate(ckpt: Checkpoint, pool: ClassPool, episode_seed, steps: int = 5, mode: str = "aggregate",
                split: str = "meta-test", gamma: float | None = None) -> Interrogation:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    cfg = ckpt.config
    mp = ckpt.params
    ep = sample_episode(pool, cfg.n_way, cfg.k_shot, cfg.n_target, episode_seed, split)
    gamma = cfg.gamma if gamma is None else gamma
    theta_N, _ = adapt_support(mp.theta, ep.support, cfg.alpha, cfg.n_support_steps, create_graph=False)
    before = _softmax(forward(ep.x_T, theta_N).data)
    if steps == 0 or mp.critic is None:
        return Interrogation(before, before.copy(), ep.y_T, steps, mode)

    def run(per_row):
        theta, _ = adapt_target(theta_N, ep.x_T, ep.x_S, mp.critic, mp.embedder, gamma, steps, cfg.flags,
                                cfg.critic_min_length, create_graph=False, per_row=per_row)
        return _softmax(forward(ep.x_T, theta).data)

    if mode == "aggregate":
        after = run(None)
    else:
        after = np.stack([run(i)[i] for i in range(len(ep.y_T))])
    return Interrogation(before, after, ep.y_T, steps, mode)


def interrogation_csv(result: Interrogation) -> str:
    c = result.before.shape[1]
    lines = [INSPECT_HEADER, ",".join(["example", "phase", "label"] + [f"p{j}" for j in range(c)])]
    for i, label in enumerate(result.labels):
        for phase, probs in (("before", result.before[i]), ("after", result.after[i])):
            lines.append(",".join([str(i), phase, str(int(label))] + [repr(float(p)) for p in probs]))
    return "\n".join(lines) + "\n"


def interrogation_svg(result: Interrogation, columns: int = 5, max_examples: int | None = None) -> str:
    """Grouped bars per target example: before in red, after in green, one pair per class."""
    n, c = result.before.shape
    if max_examples is not None:
        n = min(n, max_examples)
    pw, ph, pad = 150, 90, 24
    rows = (n + columns - 1) // columns
    width, height = columns * (pw + pad) + pad, rows * (ph + pad + 14) + pad + 20
    bar = (pw - 10) / (2 * c + (c - 1) * 0.5)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">',
        f'<text x="{pad}" y="14">{escape(f"critic interrogation: {result.steps} steps, {result.mode} mode")}</text>',
        f'<rect x="{width - 150}" y="4" width="10" height="10" fill="{BEFORE_COLOR}"/>'
        f'<text x="{width - 136}" y="13">before</text>',
        f'<rect x="{width - 90}" y="4" width="10" height="10" fill="{AFTER_COLOR}"/>'
        f'<text x="{width - 76}" y="13">after</text>',
    ]
    for i in range(n):
        ox = pad + (i % columns) * (pw + pad)
        oy = pad + 20 + (i // columns) * (ph + pad + 14)
        out.append(f'<g transform="translate({ox},{oy})">')
        out.append(f'<text x="0" y="-4">{escape(f"example {i} (label {int(result.labels[i])})")}</text>')
        out.append(f'<rect x="0" y="0" width="{pw}" height="{ph}" fill="none" stroke="#999"/>')
        for j in range(c):
            x0 = 5 + j * 2.5 * bar
            for k, (probs, color) in enumerate(((result.before, BEFORE_COLOR), (result.after, AFTER_COLOR))):
                h = float(probs[i, j]) * (ph - 4)
                out.append(f'<rect x="{x0 + k * bar:.2f}" y="{ph - h:.2f}" width="{bar:.2f}" '
                           f'height="{h:.2f}" fill="{color}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
