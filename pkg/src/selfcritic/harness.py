"""Meta-training driver, evaluation with confidence intervals, and checkpoints.

A checkpoint is a single file::

    SELFCRITIC-CKPT 1\\n
    <manifest length in bytes, decimal>\\n
    <JSON manifest>\\n
    <payload: little-endian float64, tensors in manifest order>

The manifest carries the tensor layout, the full config, the outer step,
the recorded metrics and a SHA-256 of the payload.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.tensor import Tensor
from .config import MetaConfig
from .episodes import (
    SPLITS,
    ClassPool,
    episode_seed,
    gen_ambiguous_pool,
    gen_blob_pool,
    load_image_pool,
    merge_pools,
    sample_episode,
)
from .errors import CheckpointFormatError, ConfigMismatchError, DivergenceError
from .meta import MetaParams, accuracy, init_meta_params, make_optimizer, meta_step, predict
from .params import ParameterSet

MAGIC = b"SELFCRITIC-CKPT 1\n"
METRICS_HEADER = "# selfcritic-metrics v1"
METRIC_COLUMNS = ("outer_step", "train_loss", "train_acc_pre", "train_acc_post", "val_acc_pre", "val_acc_post")
EPISODE_HEADER = "# selfcritic-episodes v1"

# seed offset for the fixed validation episode set
VAL_STREAM = 7919


@dataclass
class Checkpoint:
    params: MetaParams
    config: MetaConfig
    outer_step: int = 0
    epoch: int = 0
    metrics: dict = field(default_factory=dict)

    def manifest(self, payload: bytes) -> dict:
        flat = self.params.as_set()
        return {
            "format": 1,
            "outer_step": int(self.outer_step),
            "epoch": int(self.epoch),
            "metrics": {k: float(v) for k, v in sorted(self.metrics.items())},
            "config": self.config.to_dict(),
            "tensors": [{"name": n, "shape": list(s)} for n, s in flat.layout],
            "payload_bytes": len(payload),
            "sha256": hashlib.sha256(payload).hexdigest(),
        }


def _payload(params: MetaParams) -> bytes:
    parts = [np.ascontiguousarray(t.data, dtype="<f8").tobytes() for t in params.as_set().tensors()]
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    payload = _payload(ckpt.params)
    manifest = json.dumps(ckpt.manifest(payload), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{len(manifest)}\n".encode("ascii"))
        fh.write(manifest + b"\n")
        fh.write(payload)
    return path


def load_checkpoint(path, config: MetaConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``config`` given, reject one written under another config."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if not raw.startswith(MAGIC):
        raise CheckpointFormatError(f"{path}: not a selfcritic checkpoint")
    rest = raw[len(MAGIC):]
    line_end = rest.find(b"\n")
    try:
        n_manifest = int(rest[:line_end].decode("ascii"))
        body = rest[line_end + 1:]
        manifest = json.loads(body[:n_manifest].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable manifest ({exc})") from None
    payload = body[n_manifest + 1:]
    if len(payload) != manifest.get("payload_bytes"):
        raise CheckpointFormatError(
            f"{path}: payload is {len(payload)} bytes, manifest declares {manifest.get('payload_bytes')} (truncated?)"
        )
    if hashlib.sha256(payload).hexdigest() != manifest["sha256"]:
        raise CheckpointFormatError(f"{path}: payload checksum mismatch")

    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    items, offset = [], 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        items.append((entry["name"], Tensor(values[offset:offset + count].reshape(shape).copy())))
        offset += count
    if offset != values.size:
        raise CheckpointFormatError(f"{path}: layout covers {offset} values, payload holds {values.size}")

    stored = MetaConfig.from_dict(manifest["config"])
    if config is not None and config.to_dict() != stored.to_dict():
        diff = sorted(k for k, v in config.to_dict().items() if stored.to_dict()[k] != v)
        raise ConfigMismatchError(f"{path}: checkpoint config differs in {', '.join(diff)}")
    return Checkpoint(MetaParams.from_set(ParameterSet(items)), stored, manifest["outer_step"],
                      manifest["epoch"], manifest["metrics"])


# -- pools ----------------------------------------------------------------------


def build_pool(config: MetaConfig) -> ClassPool:
    """The class pool a config describes; image roots hold one directory per split."""
    if config.pool_family == "blob":
        return gen_blob_pool(config.pool_classes, config.d_signal, config.separation, config.pool_seed)
    if config.pool_family == "ambiguous":
        return gen_ambiguous_pool(config.pool_classes, config.d_signal, config.d_spurious, config.pool_seed,
                                  config.separation, config.spurious_scale, config.spurious_noise,
                                  shuffle_columns=config.shuffle_columns)
    root = Path(config.image_root)
    return merge_pools(load_image_pool(root / split, split, config.image_size) for split in SPLITS)


# -- evaluation -----------------------------------------------------------------


def halfwidth(values) -> float:
    """95% normal-approximation interval half-width, 0 for a single value."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(1.96 * values.std(ddof=1) / math.sqrt(values.size))


@dataclass
class EvalReport:
    split: str
    acc_pre: np.ndarray
    acc_post: np.ndarray

    @property
    def n_episodes(self) -> int:
        return int(self.acc_pre.size)

    @property
    def mean_pre(self) -> float:
        return float(self.acc_pre.mean())

    @property
    def mean_post(self) -> float:
        return float(self.acc_post.mean())

    @property
    def hw_pre(self) -> float:
        return halfwidth(self.acc_pre)

    @property
    def hw_post(self) -> float:
        return halfwidth(self.acc_post)

    def summary(self) -> str:
        return (f"{self.split} ({self.n_episodes} episodes): "
                f"pre {self.mean_pre:.4f} ± {self.hw_pre:.4f}, post {self.mean_post:.4f} ± {self.hw_post:.4f}")

    def to_csv(self) -> str:
        lines = [EPISODE_HEADER, "episode,acc_pre,acc_post"]
        lines += [f"{i},{a!r},{b!r}" for i, (a, b) in enumerate(zip(self.acc_pre.tolist(), self.acc_post.tolist()))]
        return "\n".join(lines) + "\n"


def episodes_for(pool: ClassPool, config: MetaConfig, split: str, n: int, seed: int) -> list:
    return [sample_episode(pool, config.n_way, config.k_shot, config.n_target, episode_seed(seed, split, i), split)
            for i in range(n)]


def evaluate_params(params: MetaParams, config: MetaConfig, episodes, split: str = "meta-test") -> EvalReport:
    pre, post = [], []
    for ep in episodes:
        logits, _, trace = predict(params, ep.x_S, ep.y_S, ep.x_T, config)
        pre.append(accuracy(trace.logits_before, ep.y_T))
        post.append(accuracy(logits, ep.y_T))
    return EvalReport(split, np.array(pre), np.array(post))


def evaluate(ckpt: Checkpoint, pool: ClassPool, n_episodes: int, seed: int, split: str = "meta-test") -> EvalReport:
    """Pre- and post-target-phase accuracy over ``n_episodes`` fresh episodes."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    episodes = episodes_for(pool, ckpt.config, split, n_episodes, seed)
    return evaluate_params(ckpt.params, ckpt.config, episodes, split)


# -- training -------------------------------------------------------------------


@dataclass
class TrainResult:
    best: Checkpoint
    final: Checkpoint
    log: list
    error: DivergenceError | None = None

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.log)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def metrics_to_csv(rows) -> str:
    lines = [METRICS_HEADER, ",".join(METRIC_COLUMNS)]
    lines += [",".join(_fmt(row[c]) for c in METRIC_COLUMNS) for row in rows]
    return "\n".join(lines) + "\n"


def read_metrics_csv(path) -> list:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#") or line.startswith("outer_step"):
            continue
        values = line.split(",")
        rows.append({c: (int(v) if c == "outer_step" else float(v)) for c, v in zip(METRIC_COLUMNS, values)})
    return rows


def train(config: MetaConfig, pool: ClassPool | None = None, progress=None) -> TrainResult:
    """Run ``epochs * batches_per_epoch`` outer steps with periodic validation.

    The best checkpoint by post-target-phase validation accuracy is kept
    (ties go to the earlier one). A divergence stops training; the result
    then carries the error and the best checkpoint reached so far.
    """
    pool = pool if pool is not None else build_pool(config)
    params = init_meta_params(config, pool.dim)
    optimizer = make_optimizer(config)
    val_episodes = episodes_for(pool, config, "meta-val", config.val_episodes, config.seed + VAL_STREAM)
    initial = Checkpoint(params, config, 0, 0, {})
    best, best_val = initial, -math.inf
    log, window, error = [], [], None
    total = config.outer_steps
    step = 0
    for epoch in range(config.epochs):
        for batch in range(config.batches_per_epoch):
            episodes = [
                sample_episode(pool, config.n_way, config.k_shot, config.n_target,
                               episode_seed(config.seed, "meta-train", step * config.meta_batch + b))
                for b in range(config.meta_batch)
            ]
            try:
                params, metrics = meta_step(params, episodes, config, optimizer)
            except DivergenceError as exc:
                exc.step = step
                error = exc
                break
            step += 1
            window.append(metrics)
            if step % config.eval_interval == 0 or step == total:
                report = evaluate_params(params, config, val_episodes, "meta-val")
                row = {
                    "outer_step": step,
                    "train_loss": float(np.mean([m["loss"] for m in window])),
                    "train_acc_pre": float(np.mean([m["acc_pre"] for m in window])),
                    "train_acc_post": float(np.mean([m["acc_post"] for m in window])),
                    "val_acc_pre": report.mean_pre,
                    "val_acc_post": report.mean_post,
                }
                log.append(row)
                window = []
                if row["val_acc_post"] > best_val:
                    best_val = row["val_acc_post"]
                    best = Checkpoint(params, config, step, epoch, {k: v for k, v in row.items() if k != "outer_step"})
                if progress is not None:
                    progress(row)
        if error is not None:
            break
    final = Checkpoint(params, config, step, max(config.epochs - 1, 0), log[-1] if log else {})
    return TrainResult(best, final, log, error)
