"""Few-shot episode construction over split-tagged class pools.

Three pool families are provided: isotropic Gaussian blobs, an
"ambiguous" family whose support sets carry a label-correlated nuisance
feature that is scrambled in the target set, and images read from a
``root/<class>/<image>.png`` directory tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import CapacityError, ContractError, IngestionError

SPLITS = ("meta-train", "meta-val", "meta-test")
MANIFEST_HEADER = "# selfcritic-pool-manifest v1"


@dataclass
class Episode:
    """One task. ``y_T`` is withheld from every inner-loop entry point."""

    x_S: np.ndarray
    y_S: np.ndarray
    x_T: np.ndarray
    y_T: np.ndarray
    n_way: int

    @property
    def support(self) -> tuple:
        return self.x_S, self.y_S

    def with_target_labels(self, y_T) -> "Episode":
        return Episode(self.x_S, self.y_S, self.x_T, np.asarray(y_T), self.n_way)


@dataclass
class ClassEntry:
    split: str
    mean: np.ndarray | None = None
    examples: np.ndarray | None = None
    paths: tuple = ()


@dataclass
class ClassPool:
    """Immutable after construction: class id -> generator or examples, with split tags."""

    family: str
    dim: int
    classes: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def class_ids(self, split: str) -> list:
        if split not in SPLITS:
            raise ContractError(f"unknown split {split!r}; expected one of {SPLITS}")
        return sorted(cid for cid, entry in self.classes.items() if entry.split == split)

    @property
    def splits(self) -> set:
        return {entry.split for entry in self.classes.values()}


def _assign_splits(n_classes: int, fractions) -> list:
    if n_classes < len(SPLITS):
        raise CapacityError(f"need at least {len(SPLITS)} classes to cover every split")
    fractions = np.asarray(fractions, dtype=float)
    counts = np.maximum(1, np.floor(fractions / fractions.sum() * n_classes).astype(int))
    counts[0] = n_classes - counts[1:].sum()
    return [s for s, c in zip(SPLITS, counts) for _ in range(c)]


def gen_blob_pool(n_classes: int, d: int, separation: float, seed: int,
                  split_fractions=(0.6, 0.2, 0.2)) -> ClassPool:
    """Unit-variance Gaussian classes with means uniform in ``[-separation, separation]^d``."""
    rng = np.random.default_rng(seed)
    splits = _assign_splits(n_classes, split_fractions)
    classes = {
        f"c{i:04d}": ClassEntry(split, mean=rng.uniform(-separation, separation, size=d))
        for i, split in enumerate(splits)
    }
    return ClassPool("blob", d, classes, {"separation": float(separation)})


def gen_ambiguous_pool(n_classes: int, d_signal: int, d_spurious: int, seed: int,
                       separation: float = 2.0, spurious_scale: float = 3.0,
                       spurious_noise: float = 0.1, shuffle_columns: bool = False,
                       split_fractions=(0.6, 0.2, 0.2)) -> ClassPool:
    """Classes with a stable signal mean plus a per-episode nuisance code.

    The first ``d_signal`` columns hold the class signal (unit-variance
    noise around a mean uniform in ``[-separation, separation]``). The
    last ``d_spurious`` columns hold a code drawn afresh for every episode
    and every class slot: support examples of slot ``k`` carry code ``k``,
    target examples of slot ``k`` carry code ``perm[k]`` for a random
    permutation ``perm``. The code separates the support perfectly but is
    no better than chance on the target set.

    With ``shuffle_columns`` every episode also applies its own random
    column permutation, so which columns are nuisance cannot be learned
    across episodes; only the unlabelled target set reveals it.
    """
    if d_spurious <= 0:
        raise ContractError("the ambiguous family needs at least one spurious dimension")
    if d_signal <= 0:
        raise ContractError("the ambiguous family needs at least one signal dimension")
    rng = np.random.default_rng(seed)
    splits = _assign_splits(n_classes, split_fractions)
    classes = {
        f"c{i:04d}": ClassEntry(split, mean=rng.uniform(-separation, separation, size=d_signal))
        for i, split in enumerate(splits)
    }
    options = {
        "d_signal": int(d_signal),
        "d_spurious": int(d_spurious),
        "separation": float(separation),
        "spurious_scale": float(spurious_scale),
        "spurious_noise": float(spurious_noise),
        "shuffle_columns": bool(shuffle_columns),
    }
    return ClassPool("ambiguous", d_signal + d_spurious, classes, options)


def _png_files(directory: Path) -> list:
    return sorted(p for p in directory.iterdir() if p.is_file())


def load_image_pool(root, split: str, size: int = 28) -> ClassPool:
    """Decode ``root/<class>/*.png`` into flattened ``[0, 1]`` vectors tagged ``split``.

    Every file in a class directory must be a readable PNG; grayscale
    images give ``size * size`` features, RGB images three times that.
    """
    from PIL import Image, UnidentifiedImageError

    if split not in SPLITS:
        raise ContractError(f"unknown split {split!r}")
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"image root {root} is not a directory")
    classes, dim = {}, None
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        files = _png_files(class_dir)
        if not files:
            raise CapacityError(f"class directory {class_dir} contains no images")
        vectors = []
        for path in files:
            try:
                with Image.open(path) as img:
                    if img.format != "PNG":
                        raise IngestionError(f"{path}: not a PNG file")
                    mode = "L" if img.mode in ("1", "L", "LA", "I", "I;16") else "RGB"
                    arr = np.asarray(img.convert(mode).resize((size, size)), dtype=np.float64) / 255.0
            except (UnidentifiedImageError, OSError) as exc:
                if isinstance(exc, IngestionError):
                    raise
                raise IngestionError(f"{path}: cannot decode image ({exc})") from exc
            vec = arr.reshape(-1)
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise IngestionError(f"{path}: {vec.size} features, expected {dim} (mixed colour modes)")
            vectors.append(vec)
        cid = f"{split}/{class_dir.name}"
        classes[cid] = ClassEntry(split, examples=np.stack(vectors), paths=tuple(str(p) for p in files))
    if not classes:
        raise CapacityError(f"no class directories under {root}")
    return ClassPool("images", dim, classes, {"size": int(size)})


def merge_pools(pools: Iterable[ClassPool]) -> ClassPool:
    pools = list(pools)
    family, dim = pools[0].family, pools[0].dim
    merged = {}
    for pool in pools:
        if pool.family != family or pool.dim != dim:
            raise ContractError("can only merge pools of one family and dimensionality")
        for cid, entry in pool.classes.items():
            if cid in merged:
                raise ContractError(f"class id {cid} appears in more than one pool")
            merged[cid] = entry
    return ClassPool(family, dim, merged, dict(pools[0].options))


def target_counts(n_target: int, n_way: int) -> np.ndarray:
    counts = np.full(n_way, n_target // n_way)
    counts[: n_target % n_way] += 1
    return counts


def sample_episode(pool: ClassPool, n_way: int, k_shot: int, n_target: int, seed,
                   split: str = "meta-train") -> Episode:
    """Sample an ``n_way``-way ``k_shot``-shot episode from one split.

    Classes are drawn without replacement and relabeled ``0..n_way-1`` in
    draw order. Target examples are spread over the classes as evenly as
    possible and shuffled. Deterministic in ``seed`` (an int or a
    ``SeedSequence``).
    """
    if n_way < 1 or k_shot < 1 or n_target < 0:
        raise ContractError(f"invalid episode shape n_way={n_way}, k_shot={k_shot}, n_target={n_target}")
    ids = pool.class_ids(split)
    if len(ids) < n_way:
        raise CapacityError(f"split {split} has {len(ids)} classes, {n_way} requested")
    rng = np.random.default_rng(seed)
    chosen = [ids[i] for i in rng.choice(len(ids), size=n_way, replace=False)]
    counts = target_counts(n_target, n_way)
    need = k_shot + math.ceil(n_target / n_way)
    d = pool.dim

    x_S = np.empty((n_way * k_shot, d))
    y_S = np.repeat(np.arange(n_way), k_shot)
    x_T = np.empty((n_target, d))
    y_T = np.repeat(np.arange(n_way), counts)
    offsets = np.concatenate([[0], np.cumsum(counts)])

    if pool.family == "ambiguous":
        opts = pool.options
        d_sig = opts["d_signal"]
        codes = rng.normal(scale=opts["spurious_scale"], size=(n_way, opts["d_spurious"]))
        perm = rng.permutation(n_way)

    for k, cid in enumerate(chosen):
        entry = pool.classes[cid]
        n_k = int(counts[k])
        rows_S = slice(k * k_shot, (k + 1) * k_shot)
        rows_T = slice(int(offsets[k]), int(offsets[k + 1]))
        if entry.examples is not None:
            if len(entry.examples) < need:
                raise CapacityError(f"class {cid} has {len(entry.examples)} examples, {need} needed")
            picks = rng.choice(len(entry.examples), size=k_shot + n_k, replace=False)
            x_S[rows_S] = entry.examples[picks[:k_shot]]
            x_T[rows_T] = entry.examples[picks[k_shot:]]
        elif pool.family == "blob":
            x_S[rows_S] = entry.mean + rng.normal(size=(k_shot, d))
            x_T[rows_T] = entry.mean + rng.normal(size=(n_k, d))
        elif pool.family == "ambiguous":
            noise = opts["spurious_noise"]
            x_S[rows_S, :d_sig] = entry.mean + rng.normal(size=(k_shot, d_sig))
            x_S[rows_S, d_sig:] = codes[k] + noise * rng.normal(size=(k_shot, d - d_sig))
            x_T[rows_T, :d_sig] = entry.mean + rng.normal(size=(n_k, d_sig))
            x_T[rows_T, d_sig:] = codes[perm[k]] + noise * rng.normal(size=(n_k, d - d_sig))
        else:
            raise ContractError(f"unknown pool family {pool.family!r}")

    order = rng.permutation(n_target)
    x_T, y_T = x_T[order], y_T[order]
    if pool.family == "ambiguous" and opts.get("shuffle_columns"):
        cols = rng.permutation(d)
        x_S, x_T = x_S[:, cols], x_T[:, cols]
    return Episode(x_S, y_S, x_T, y_T, n_way)


def episode_seed(seed: int, split: str, index: int) -> np.random.SeedSequence:
    """Independent, reproducible seed stream for episode ``index`` of ``split``."""
    return np.random.SeedSequence([int(seed), SPLITS.index(split), int(index)])


# -- manifests ------------------------------------------------------------------


def write_manifest(pool: ClassPool, path) -> None:
    """Plain-text index: one line per example (images) or per class generator."""
    lines = [MANIFEST_HEADER, f"# family={pool.family} dim={pool.dim} "
             + " ".join(f"{k}={v}" for k, v in sorted(pool.options.items()))]
    for cid in sorted(pool.classes):
        entry = pool.classes[cid]
        if entry.paths:
            lines.extend(f"{entry.split}\t{cid}\t{p}" for p in entry.paths)
        else:
            params = ",".join(repr(float(v)) for v in entry.mean)
            lines.append(f"{entry.split}\t{cid}\tmean={params}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path, size: int | None = None) -> ClassPool:
    """Rebuild a pool from ``write_manifest`` output (images are re-decoded)."""
    text = Path(path).read_text().splitlines()
    if not text or text[0] != MANIFEST_HEADER:
        raise IngestionError(f"{path}: not a pool manifest")
    meta = dict(tok.split("=", 1) for tok in text[1].lstrip("# ").split())
    family, dim = meta.pop("family"), int(meta.pop("dim"))
    options = {}
    for k, v in meta.items():
        if v in ("True", "False"):
            options[k] = v == "True"
        else:
            options[k] = int(v) if v.lstrip("-").isdigit() else float(v)
    grouped: dict = {}
    for line in text[2:]:
        if not line.strip():
            continue
        split, cid, payload = line.split("\t")
        grouped.setdefault(cid, [split, []])[1].append(payload)
    classes = {}
    for cid, (split, payloads) in grouped.items():
        if payloads[0].startswith("mean="):
            mean = np.array([float(v) for v in payloads[0][5:].split(",") if v])
            classes[cid] = ClassEntry(split, mean=mean)
        else:
            from PIL import Image

            side = size or options.get("size", 28)
            vectors = []
            for p in payloads:
                try:
                    with Image.open(p) as img:
                        mode = "L" if dim == side * side else "RGB"
                        vectors.append(np.asarray(img.convert(mode).resize((side, side)),
                                                  dtype=np.float64).reshape(-1) / 255.0)
                except OSError as exc:
                    raise IngestionError(f"{p}: cannot decode image ({exc})") from exc
            classes[cid] = ClassEntry(split, examples=np.stack(vectors), paths=tuple(payloads))
    return ClassPool(family, dim, classes, options)
