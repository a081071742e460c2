"""Synthetic VQA-style data with planted answers and planted attention.

Each item belongs to one of ``n_concepts`` question types.  A concept fixes
a region of the image grid, a marker direction in feature space, a question
prototype and a joint-embedding prototype.  The image holds the target
object (concept marker + answer direction) as a spatial bump centred on
the concept's region, plus distractor objects of other concepts carrying
other answers.  The answer is only recoverable by attending to the region
whose marker matches the question; the reference attention map is the
target bump.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = ["GenConfig", "DatasetItem", "Dataset", "generate", "split", "grid_shape", "N_ANNOTATORS"]

N_ANNOTATORS = 10


@dataclass(frozen=True)
class GenConfig:
    n_items: int = 2000
    R: int = 16
    D: int = 32
    E: int = 16
    C: int = 8
    n_concepts: int | None = None  # defaults to C
    n_clusters: int | None = None  # defaults to min(50, n_items // 40), at least 1
    noise_sigma: float = 0.3
    joint_sigma: float | None = None  # defaults to noise_sigma * 7 / 6
    n_distractors: int = 2
    # "scene": distractors come from ring-neighbouring concepts, which also
    # sit close in joint space; "uniform": any other concept
    distractors: str = "scene"
    scene_width: int = 2  # scene distractors are drawn from concepts k +- 1..scene_width
    spread: float = 0.7  # bump width in grid cells; 0 gives a one-hot object
    smoothing: float = 0.05  # uniform mass mixed into the reference map
    corruption: float = 0.1  # per-annotator chance of a wrong answer
    object_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_items", "R", "D", "E", "C"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.C > self.n_items:
            raise ValueError("C must not exceed n_items")
        if self.concepts > self.R:
            raise ValueError("each concept needs its own region: n_concepts <= R")
        if self.n_distractors > self.concepts - 1:
            raise ValueError("n_distractors must be below the concept count")
        if self.distractors not in ("scene", "uniform"):
            raise ValueError(f"unknown distractor mode {self.distractors!r}")
        if self.noise_sigma < 0 or self.joint_noise < 0 or self.spread < 0:
            raise ValueError("noise levels and spread must be non-negative")
        if not 0.0 <= self.smoothing <= 1.0 or not 0.0 <= self.corruption <= 1.0:
            raise ValueError("smoothing and corruption must lie in [0, 1]")

    @property
    def joint_noise(self) -> float:
        return self.noise_sigma * 7.0 / 6.0 if self.joint_sigma is None else self.joint_sigma

    @property
    def concepts(self) -> int:
        return self.C if self.n_concepts is None else self.n_concepts

    @property
    def clusters(self) -> int:
        if self.n_clusters is not None:
            return self.n_clusters
        return max(1, min(50, self.n_items // 40))


@dataclass
class DatasetItem:
    id: int
    image_features: np.ndarray  # (R, D)
    question_embedding: np.ndarray  # (D,)
    answer: int
    joint_embedding: np.ndarray  # (E,)
    reference_attention: np.ndarray | None  # (R,)
    annotations: np.ndarray  # (10,)
    concept: int


@dataclass
class Dataset:
    """Column-oriented item storage; ``item(i)`` gives a row view."""

    features: np.ndarray  # (N, R, D)
    questions: np.ndarray  # (N, D)
    answers: np.ndarray  # (N,) int64
    joint: np.ndarray  # (N, E)
    reference: np.ndarray  # (N, R); rows of NaN where absent
    annotations: np.ndarray  # (N, 10) int64
    concepts: np.ndarray  # (N,) int64
    ids: np.ndarray  # (N,) int64
    n_classes: int
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def R(self) -> int:
        return self.features.shape[1]

    @property
    def D(self) -> int:
        return self.features.shape[2]

    @property
    def has_reference(self) -> np.ndarray:
        return ~np.isnan(self.reference).any(axis=1)

    def item(self, i: int) -> DatasetItem:
        ref = None if np.isnan(self.reference[i]).any() else self.reference[i]
        return DatasetItem(
            id=int(self.ids[i]),
            image_features=self.features[i],
            question_embedding=self.questions[i],
            answer=int(self.answers[i]),
            joint_embedding=self.joint[i],
            reference_attention=ref,
            annotations=self.annotations[i],
            concept=int(self.concepts[i]),
        )

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.features[rows],
            self.questions[rows],
            self.answers[rows],
            self.joint[rows],
            self.reference[rows],
            self.annotations[rows],
            self.concepts[rows],
            self.ids[rows],
            self.n_classes,
            dict(self.meta),
        )

    def row_of_ids(self, ids) -> np.ndarray:
        lookup = {int(i): r for r, i in enumerate(self.ids.tolist())}
        return np.array([lookup[int(i)] for i in np.asarray(ids).ravel()], dtype=np.int64).reshape(np.shape(ids))


def grid_shape(R: int) -> tuple[int, int]:
    """Square grid when R is a perfect square, else a single row."""
    side = math.isqrt(R)
    return (side, side) if side * side == R else (1, R)


def _bumps(R: int, spread: float) -> np.ndarray:
    """(R, R) matrix; row c is the spatial weight profile of an object at region c."""
    h, w = grid_shape(R)
    yy, xx = np.divmod(np.arange(R), w)
    d2 = (yy[:, None] - yy[None, :]) ** 2 + (xx[:, None] - xx[None, :]) ** 2
    if spread == 0.0:
        return np.eye(R)
    return np.exp(-d2 / (2.0 * spread**2))


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _ring(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Unit vectors on a randomly oriented circle, neighbours adjacent."""
    if d < 2:
        return _unit_rows(rng, n, d)
    basis, _ = np.linalg.qr(rng.normal(size=(d, 2)))
    theta = 2.0 * np.pi * np.arange(n) / n
    return np.cos(theta)[:, None] * basis[:, 0] + np.sin(theta)[:, None] * basis[:, 1]


def _distractor_pool(k: int, K: int, cfg: GenConfig) -> np.ndarray:
    if cfg.distractors == "uniform":
        return np.delete(np.arange(K), k)
    width = max(cfg.scene_width, (cfg.n_distractors + 1) // 2)
    pool = [(k + s) % K for off in range(1, width + 1) for s in (off, -off)]
    return np.array(sorted(set(pool) - {k}))


def generate(cfg: GenConfig = GenConfig()) -> Dataset:
    """Draw a dataset; deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    N, R, D, E, C, K = cfg.n_items, cfg.R, cfg.D, cfg.E, cfg.C, cfg.concepts
    locations = rng.choice(R, size=K, replace=False)
    markers = _unit_rows(rng, K, D) * cfg.object_scale
    answer_dirs = _unit_rows(rng, C, D) * cfg.object_scale
    q_protos = _unit_rows(rng, K, D)
    if cfg.distractors == "scene":
        j_protos = _ring(rng, K, E) * 2.0
    else:
        j_protos = _unit_rows(rng, K, E) * 2.0
    bumps = _bumps(R, cfg.spread)

    concepts = rng.integers(0, K, size=N)
    answers = rng.integers(0, C, size=N)
    feats = rng.normal(scale=cfg.noise_sigma, size=(N, R, D))
    for i in range(N):
        k = concepts[i]
        feats[i] += np.outer(bumps[locations[k]], markers[k] + answer_dirs[answers[i]])
        others = rng.choice(_distractor_pool(k, K, cfg), size=cfg.n_distractors, replace=False)
        for o in others:
            feats[i] += np.outer(bumps[locations[o]], markers[o] + answer_dirs[rng.integers(C)])
    questions = q_protos[concepts] + rng.normal(scale=cfg.noise_sigma, size=(N, D))
    joint = j_protos[concepts] + rng.normal(scale=cfg.joint_noise, size=(N, E))

    target = bumps[locations[concepts]]
    target = target / target.sum(axis=1, keepdims=True)
    reference = (1.0 - cfg.smoothing) * target + cfg.smoothing / R

    annotations = np.repeat(answers[:, None], N_ANNOTATORS, axis=1)
    wrong = rng.random(size=annotations.shape) < cfg.corruption
    shift = rng.integers(1, C, size=annotations.shape) if C > 1 else np.zeros(annotations.shape, dtype=np.int64)
    annotations = np.where(wrong, (annotations + shift) % C, annotations)

    ds = Dataset(
        features=feats,
        questions=questions,
        answers=answers.astype(np.int64),
        joint=joint,
        reference=reference,
        annotations=annotations.astype(np.int64),
        concepts=concepts.astype(np.int64),
        ids=np.arange(N, dtype=np.int64),
        n_classes=C,
        meta={"gen": asdict(cfg), "locations": locations.tolist(), "markers": markers, "question_prototypes": q_protos},
    )
    _check_planted(ds)
    return ds


def _check_planted(ds: Dataset, sample: int = 400) -> None:
    """Within-concept joint distances must be smaller than across-concept ones."""
    if len(np.unique(ds.concepts)) < 2:
        return
    rng = np.random.default_rng(0)
    rows = rng.choice(len(ds), size=min(sample, len(ds)), replace=False)
    x = ds.joint[rows]
    c = ds.concepts[rows]
    d = np.sqrt(np.maximum(np.sum((x[:, None] - x[None]) ** 2, axis=-1), 0.0))
    same = (c[:, None] == c[None]) & ~np.eye(len(rows), dtype=bool)
    diff = c[:, None] != c[None]
    if same.any() and d[same].mean() >= d[diff].mean():
        raise ValueError("planted structure violated: concepts are not separated in joint space")


def split(ds: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    n_test = int(round(len(ds) * test_fraction))
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))
