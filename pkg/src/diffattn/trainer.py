"""RMSProp training of the baseline, DAN and DCN models, and evaluation."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import ModelParams, init_params
from .data import Dataset
from .exemplars import EmbeddingStore, ExemplarIndex, ExemplarSet, pick_quintuplet, random_exemplar_sets
from .losses import LossConfig
from .metrics import dataset_accuracy, rank_correlation_rows
from .model import Batch, ModelSpec, run_batch

__all__ = [
    "TrainConfig",
    "RmsState",
    "rmsprop_step",
    "decay_factor",
    "TrainingDiverged",
    "build_exemplar_index",
    "train",
    "evaluate",
    "HISTORY_FIELDS",
]

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "loss", "acc", "triplet_sat", "rankcorr")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model: str = "dan"
    epochs: int = 50
    batch: int = 200
    lr_cls: float = 0.0004
    lr_triplet: float = 0.001
    rms_alpha_cls: float = 0.99
    rms_alpha_triplet: float = 0.9
    rms_eps: float = 1e-8
    decay_a: float = 1500.0
    decay_b: float = 1250.0
    nu: float = 10.0
    alpha: float = 0.2
    lam: float = 1e-4
    ce_over_classes: bool = True
    hidden: int = 64
    k_exemplars: int = 1
    opposing_offset: int = 20
    n_clusters: int = 50
    exemplars: str = "retrieved"  # retrieved | random
    nu_mode: str = "weight"  # weight | frequency
    metric: str = "triplet"  # triplet | quintuplet (experimental)
    quintuplet_pool: int = 400
    full_scaling: bool = False
    # question used for exemplar maps: "target" (the item's own question) or
    # "own" (each exemplar's question)
    exemplar_question: str = "target"
    seed: int = 0

    def __post_init__(self):
        if self.lr_cls <= 0 or self.lr_triplet <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch < 1 or self.epochs < 0:
            raise ValueError("batch must be >= 1 and epochs >= 0")
        if not 1 <= self.k_exemplars <= 5:
            raise ValueError("k_exemplars must be in 1..5")
        if self.exemplars not in ("retrieved", "random"):
            raise ValueError(f"unknown exemplar source {self.exemplars!r}")
        if self.nu_mode not in ("weight", "frequency"):
            raise ValueError(f"unknown nu mode {self.nu_mode!r}")
        ModelSpec.from_name(self.model)

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec.from_name(self.model, full_scaling=self.full_scaling, metric=self.metric)

    @property
    def loss(self) -> LossConfig:
        return LossConfig(nu=self.nu, alpha=self.alpha, lam=self.lam, ce_over_classes=self.ce_over_classes)


@dataclass
class RmsState:
    """Running mean-square of gradients, one array per parameter block."""

    sq: dict = field(default_factory=dict)


def rmsprop_step(param: np.ndarray, grad: np.ndarray, sq: np.ndarray, lr: float, alpha: float, eps: float) -> None:
    """In-place RMSProp update of ``param`` and its accumulator ``sq``.

    ``sq = alpha * sq + (1 - alpha) * grad**2``;
    ``param -= lr * grad / (sqrt(sq) + eps)``.
    """
    if param.shape != grad.shape or sq.shape != grad.shape:
        raise ValueError(f"rmsprop: shapes {param.shape}, {grad.shape}, {sq.shape} differ")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("rmsprop: non-finite gradient")
    sq *= alpha
    sq += (1.0 - alpha) * grad * grad
    param -= lr * grad / (np.sqrt(sq) + eps)


def decay_factor(a: float = 1500.0, b: float = 1250.0) -> float:
    """Per-epoch learning-rate multiplier ``exp(ln(0.1) / (a * b))``."""
    if a <= 0 or b <= 0:
        raise ValueError("decay constants must be positive")
    return math.exp(math.log(0.1) / (a * b))


class _Optimizer:
    def __init__(self, params: ModelParams, names, lr: float, alpha: float, eps: float):
        self.names = list(names)
        self.lr, self.alpha, self.eps = lr, alpha, eps
        self.state = RmsState({n: np.zeros_like(getattr(params, n)) for n in self.names})

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        for n in self.names:
            rmsprop_step(getattr(params, n), getattr(grads, n), self.state.sq[n], self.lr, self.alpha, self.eps)


def build_exemplar_index(ds: Dataset, n_clusters: int = 50, seed: int = 0) -> ExemplarIndex:
    n_clusters = max(1, min(n_clusters, len(ds)))
    return ExemplarIndex.build(EmbeddingStore(ds.joint, ds.ids), n_clusters, seed)


def _exemplar_rows(ds: Dataset, sets: list[ExemplarSet]) -> tuple[np.ndarray, np.ndarray]:
    sup = ds.row_of_ids(np.stack([s.supports for s in sets]))
    opp = ds.row_of_ids(np.stack([s.opposes for s in sets]))
    return sup, opp


def _epoch_exemplars(ds: Dataset, index: ExemplarIndex, cfg: TrainConfig, epoch: int):
    seed = (cfg.seed * 1_000_003 + epoch) % (2**32)
    if cfg.exemplars == "random":
        sets = random_exemplar_sets(ds.ids, ds.ids, cfg.k_exemplars, seed=seed)
    else:
        sets = index.sets_for_members(ds.ids, cfg.k_exemplars, offset=cfg.opposing_offset, seed=seed)
    return _exemplar_rows(ds, sets)


def _quintuplet_rows(ds: Dataset, index: ExemplarIndex, cfg: TrainConfig, epoch: int) -> np.ndarray:
    rng = np.random.default_rng((cfg.seed, epoch, 5))
    pool = min(cfg.quintuplet_pool, index.n - 1)
    picks = [pick_quintuplet(index.kd, int(i), pool, 20, rng) for i in ds.ids]
    return ds.row_of_ids(np.array(picks))


def _make_batch(ds: Dataset, rows, sup=None, opp=None, quint=None, own_questions: bool = False) -> Batch:
    f = ds.features
    q = ds.questions
    return Batch(
        f_sup=None if sup is None or not own_questions else q[sup[rows]],
        f_opp=None if opp is None or not own_questions else q[opp[rows]],
        f_quint=None if quint is None or not own_questions else q[quint[rows]],
        g=f[rows],
        f=ds.questions[rows],
        y=ds.answers[rows],
        g_sup=None if sup is None else f[sup[rows]],
        g_opp=None if opp is None else f[opp[rows]],
        g_quint=None if quint is None else f[quint[rows]],
    )


def train(
    ds: Dataset,
    cfg: TrainConfig = TrainConfig(),
    index: ExemplarIndex | None = None,
    params: ModelParams | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Train on ``ds``; returns the parameters and one history row per epoch.

    Exemplars are retrieved from ``index`` (built over ``ds`` when omitted)
    once per epoch.  With ``nu_mode="weight"`` each batch takes one step on
    ``cross + nu * metric``; with ``"frequency"`` it takes one
    classification step and ``round(nu)`` metric-only steps with the
    triplet optimizer settings.
    """
    spec = cfg.spec
    lcfg = cfg.loss
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(ds.D, cfg.hidden, ds.n_classes, rng, R=ds.R, dcn_scaling=spec.dcn_scaling)
    if spec.needs_exemplars and index is None:
        index = build_exemplar_index(ds, cfg.n_clusters, cfg.seed)
    cls_opt = _Optimizer(params, params.trainable(), cfg.lr_cls, cfg.rms_alpha_cls, cfg.rms_eps)
    # shared parameters belong to the classification group; only the
    # frequency mode gives the triplet optimizer anything to update
    metric_steps = int(round(cfg.nu)) if (cfg.nu_mode == "frequency" and spec.kind == "dan") else 0
    trip_opt = _Optimizer(params, params.trainable() if metric_steps else [], cfg.lr_triplet, cfg.rms_alpha_triplet, cfg.rms_eps)
    factor = decay_factor(cfg.decay_a, cfg.decay_b)
    has_ref = ds.has_reference

    history = []
    for epoch in range(1, cfg.epochs + 1):
        sup = opp = quint = None
        if spec.kind == "dan" and spec.metric == "quintuplet":
            quint = _quintuplet_rows(ds, index, cfg, epoch)
        elif spec.needs_exemplars:
            sup, opp = _epoch_exemplars(ds, index, cfg, epoch)
        order = np.random.default_rng((cfg.seed, epoch)).permutation(len(ds))
        tot_loss = 0.0
        sat_sum, sat_n = 0.0, 0
        preds = np.empty(len(ds), dtype=np.int64)
        maps = np.empty((len(ds), ds.R))
        for b0 in range(0, len(ds), cfg.batch):
            rows = order[b0 : b0 + cfg.batch]
            batch = _make_batch(ds, rows, sup, opp, quint, cfg.exemplar_question == "own")
            try:
                if metric_steps:
                    r = run_batch(batch, params, spec, lcfg, metric_weight=0.0)
                    cls_opt.step(params, r.grads)
                    for _ in range(metric_steps):
                        m = run_batch(batch, params, spec, lcfg, cls_weight=0.0, metric_weight=1.0)
                        trip_opt.step(params, m.grads)
                    loss = r.cross + cfg.nu * m.metric
                else:
                    r = run_batch(batch, params, spec, lcfg)
                    cls_opt.step(params, r.grads)
                    loss = r.loss
            except FloatingPointError as e:
                raise TrainingDiverged(f"training diverged at epoch {epoch}, batch {b0 // cfg.batch}: {e}") from e
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became non-finite at epoch {epoch}, batch {b0 // cfg.batch}")
            tot_loss += loss * len(rows)
            sat = m.triplet_sat if metric_steps else r.triplet_sat
            if not math.isnan(sat):
                sat_sum += sat * len(rows)
                sat_n += len(rows)
            preds[rows] = r.probs.argmax(axis=1)
            maps[rows] = r.maps
        cls_opt.lr *= factor
        trip_opt.lr *= factor
        rc = rank_correlation_rows(maps[has_ref], ds.reference[has_ref]).mean() if has_ref.any() else float("nan")
        row = {
            "epoch": epoch,
            "loss": tot_loss / len(ds),
            "acc": dataset_accuracy(preds, ds.annotations),
            "triplet_sat": sat_sum / sat_n if sat_n else float("nan"),
            "rankcorr": float(rc),
        }
        history.append(row)
        log.debug("epoch %d %s", epoch, row)
    return params, history


def evaluate(
    ds: Dataset,
    params: ModelParams,
    model: str | ModelSpec,
    *,
    index: ExemplarIndex | None = None,
    reference_ds: Dataset | None = None,
    k_exemplars: int = 1,
    opposing_offset: int = 20,
    exemplars: str = "retrieved",
    seed: int = 0,
    batch: int = 500,
    threads: int = 1,
) -> dict:
    """Accuracy and mean rank correlation with the reference maps.

    DCN models need exemplars: they are retrieved from ``index`` built over
    ``reference_ds`` (the training split); items of ``ds`` are queried by
    their joint embedding.  The reported maps are the ones the model
    attends with.  Batches are independent, so ``threads > 1`` evaluates
    them concurrently without changing the result.
    """
    spec = model if isinstance(model, ModelSpec) else ModelSpec.from_name(model)
    sup = opp = None
    if spec.kind == "dcn":
        ref = reference_ds if reference_ds is not None else ds
        if index is None:
            index = build_exemplar_index(ref, seed=seed)
        if exemplars == "random":
            sets = random_exemplar_sets(ref.ids, np.full(len(ds), -1), k_exemplars, seed=seed)
        else:
            sets = index.sets_for_points(ds.joint, k_exemplars, offset=opposing_offset, seed=seed)
        sup_rows, opp_rows = _exemplar_rows(ref, sets)
        sup_feats, opp_feats = ref.features[sup_rows], ref.features[opp_rows]
    preds = np.empty(len(ds), dtype=np.int64)
    maps = np.empty((len(ds), ds.R))
    plain = ModelSpec("baseline") if spec.kind == "dan" else spec

    def one(b0: int) -> None:
        rows = np.arange(b0, min(b0 + batch, len(ds)))
        bt = Batch(ds.features[rows], ds.questions[rows], ds.answers[rows])
        if spec.kind == "dcn":
            bt.g_sup, bt.g_opp = sup_feats[rows], opp_feats[rows]
        r = run_batch(bt, params, plain, LossConfig(), backward=False)
        preds[rows] = r.probs.argmax(axis=1)
        maps[rows] = r.maps

    starts = range(0, len(ds), batch)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one, starts))
    else:
        for b0 in starts:
            one(b0)
    has_ref = ds.has_reference
    rc = rank_correlation_rows(maps[has_ref], ds.reference[has_ref]) if has_ref.any() else np.array([np.nan])
    return {
        "accuracy": dataset_accuracy(preds, ds.annotations),
        "rank_correlation": float(np.mean(rc)),
        "predictions": preds,
        "maps": maps,
    }


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
