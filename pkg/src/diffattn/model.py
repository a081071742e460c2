"""Model variants and the end-to-end batched forward/backward pass.

Variants:

``baseline``
    attention + answer head, cross-entropy only.
``dan``
    baseline plus the triplet objective on the attention maps of the
    target, supporting and opposing images (weight ``nu``).  With
    ``metric="quintuplet"`` the triplet term is replaced by the quintuplet
    hinge sum.
``dcn-{add,mul}-{v1,v2}``
    the target map is combined with supporting/opposing context before
    attending; trained on cross-entropy only.

All exemplar maps are computed with the *target's* question embedding and
the shared attention parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attention as att
from .dcn import DcnConfig, context_backward, context_forward
from .losses import PROB_FLOOR, LossConfig, quintuplet_grads, quintuplet_terms, triplet_grads
from .tensor import softmax

__all__ = ["MODEL_NAMES", "ModelSpec", "Batch", "BatchResult", "forward_backward", "run_batch", "predict"]

MODEL_NAMES = ("baseline", "dan", "dcn-add-v1", "dcn-add-v2", "dcn-mul-v1", "dcn-mul-v2")


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "baseline"  # baseline | dan | dcn
    dcn: DcnConfig | None = None
    metric: str = "triplet"  # triplet | quintuplet (dan only)

    @classmethod
    def from_name(cls, name: str, *, full_scaling: bool = False, metric: str = "triplet") -> "ModelSpec":
        if name == "baseline":
            return cls("baseline")
        if name == "dan":
            return cls("dan", metric=metric)
        parts = name.split("-")
        if len(parts) == 3 and parts[0] == "dcn" and parts[1] in ("add", "mul") and parts[2] in ("v1", "v2"):
            scaling = "fixed" if parts[2] == "v1" else ("full" if full_scaling else "diag")
            return cls("dcn", DcnConfig(mode=parts[1], scaling=scaling))
        raise ValueError(f"unknown model {name!r}; expected one of {', '.join(MODEL_NAMES)}")

    @property
    def name(self) -> str:
        if self.kind != "dcn":
            return self.kind
        return f"dcn-{self.dcn.mode}-{'v1' if self.dcn.scaling == 'fixed' else 'v2'}"

    @property
    def dcn_scaling(self) -> str | None:
        return self.dcn.scaling if self.kind == "dcn" else None

    @property
    def needs_exemplars(self) -> bool:
        return self.kind != "baseline"


@dataclass
class Batch:
    """A mini-batch.

    ``g``: (B, R, D); ``f``: (B, D); ``y``: (B,) int labels.
    ``g_sup``/``g_opp``: (B, k, R, D) exemplar image features.
    ``g_quint``: (B, 4, R, D) features of (p+, p++, n--, n-).
    """

    g: np.ndarray
    f: np.ndarray
    y: np.ndarray
    g_sup: np.ndarray | None = None
    g_opp: np.ndarray | None = None
    g_quint: np.ndarray | None = None
    # question embeddings of the exemplars, (B, k, D) / (B, 4, D); when
    # absent every exemplar map is computed with the target question ``f``
    f_sup: np.ndarray | None = None
    f_opp: np.ndarray | None = None
    f_quint: np.ndarray | None = None

    def __len__(self) -> int:
        return self.g.shape[0]


@dataclass
class BatchResult:
    loss: float
    grads: att.ModelParams
    probs: np.ndarray  # (B, C)
    maps: np.ndarray  # (B, R) map used for attending
    target_maps: np.ndarray  # (B, R) plain attention of the target
    cross: float
    metric: float = 0.0
    # fraction of (target, support, oppose) triples meeting the margin
    triplet_sat: float = float("nan")
    extra: dict = field(default_factory=dict)


def _finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {name}")


def _ce(probs: np.ndarray, y: np.ndarray, scale: float):
    B = len(y)
    p = np.maximum(probs[np.arange(B), y], PROB_FLOOR)
    loss = -np.log(p).mean() * scale
    dz = probs.copy()
    dz[np.arange(B), y] -= 1.0
    return float(loss), dz * (scale / B)


def run_batch(
    batch: Batch,
    params: att.ModelParams,
    spec: ModelSpec,
    cfg: LossConfig = LossConfig(),
    *,
    cls_weight: float = 1.0,
    metric_weight: float | None = None,
    backward: bool = True,
) -> BatchResult:
    """Forward (and optionally backward) pass over a batch.

    ``cls_weight`` and ``metric_weight`` scale the classification and metric
    terms of the DAN objective (the latter defaults to ``cfg.nu``); the
    trainer uses them to step the two terms separately.
    """
    g, f, y = batch.g, batch.f, np.asarray(batch.y)
    B, R, D = g.shape
    C = params.W_A.shape[1]
    nu = cfg.nu if metric_weight is None else metric_weight

    # stack target and exemplar images so attention runs once; a DAN whose
    # metric weight is zero skips the exemplars and runs exactly as baseline
    if spec.kind == "dan" and nu == 0.0:
        k, groups, fgroups = 0, [], []
    elif spec.kind == "dan" and spec.metric == "quintuplet":
        ex = batch.g_quint
        if ex is None:
            raise ValueError("quintuplet DAN needs g_quint")
        k = ex.shape[1]
        groups = [ex]
        fgroups = [batch.f_quint]
    elif spec.needs_exemplars:
        if batch.g_sup is None or batch.g_opp is None:
            raise ValueError(f"model {spec.name} needs supporting and opposing exemplars")
        k = batch.g_sup.shape[1]
        groups = [batch.g_sup, batch.g_opp]
        fgroups = [batch.f_sup, batch.f_opp]
    else:
        k, groups, fgroups = 0, [], []
    parts = [g] + [x.transpose(1, 0, 2, 3).reshape(-1, R, D) for x in groups]
    g_all = np.concatenate(parts, axis=0) if groups else g
    fparts = [f] + [np.tile(f, (k, 1)) if fx is None else fx.transpose(1, 0, 2).reshape(-1, D) for fx in fgroups]
    f_all = np.concatenate(fparts, axis=0)
    s_all, acache = att.attention_forward(g_all, f_all, params)
    _finite("attention", s_all)
    s = s_all[:B]
    ex_maps = s_all[B:].reshape(-1, k, B, R) if groups else None  # (groups, k, B, R)

    grads = params.zeros_like() if backward else None
    ds_all = np.zeros_like(s_all) if backward else None
    extra: dict = {}
    metric_val = 0.0
    sat = float("nan")

    if spec.kind == "dcn":
        sp = ex_maps[0].mean(axis=0)
        sn = ex_maps[1].mean(axis=0)
        d, ccache = context_forward(s, sp, sn, params.W_1, params.W_2, spec.dcn)
        _finite("differential context", d)
        p_att = d
        extra["support_maps"], extra["oppose_maps"] = sp, sn
    else:
        p_att = s

    v = att.attend(g, p_att)
    z = att.answer_logits(v, f, params)
    _finite("answer head", z)
    probs = softmax(z, axis=1)
    scale = 1.0 if spec.kind == "dcn" or not cfg.ce_over_classes else 1.0 / C
    cross, dz = _ce(probs, y, scale)
    loss = cls_weight * cross

    if spec.kind == "dan" and ex_maps is None:
        pass
    elif spec.kind == "dan" and spec.metric == "triplet":
        sp, sn = ex_maps[0], ex_maps[1]  # (k, B, R)
        dp = np.sum((s - sp) ** 2, axis=-1)
        dn = np.sum((s - sn) ** 2, axis=-1)
        trip = np.maximum(0.0, dp + cfg.alpha - dn)  # (k, B)
        sat = float(np.mean(dp + cfg.alpha <= dn))
        metric_val = float(trip.mean())
        loss += nu * metric_val
        if backward:
            gs, gp, gn = triplet_grads(np.broadcast_to(s, sp.shape), sp, sn, cfg.alpha)
            w = nu / (k * B)
            ds_all[:B] += w * gs.sum(axis=0)
            ds_all[B:].reshape(2, k, B, R)[0] += w * gp
            ds_all[B:].reshape(2, k, B, R)[1] += w * gn
    elif spec.kind == "dan":
        q = ex_maps[0]  # (4, B, R)
        terms = quintuplet_terms(s, q[0], q[1], q[2], q[3], cfg)
        hinge = sum(terms)
        reg = cfg.lam * params.norm_sq()
        metric_val = float(hinge.mean() + reg)
        sat = float(np.mean(hinge == 0.0))
        loss += nu * metric_val
        if backward:
            ga, *gq = quintuplet_grads(s, q[0], q[1], q[2], q[3], cfg)
            w = nu / B
            ds_all[:B] += w * ga
            view = ds_all[B:].reshape(4, B, R)
            for j in range(4):
                view[j] += w * gq[j]
            for name in params.trainable():
                getattr(grads, name)[...] += nu * 2.0 * cfg.lam * getattr(params, name)
    elif spec.kind == "dcn" and ex_maps is not None:
        # report how often the plain attention already separates the exemplars
        dp = np.sum((s - ex_maps[0]) ** 2, axis=-1)
        dn = np.sum((s - ex_maps[1]) ** 2, axis=-1)
        sat = float(np.mean(dp + cfg.alpha <= dn))

    if backward:
        dv = att.answer_backward(cls_weight * dz, v, f, params, grads)
        dp_att = att.attend_backward(dv, g)
        if spec.kind == "dcn":
            ds, dsp, dsn, dW1, dW2 = context_backward(dp_att, ccache, params.W_1, params.W_2, spec.dcn)
            ds_all[:B] += ds
            view = ds_all[B:].reshape(2, k, B, R)
            view[0] += dsp[None] / k
            view[1] += dsn[None] / k
            if dW1 is not None and "W_1" not in params.frozen:
                grads.W_1 += dW1
                grads.W_2 += dW2
        else:
            ds_all[:B] += dp_att
        att.attention_backward(ds_all, acache, params, grads)
        for name, a in grads.items():
            _finite(f"gradient of {name}", a)

    return BatchResult(
        loss=float(loss),
        grads=grads,
        probs=probs,
        maps=p_att,
        target_maps=s,
        cross=cross,
        metric=metric_val,
        triplet_sat=sat,
        extra=extra,
    )


def forward_backward(batch: Batch, params: att.ModelParams, spec: ModelSpec, cfg: LossConfig = LossConfig()):
    """Total loss and parameter gradients for one batch."""
    r = run_batch(batch, params, spec, cfg)
    return r.loss, r.grads


def predict(batch: Batch, params: att.ModelParams, spec: ModelSpec, cfg: LossConfig = LossConfig()) -> BatchResult:
    return run_batch(batch, params, spec, cfg, backward=False)
