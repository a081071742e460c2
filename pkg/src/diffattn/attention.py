"""Question-guided soft attention over image regions and the answer head.

Every layer comes as a forward function plus a hand-written backward.  The
batched forms take image features ``g`` of shape ``(B, R, D)`` and question
embeddings ``f`` of shape ``(B, D)``; the single-item wrappers accept
``(R, D)`` / ``(D,)`` and return unbatched results.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .tensor import ShapeError, softmax

__all__ = [
    "ModelParams",
    "init_params",
    "AttentionCache",
    "attention_forward",
    "attention_backward",
    "attention_map",
    "attend",
    "attend_backward",
    "answer_logits",
    "answer_backward",
]


@dataclass
class ModelParams:
    """All learnable weights.

    ``W_1``/``W_2`` are the differential-context scalings; they are ``None``
    for models without that pathway.  Shapes: ``W_I``, ``W_Q``: (D, A);
    ``b_q``: (A,); ``W_P``: (A, 1); ``b_P``: (1,); ``W_A``: (D, C);
    ``b_A``: (C,); ``W_1``, ``W_2``: (1,), (R,) or (R, R).
    """

    W_I: np.ndarray
    W_Q: np.ndarray
    b_q: np.ndarray
    W_P: np.ndarray
    b_P: np.ndarray
    W_A: np.ndarray
    b_A: np.ndarray
    W_1: np.ndarray | None = None
    W_2: np.ndarray | None = None
    # names of blocks the optimizer must not touch (fixed DCN scalings)
    frozen: frozenset = field(default_factory=frozenset)

    def names(self) -> list[str]:
        return [f.name for f in fields(self) if f.name != "frozen" and getattr(self, f.name) is not None]

    def trainable(self) -> list[str]:
        return [n for n in self.names() if n not in self.frozen]

    def items(self):
        for n in self.names():
            yield n, getattr(self, n)

    def copy(self) -> "ModelParams":
        kw = {n: a.copy() for n, a in self.items()}
        return ModelParams(**kw, frozen=self.frozen)

    def zeros_like(self) -> "ModelParams":
        kw = {n: np.zeros_like(a) for n, a in self.items()}
        return ModelParams(**kw, frozen=self.frozen)

    def norm_sq(self) -> float:
        return float(sum(np.sum(getattr(self, n) ** 2) for n in self.trainable()))

    @property
    def dims(self) -> tuple[int, int, int]:
        """(D, A, C)."""
        return self.W_I.shape[0], self.W_I.shape[1], self.W_A.shape[1]

    def check_finite(self) -> None:
        for n, a in self.items():
            if not np.all(np.isfinite(a)):
                raise FloatingPointError(f"non-finite values in parameter {n}")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(
    D: int,
    A: int,
    C: int,
    rng: np.random.Generator,
    *,
    R: int | None = None,
    dcn_scaling: str | None = None,
) -> ModelParams:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.

    ``dcn_scaling`` selects the context scaling weights: ``None`` (no DCN
    pathway), ``"fixed"`` (scalar 1.0, frozen), ``"diag"`` (one weight per
    region, initialised to 1) or ``"full"`` (R x R identity init).
    """
    p = ModelParams(
        W_I=_uniform(rng, (D, A), D),
        W_Q=_uniform(rng, (D, A), D),
        b_q=_uniform(rng, (A,), D),
        W_P=_uniform(rng, (A, 1), A),
        b_P=_uniform(rng, (1,), A),
        W_A=_uniform(rng, (D, C), D),
        b_A=_uniform(rng, (C,), D),
    )
    if dcn_scaling is None:
        return p
    if dcn_scaling == "fixed":
        p.W_1, p.W_2 = np.ones(1), np.ones(1)
        p.frozen = frozenset({"W_1", "W_2"})
    elif dcn_scaling == "diag":
        if R is None:
            raise ValueError("diagonal DCN scaling needs the region count R")
        p.W_1, p.W_2 = np.ones(R), np.ones(R)
    elif dcn_scaling == "full":
        if R is None:
            raise ValueError("full DCN scaling needs the region count R")
        p.W_1, p.W_2 = np.eye(R), np.eye(R)
    else:
        raise ValueError(f"unknown DCN scaling {dcn_scaling!r}")
    return p


@dataclass
class AttentionCache:
    g: np.ndarray  # (B, R, D)
    f: np.ndarray  # (B, D)
    h: np.ndarray  # (B, R, A)
    s: np.ndarray  # (B, R)


def _check_gf(g: np.ndarray, f: np.ndarray, p: ModelParams) -> None:
    D = p.W_I.shape[0]
    if g.ndim != 3 or g.shape[2] != D:
        raise ShapeError(f"image features must be (B, R, {D}), got {g.shape}")
    if f.shape != (g.shape[0], D):
        raise ShapeError(f"question embeddings must be ({g.shape[0]}, {D}), got {f.shape}")


def attention_forward(g: np.ndarray, f: np.ndarray, p: ModelParams) -> tuple[np.ndarray, AttentionCache]:
    """Attention distribution over regions for a batch.

    ``h = tanh(g W_I + (f W_Q + b_q))`` with the question term broadcast over
    regions, ``logits = h W_P + b_P``, ``s = softmax(logits)`` per item.
    """
    _check_gf(g, f, p)
    q = f @ p.W_Q + p.b_q  # (B, A)
    h = np.tanh(g @ p.W_I + q[:, None, :])
    # b_P shifts every region's logit equally and cancels in the softmax,
    # so it is left out of the sum to keep its gradient exactly zero.
    logits = h @ p.W_P[:, 0]
    s = softmax(logits, axis=1)
    return s, AttentionCache(g, f, h, s)


def attention_backward(ds: np.ndarray, cache: AttentionCache, p: ModelParams, grads: ModelParams) -> None:
    """Accumulate parameter gradients of the attention layer into ``grads``."""
    s, h = cache.s, cache.h
    dlogits = s * (ds - np.sum(ds * s, axis=1, keepdims=True))  # (B, R)
    grads.W_P[:, 0] += np.einsum("bra,br->a", h, dlogits)
    grads.b_P[0] += dlogits.sum()
    dpre = dlogits[:, :, None] * p.W_P[:, 0][None, None, :] * (1.0 - h * h)  # (B, R, A)
    B, R, A = dpre.shape
    D = cache.g.shape[2]
    grads.W_I += cache.g.reshape(B * R, D).T @ dpre.reshape(B * R, A)
    dq = dpre.sum(axis=1)  # (B, A)
    grads.W_Q += cache.f.T @ dq
    grads.b_q += dq.sum(axis=0)


def attention_map(g: np.ndarray, f: np.ndarray, p: ModelParams) -> np.ndarray:
    """Attention map for a single item: ``g`` is (R, D), ``f`` is (D,)."""
    g = np.asarray(g, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if g.ndim != 2 or f.ndim != 1:
        raise ShapeError(f"attention_map expects (R, D) and (D,), got {g.shape} and {f.shape}")
    s, _ = attention_forward(g[None], f[None], p)
    return s[0]


def attend(g: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Attention-weighted sum of region rows.

    Works on a single item (``g``: (R, D), ``s``: (R,)) or a batch
    (``g``: (B, R, D), ``s``: (B, R)).
    """
    g = np.asarray(g, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if g.shape[:-1] != s.shape:
        raise ShapeError(f"attend: map of shape {s.shape} does not match features {g.shape}")
    return np.einsum("...r,...rd->...d", s, g)


def attend_backward(dv: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the attention weights given dL/dv."""
    return np.einsum("...d,...rd->...r", dv, g)


def answer_logits(v_att: np.ndarray, f: np.ndarray, p: ModelParams) -> np.ndarray:
    """Class logits ``(v_att + f) W_A + b_A`` (additive fusion)."""
    v_att = np.asarray(v_att, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if v_att.shape != f.shape or v_att.shape[-1] != p.W_A.shape[0]:
        raise ShapeError(f"answer_logits: v_att {v_att.shape}, f {f.shape}, W_A {p.W_A.shape}")
    return (v_att + f) @ p.W_A + p.b_A


def answer_backward(dz: np.ndarray, v_att: np.ndarray, f: np.ndarray, p: ModelParams, grads: ModelParams) -> np.ndarray:
    """Accumulate W_A/b_A gradients; return dL/dv_att. Batched inputs."""
    grads.W_A += (v_att + f).T @ dz
    grads.b_A += dz.sum(axis=0)
    return dz @ p.W_A.T
