"""Differential context: projection-based supporting/opposing context and
the Add/Mul combination with the target attention map.

The combined map is renormalised to a distribution so that attending with
it stays a convex combination of region features; the raw, unnormalised
map is available from :func:`context_forward` via ``normalize=False``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

__all__ = [
    "DcnConfig",
    "project",
    "reject",
    "supporting_context",
    "opposing_context",
    "differential_context",
    "context_forward",
    "context_backward",
    "ContextCache",
    "CLAMP",
]

CLAMP = 1e-12


@dataclass(frozen=True)
class DcnConfig:
    """Combination settings.

    mode
        ``"add"`` or ``"mul"``.
    scaling
        ``"fixed"`` (scalar weights frozen at 1), ``"diag"`` (one learned
        weight per region) or ``"full"`` (learned R x R matrices).
    mul_identity
        Mul combines as ``s * (1 + t)``; ``False`` gives the bare ``s * t``.
    support_difference
        Supporting context as projection of s+ minus projection of s-
        instead of their sum.
    plain_difference
        Use ``r+ - r-`` directly (no tanh, no scaling weights).
    """

    mode: str = "mul"
    scaling: str = "diag"
    mul_identity: bool = True
    support_difference: bool = False
    plain_difference: bool = False

    def __post_init__(self):
        if self.mode not in ("add", "mul"):
            raise ValueError(f"unknown DCN mode {self.mode!r}")
        if self.scaling not in ("fixed", "diag", "full"):
            raise ValueError(f"unknown DCN scaling {self.scaling!r}")


def _norm_sq(s: np.ndarray) -> np.ndarray:
    n2 = np.sum(s * s, axis=-1, keepdims=True)
    if np.any(n2 == 0.0):
        raise ZeroDivisionError("projection onto a zero vector")
    return n2


def project(v, s) -> np.ndarray:
    """Vector projection of ``v`` onto ``s``: ``(s . v) s / |s|^2``."""
    v = np.asarray(v, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if v.shape != s.shape:
        raise ShapeError(f"project: shapes {v.shape} and {s.shape} differ")
    return np.sum(s * v, axis=-1, keepdims=True) * s / _norm_sq(s)


def reject(v, s) -> np.ndarray:
    """Component of ``v`` orthogonal to ``s``."""
    return np.asarray(v, dtype=np.float64) - project(v, s)


def supporting_context(s, s_plus, s_minus, *, difference: bool = False) -> np.ndarray:
    """Sum of the projections of both exemplar maps onto ``s``.

    ``difference=True`` subtracts the opposing projection instead.
    """
    pp = project(s_plus, s)
    pn = project(s_minus, s)
    return pp - pn if difference else pp + pn


def opposing_context(s, s_plus, s_minus) -> np.ndarray:
    """Sum of the rejections of both exemplar maps from ``s``."""
    return reject(s_plus, s) + reject(s_minus, s)


@dataclass
class ContextCache:
    s: np.ndarray
    sp: np.ndarray
    sn: np.ndarray
    n2: np.ndarray
    cp: np.ndarray
    cn: np.ndarray
    rp: np.ndarray
    rn: np.ndarray
    t: np.ndarray
    raw: np.ndarray
    m: np.ndarray
    msum: np.ndarray
    d: np.ndarray
    shift_idx: np.ndarray | None  # per-row argmin used by the Add shift, -1 if unshifted


def _apply(W: np.ndarray, r: np.ndarray) -> np.ndarray:
    if W.ndim == 2:
        return r @ W.T
    return W * r


def context_forward(s, sp, sn, W_1, W_2, cfg: DcnConfig, *, normalize: bool = True):
    """Batched differential-context attention.

    Inputs are (B, R) maps; returns ``(d, cache)``.  ``d`` rows sum to one
    when ``normalize`` is set.
    """
    s, sp, sn = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (s, sp, sn))
    if not (s.shape == sp.shape == sn.shape):
        raise ShapeError(f"context maps differ in shape: {s.shape}, {sp.shape}, {sn.shape}")
    n2 = _norm_sq(s)
    cp = np.sum(s * sp, axis=1, keepdims=True) / n2
    cn = np.sum(s * sn, axis=1, keepdims=True) / n2
    proj_p, proj_n = cp * s, cn * s
    rp = proj_p - proj_n if cfg.support_difference else proj_p + proj_n
    rn = sp + sn - proj_p - proj_n
    if cfg.plain_difference:
        t = rp - rn
    else:
        t = np.tanh(_apply(W_1, rp) - _apply(W_2, rn))
    if cfg.mode == "mul":
        raw = s * (1.0 + t) if cfg.mul_identity else s * t
    else:
        raw = s + t
    shift_idx = None
    if not normalize:
        m = raw
    elif cfg.mode == "mul":
        m = np.maximum(raw, CLAMP)
    else:
        lo = raw.min(axis=1)
        shift_idx = np.where(lo < 0.0, raw.argmin(axis=1), -1)
        shift = np.where(lo < 0.0, lo - CLAMP, 0.0)
        m = raw - shift[:, None]
    msum = m.sum(axis=1, keepdims=True)
    if normalize:
        if np.any(~np.isfinite(msum)) or np.any(msum <= 0.0):
            raise FloatingPointError("differential context map vanished after clamping")
        d = m / msum
    else:
        d = m
    return d, ContextCache(s, sp, sn, n2, cp, cn, rp, rn, t, raw, m, msum, d, shift_idx)


def context_backward(dd: np.ndarray, c: ContextCache, W_1, W_2, cfg: DcnConfig):
    """Backward of :func:`context_forward` (normalised form).

    Returns ``(ds, dsp, dsn, dW_1, dW_2)``; the weight gradients are ``None``
    under ``plain_difference``.
    """
    dm = (dd - np.sum(dd * c.d, axis=1, keepdims=True)) / c.msum
    if cfg.mode == "mul":
        draw = dm * (c.raw > CLAMP)
    else:
        draw = dm.copy()
        rows = np.nonzero(c.shift_idx >= 0)[0]
        draw[rows, c.shift_idx[rows]] -= dm[rows].sum(axis=1)
    if cfg.mode == "mul":
        ds = draw * (1.0 + c.t) if cfg.mul_identity else draw * c.t
        dt = draw * c.s
    else:
        ds = draw.copy()
        dt = draw
    dW_1 = dW_2 = None
    if cfg.plain_difference:
        drp, drn = dt, -dt
    else:
        du = dt * (1.0 - c.t * c.t)
        if W_1.ndim == 2:
            dW_1 = du.T @ c.rp
            dW_2 = -(du.T @ c.rn)
            drp = du @ W_1
            drn = -(du @ W_2)
        else:
            g1 = du * c.rp
            g2 = -du * c.rn
            if W_1.shape[0] == 1:
                dW_1, dW_2 = np.array([g1.sum()]), np.array([g2.sum()])
            else:
                dW_1, dW_2 = g1.sum(axis=0), g2.sum(axis=0)
            drp = du * W_1
            drn = -du * W_2
    sign = -1.0 if cfg.support_difference else 1.0
    dproj_p = drp - drn
    dproj_n = sign * drp - drn
    dsp = drn.copy()
    dsn = drn.copy()
    s, n2 = c.s, c.n2
    for dproj, coef, x, dx in ((dproj_p, c.cp, c.sp, dsp), (dproj_n, c.cn, c.sn, dsn)):
        a = np.sum(dproj * s, axis=1, keepdims=True)  # dL/dcoef
        ds += coef * dproj + a * (x / n2 - 2.0 * coef * s / n2)
        dx += a * s / n2
    return ds, dsp, dsn, dW_1, dW_2


def differential_context(s, r_plus, r_minus, W_1=1.0, W_2=1.0, cfg: DcnConfig | None = None, *, normalize: bool = True):
    """Combine a single attention map ``s`` with precomputed contexts.

    ``t = tanh(W_1 r+ - W_2 r-)``; Mul gives ``s * (1 + t)``, Add gives
    ``s + t``; the result is clamped/shifted to be positive and
    L1-normalised unless ``normalize`` is false.
    """
    cfg = cfg or DcnConfig()
    s, rp, rn = (np.asarray(x, dtype=np.float64) for x in (s, r_plus, r_minus))
    if not (s.shape == rp.shape == rn.shape):
        raise ShapeError(f"differential_context: shapes {s.shape}, {rp.shape}, {rn.shape}")
    W_1 = np.atleast_1d(np.asarray(W_1, dtype=np.float64))
    W_2 = np.atleast_1d(np.asarray(W_2, dtype=np.float64))
    t = rp - rn if cfg.plain_difference else np.tanh(_apply(W_1, rp) - _apply(W_2, rn))
    if cfg.mode == "mul":
        raw = s * (1.0 + t) if cfg.mul_identity else s * t
        if not normalize:
            return raw
        m = np.maximum(raw, CLAMP)
    else:
        raw = s + t
        if not normalize:
            return raw
        lo = raw.min()
        m = raw - (lo - CLAMP) if lo < 0.0 else raw
    total = m.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise FloatingPointError("differential context map vanished after clamping")
    return m / total
