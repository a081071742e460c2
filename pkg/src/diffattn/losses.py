"""Classification, triplet and quintuplet objectives over attention maps."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

__all__ = [
    "LossConfig",
    "PROB_FLOOR",
    "cross_entropy",
    "triplet_loss",
    "triplet_grads",
    "joint_loss",
    "quintuplet_terms",
    "quintuplet_loss",
    "quintuplet_grads",
]

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    nu: float = 10.0
    alpha: float = 0.2
    alpha1: float = 0.006
    alpha2: float = 0.2
    alpha3: float = 0.006
    lam: float = 1e-4
    # scale the cross-entropy by 1/C as in the joint objective; off gives the usual form
    ce_over_classes: bool = True

    def __post_init__(self):
        if min(self.alpha, self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ValueError("margins must be non-negative")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")


def cross_entropy(probs, label: int, C: int | None = None, *, over_classes: bool = True) -> float:
    """One-hot cross-entropy ``-(1/C) log probs[label]``.

    A zero probability is clamped to ``PROB_FLOOR`` (and logged) rather than
    returning infinity.
    """
    probs = np.asarray(probs, dtype=np.float64)
    C = probs.shape[0] if C is None else C
    if not 0 <= label < C:
        raise ValueError(f"label {label} out of range for {C} classes")
    p = probs[label]
    if p < PROB_FLOOR:
        log.warning("probability of label %d is %g; clamped to %g", label, p, PROB_FLOOR)
        p = PROB_FLOOR
    ce = -np.log(p)
    return float(ce / C) if over_classes else float(ce)


def _check3(s, sp, sn):
    s, sp, sn = (np.asarray(x, dtype=np.float64) for x in (s, sp, sn))
    if not (s.shape == sp.shape == sn.shape):
        raise ShapeError(f"triplet operands differ in shape: {s.shape}, {sp.shape}, {sn.shape}")
    return s, sp, sn


def triplet_loss(s, s_plus, s_minus, alpha: float = 0.2):
    """``max(0, |s - s+|^2 + alpha - |s - s-|^2)`` along the last axis."""
    s, sp, sn = _check3(s, s_plus, s_minus)
    margin = np.sum((s - sp) ** 2, axis=-1) + alpha - np.sum((s - sn) ** 2, axis=-1)
    out = np.maximum(0.0, margin)
    return float(out) if out.ndim == 0 else out


def triplet_grads(s, s_plus, s_minus, alpha: float = 0.2):
    """Closed-form gradients of :func:`triplet_loss`.

    When the hinge is active (margin term >= 0):
    ``d/ds+ = -2(s - s+)``, ``d/ds- = 2(s - s-)``, ``d/ds = 2(s- - s+)``.
    Otherwise all three are zero.  Works per-row on stacked inputs.
    """
    s, sp, sn = _check3(s, s_plus, s_minus)
    margin = np.sum((s - sp) ** 2, axis=-1) + alpha - np.sum((s - sn) ** 2, axis=-1)
    active = (margin >= 0.0)[..., None].astype(np.float64)
    g_s = active * 2.0 * (sn - sp)
    g_plus = active * -2.0 * (s - sp)
    g_minus = active * 2.0 * (s - sn)
    return g_s, g_plus, g_minus


def joint_loss(cross: float, triplet: float, nu: float = 10.0) -> float:
    """Per-sample joint objective ``cross + nu * triplet``."""
    return cross + nu * triplet


def _dist(a, b):
    return np.sum((a - b) ** 2, axis=-1)


def quintuplet_terms(a, p_plus, p_plusplus, n_minusminus, n_minus, cfg: LossConfig):
    """The three hinge slacks (eps, chi, phi) at their minimal feasible values."""
    arrs = [np.asarray(x, dtype=np.float64) for x in (a, p_plus, p_plusplus, n_minusminus, n_minus)]
    if len({x.shape for x in arrs}) != 1:
        raise ShapeError(f"quintuplet operands differ in shape: {[x.shape for x in arrs]}")
    a, pp, ppp, nmm, nm = arrs
    d1, d2, d3, d4 = _dist(a, pp), _dist(a, ppp), _dist(a, nmm), _dist(a, nm)
    eps = np.maximum(0.0, cfg.alpha1 + d1 - d2)
    chi = np.maximum(0.0, cfg.alpha2 + d2 - d3)
    phi = np.maximum(0.0, cfg.alpha3 + d3 - d4)
    return eps, chi, phi


def quintuplet_loss(a, p_plus, p_plusplus, n_minusminus, n_minus, cfg: LossConfig, theta_norm_sq: float = 0.0):
    """Hinge sum ``eps + chi + phi + lam * |theta|^2``.

    ``theta_norm_sq`` is the squared norm of the regularised parameters;
    the regulariser is added once, not per row, when inputs are stacked.
    """
    eps, chi, phi = quintuplet_terms(a, p_plus, p_plusplus, n_minusminus, n_minus, cfg)
    total = eps + chi + phi
    if np.ndim(total) == 0:
        return float(total + cfg.lam * theta_norm_sq)
    return total


def quintuplet_grads(a, p_plus, p_plusplus, n_minusminus, n_minus, cfg: LossConfig):
    """Subgradients of the hinge sum w.r.t. the five operands (regulariser excluded)."""
    a, pp, ppp, nmm, nm = (np.asarray(x, dtype=np.float64) for x in (a, p_plus, p_plusplus, n_minusminus, n_minus))
    d1, d2, d3, d4 = _dist(a, pp), _dist(a, ppp), _dist(a, nmm), _dist(a, nm)
    e = (cfg.alpha1 + d1 - d2 >= 0.0)[..., None].astype(np.float64)
    c = (cfg.alpha2 + d2 - d3 >= 0.0)[..., None].astype(np.float64)
    f = (cfg.alpha3 + d3 - d4 >= 0.0)[..., None].astype(np.float64)
    # dD(a, x)/da = 2(a - x), dD(a, x)/dx = -2(a - x)
    ga = 2.0 * (e * ((a - pp) - (a - ppp)) + c * ((a - ppp) - (a - nmm)) + f * ((a - nmm) - (a - nm)))
    g_pp = -2.0 * e * (a - pp)
    g_ppp = 2.0 * e * (a - ppp) - 2.0 * c * (a - ppp)
    g_nmm = 2.0 * c * (a - nmm) - 2.0 * f * (a - nmm)
    g_nm = 2.0 * f * (a - nm)
    return ga, g_pp, g_ppp, g_nmm, g_nm
