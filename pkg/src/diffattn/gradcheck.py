"""Central finite-difference check of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import init_params
from .losses import LossConfig
from .model import Batch, ModelSpec, run_batch

__all__ = ["GradCheckResult", "random_instance", "check_gradients", "grad_check"]


@dataclass
class GradCheckResult:
    model: str
    seed: int
    errors: dict  # parameter block -> relative error

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    def passed(self, tol: float) -> bool:
        return self.max_error <= tol


def random_instance(spec: ModelSpec, seed: int, *, R=8, D=16, A=8, C=4, B=3, k=2):
    """Random parameters and batch for one model.

    The attention projection is scaled up so the maps are far from uniform,
    and trainable DCN scalings are randomised away from their identity init.
    """
    rng = np.random.default_rng(seed)
    p = init_params(D, A, C, rng, R=R, dcn_scaling=spec.dcn_scaling)
    p.W_P *= 3.0
    if p.W_1 is not None and "W_1" not in p.frozen:
        p.W_1 = rng.normal(size=p.W_1.shape)
        p.W_2 = rng.normal(size=p.W_2.shape)
    batch = Batch(
        rng.normal(size=(B, R, D)),
        rng.normal(size=(B, D)),
        rng.integers(0, C, B),
        rng.normal(size=(B, k, R, D)),
        rng.normal(size=(B, k, R, D)),
        rng.normal(size=(B, 4, R, D)),
    )
    return p, batch


def check_gradients(batch: Batch, params, spec: ModelSpec, cfg: LossConfig = LossConfig(), eps: float = 1e-5) -> dict:
    """Relative error per trainable block.

    The error of a block is the largest element-wise
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    grads = run_batch(batch, params, spec, cfg).grads
    out = {}
    for name in params.trainable():
        a = getattr(params, name)
        ga = getattr(grads, name)
        num = np.zeros_like(a)
        for i in np.ndindex(a.shape):
            orig = a[i]
            a[i] = orig + eps
            lp = run_batch(batch, params, spec, cfg, backward=False).loss
            a[i] = orig - eps
            lm = run_batch(batch, params, spec, cfg, backward=False).loss
            a[i] = orig
            num[i] = (lp - lm) / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(num)), 1e-8)
        out[name] = float((np.abs(ga - num) / denom).max())
    return out


def grad_check(model: str, samples: int = 5, seed: int = 0, **dims) -> list[GradCheckResult]:
    """Run :func:`check_gradients` on ``samples`` seeded random instances."""
    spec = ModelSpec.from_name(model)
    cfg = LossConfig()
    results = []
    for s in range(seed, seed + samples):
        p, b = random_instance(spec, s, **dims)
        results.append(GradCheckResult(model, s, check_gradients(b, p, spec, cfg)))
    return results
