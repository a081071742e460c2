"""Answer accuracy against annotator sets and rank agreement of attention maps."""
from __future__ import annotations

import re
import string

import numpy as np

__all__ = [
    "vqa_accuracy",
    "dataset_accuracy",
    "normalize_answer",
    "downscale_attention",
    "average_ranks",
    "rank_correlation",
    "rank_correlation_rows",
    "average_ranks_rows",
]

_NUMBERS = {
    "zero": "0",
    "one": "1",
    "two": "2",
    "three": "3",
    "four": "4",
    "five": "5",
    "six": "6",
    "seven": "7",
    "eight": "8",
    "nine": "9",
    "ten": "10",
}
_ARTICLES = {"a", "an", "the"}
_PUNCT = re.compile("[" + re.escape(string.punctuation) + "]")


def normalize_answer(raw: str) -> str:
    """Lowercase, strip punctuation and articles, spell numbers as digits."""
    text = _PUNCT.sub(" ", raw.lower())
    words = [_NUMBERS.get(w, w) for w in text.split() if w not in _ARTICLES]
    return " ".join(words)


def vqa_accuracy(pred, answers) -> float:
    """``min(#annotators agreeing with pred / 3, 1)``.

    String answers are compared after :func:`normalize_answer`.
    """
    answers = list(answers)
    if isinstance(pred, str):
        p = normalize_answer(pred)
        matches = sum(normalize_answer(str(a)) == p for a in answers)
    else:
        matches = sum(int(a) == int(pred) for a in answers)
    return min(matches / 3.0, 1.0)


def dataset_accuracy(preds, annotations) -> float:
    """Mean per-item accuracy for integer predictions ``(N,)`` and annotator sets ``(N, 10)``."""
    preds = np.asarray(preds)
    annotations = np.asarray(annotations)
    if len(preds) == 0:
        return float("nan")
    matches = (annotations == preds[:, None]).sum(axis=1)
    return float(np.minimum(matches / 3.0, 1.0).mean())


def downscale_attention(ref, target_side: int = 14) -> np.ndarray:
    """Block-average an (H, W) map down to ``target_side`` x ``target_side``.

    Blocks are ``floor`` partitions of each axis, so sizes that are not
    multiples of ``target_side`` get blocks differing by one cell.  The
    result is flattened row-major and L1-normalised.
    """
    ref = np.asarray(ref, dtype=np.float64)
    if ref.ndim != 2:
        raise ValueError(f"reference attention must be 2-D, got {ref.shape}")
    H, W = ref.shape
    if H < target_side or W < target_side:
        raise ValueError(f"cannot downscale {H}x{W} to {target_side}x{target_side}")
    if not np.all(np.isfinite(ref)) or np.any(ref < 0) or not ref.any():
        raise ValueError("reference attention must be finite, non-negative and not all zero")
    rb = np.linspace(0, H, target_side + 1).astype(int)
    cb = np.linspace(0, W, target_side + 1).astype(int)
    out = np.empty((target_side, target_side))
    for i in range(target_side):
        for j in range(target_side):
            out[i, j] = ref[rb[i] : rb[i + 1], cb[j] : cb[j + 1]].mean()
    out = out.ravel()
    return out / out.sum()


def average_ranks(x) -> np.ndarray:
    """Ranks 1..N by *descending* value; tied values share their mean rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(-x, kind="stable")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    n = len(x)
    while i < n:
        j = i
        while j + 1 < n and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def rank_correlation(p, q) -> float:
    """``1 - 6 * sum(D^2) / (N^3 - N)`` with D the per-element rank difference."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ValueError(f"rank_correlation: lengths {p.size} and {q.size} differ")
    n = p.size
    if n < 2:
        raise ValueError("rank_correlation needs at least two elements")
    d = average_ranks(p) - average_ranks(q)
    return float(1.0 - 6.0 * np.sum(d * d) / (n**3 - n))


def average_ranks_rows(X) -> np.ndarray:
    """Row-wise :func:`average_ranks` for an (M, N) array."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    M, N = X.shape
    order = np.argsort(-X, axis=1, kind="stable")
    xs = np.take_along_axis(X, order, axis=1)
    pos = np.broadcast_to(np.arange(N), (M, N))
    new_group = np.ones((M, N), dtype=bool)
    new_group[:, 1:] = xs[:, 1:] != xs[:, :-1]
    last = np.ones((M, N), dtype=bool)
    last[:, :-1] = new_group[:, 1:]
    first_pos = np.maximum.accumulate(np.where(new_group, pos, 0), axis=1)
    last_pos = np.minimum.accumulate(np.where(last, pos, N - 1)[:, ::-1], axis=1)[:, ::-1]
    ranks = np.empty((M, N))
    np.put_along_axis(ranks, order, (first_pos + last_pos) / 2.0 + 1.0, axis=1)
    return ranks


def rank_correlation_rows(P, Q) -> np.ndarray:
    """Row-wise :func:`rank_correlation` for (M, N) arrays."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if P.shape != Q.shape:
        raise ValueError(f"rank_correlation_rows: shapes {P.shape} and {Q.shape} differ")
    n = P.shape[1]
    if n < 2:
        raise ValueError("rank_correlation needs at least two elements")
    d = average_ranks_rows(P) - average_ranks_rows(Q)
    return 1.0 - 6.0 * np.sum(d * d, axis=1) / (n**3 - n)
