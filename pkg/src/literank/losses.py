"""Distillation and supervised losses over one query's candidate list.

Index 0 is the positive document; the remaining entries are negatives. Each
``*_grad`` returns the gradient of the loss with respect to the student scores.
"""

from __future__ import annotations

import numpy as np

from literank.errors import ContractError, ShapeError

LOSSES = ("kl", "margin-mse", "xent", "mse")


def _pair(t, s) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(t, dtype=np.float64).ravel()
    s = np.asarray(s, dtype=np.float64).ravel()
    if t.size != s.size:
        raise ShapeError(f"teacher has {t.size} scores, student has {s.size}")
    if s.size < 2:
        raise ContractError("a scored list needs at least two documents")
    return t, s


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def log_softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max()
    return shifted - np.log(np.exp(shifted).sum())


def margin_mse(t, s) -> float:
    """``sum_i ((t_0 - t_i) - (s_0 - s_i))^2`` over the negatives ``i >= 1``."""
    t, s = _pair(t, s)
    r = (t[0] - t[1:]) - (s[0] - s[1:])
    return float((r**2).sum())


def margin_mse_grad(t, s) -> np.ndarray:
    t, s = _pair(t, s)
    r = (t[0] - t[1:]) - (s[0] - s[1:])
    g = np.empty_like(s)
    g[0] = -2.0 * r.sum()
    g[1:] = 2.0 * r
    return g


def kl_loss(t, s) -> float:
    """KL(softmax(t) || softmax(s))."""
    t, s = _pair(t, s)
    log_pt = log_softmax(t)
    return float((np.exp(log_pt) * (log_pt - log_softmax(s))).sum())


def kl_loss_grad(t, s) -> np.ndarray:
    t, s = _pair(t, s)
    return softmax(s) - softmax(t)


def cross_entropy(s, positive_index: int = 0) -> float:
    s = np.asarray(s, dtype=np.float64).ravel()
    if not 0 <= positive_index < s.size:
        raise ContractError(f"positive index {positive_index} out of range for {s.size} scores")
    return float(-log_softmax(s)[positive_index])


def cross_entropy_grad(s, positive_index: int = 0) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64).ravel()
    if not 0 <= positive_index < s.size:
        raise ContractError(f"positive index {positive_index} out of range for {s.size} scores")
    g = softmax(s)
    g[positive_index] -= 1.0
    return g


def loss_and_grad(kind: str, student, teacher=None) -> tuple[float, np.ndarray]:
    """Dispatch by loss name.

    ``mse`` is pointwise regression ``sum_i (s_i - t_i)^2``; it is used for the
    synthetic trace task, where targets are exact scores rather than margins.
    """
    if kind == "xent":
        return cross_entropy(student, 0), cross_entropy_grad(student, 0)
    if teacher is None:
        raise ContractError(f"loss {kind!r} needs teacher scores")
    if kind == "kl":
        return kl_loss(teacher, student), kl_loss_grad(teacher, student)
    if kind == "margin-mse":
        return margin_mse(teacher, student), margin_mse_grad(teacher, student)
    if kind == "mse":
        t = np.asarray(teacher, dtype=np.float64).ravel()
        s = np.asarray(student, dtype=np.float64).ravel()
        if t.size != s.size:
            raise ShapeError(f"teacher has {t.size} scores, student has {s.size}")
        r = s - t
        return float(r @ r), 2.0 * r
    raise ContractError(f"unknown loss {kind!r}; expected one of {LOSSES}")
