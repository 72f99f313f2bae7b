"""Training objectives.

Three pieces: the answer loss (negative log of the probability mass on all
occurrences of the answer token), the attention-supervision loss (mean over
supervised rows of the negative log target mass, each row weighted by its
target count), and the combined objective

    total = answer_loss + lambda * sum(supervision losses).

Batch-level losses are the mean over instances of per-instance losses, so the
lambda weight keeps its meaning at any batch size. Log arguments are floored
at PROB_FLOOR to keep early training finite; the floor's gradient is zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .supervision import SupervisionMatrix
from .tensor import Tensor

PROB_FLOOR = 1e-12


@dataclass
class LossBreakdown:
    """Scalar loss components of one step, for logging and tests."""

    answer_loss: float
    supervision_losses: dict[str, float]
    lambda_weight: float
    total: float

    def to_obj(self):
        return {
            "answer_loss": self.answer_loss,
            "supervision_losses": dict(sorted(self.supervision_losses.items())),
            "lambda": self.lambda_weight,
            "total": self.total,
        }


def _positions_mask(shape, positions) -> np.ndarray:
    mask = np.zeros(shape)
    if len(shape) == 1:
        if len(positions) == 0:
            raise ValueError("answer_loss: empty answer position set")
        mask[list(positions)] = 1.0
    else:
        for b, pos in enumerate(positions):
            if len(pos) == 0:
                raise ValueError(f"answer_loss: empty answer position set at instance {b}")
            mask[b, list(pos)] = 1.0
    return mask


def answer_loss(answer_probs: Tensor, answer_positions) -> Tensor:
    """-log of the summed probability over the answer's occurrences.

    ``answer_probs`` is (n,) with an index collection, or (B, n) with one
    index collection per instance (the batch loss is the instance mean).
    """
    probs = answer_probs if isinstance(answer_probs, Tensor) else Tensor(answer_probs)
    mask = _positions_mask(probs.shape, answer_positions)
    mass = T.sum_over_axis(T.mul(probs, Tensor(mask)), axis=-1 if probs.ndim > 1 else None)
    nll = T.scale(T.log(T.clamp_min(mass, PROB_FLOOR)), -1.0)
    if probs.ndim == 1:
        return nll
    return T.mean_over_axis(nll, None)


def supervision_loss(A: Tensor, S, unweighted: bool = False) -> Tensor:
    """Mean over supervised rows of -log(attention mass on the row's targets),
    each row weighted by its number of targets.

    ``A`` is a row-stochastic (n, n) attention matrix with a single
    SupervisionMatrix, or (B, n, n) with a list of SupervisionMatrix (padded
    rows simply carry no targets). Rows without targets contribute nothing;
    a matrix with no supervised rows yields exactly 0 with no gradient.
    ``unweighted`` drops the per-row target-count factor.
    """
    A = A if isinstance(A, Tensor) else Tensor(A)
    if isinstance(S, SupervisionMatrix):
        mats = [S]
        A3 = T.reshape(A, (1,) + A.shape)
    else:
        mats = list(S)
        A3 = A
    B, n, n2 = A3.shape
    if n != n2 or len(mats) != B:
        raise T.ShapeError(
            f"supervision_loss: attention {A.shape} with {len(mats)} matrices"
        )
    dense = np.zeros((B, n, n))
    for b, m in enumerate(mats):
        if m.n > n:
            raise T.ShapeError(
                f"supervision_loss: matrix of size {m.n} exceeds attention size {n}"
            )
        dense[b, : m.n, : m.n] = m.dense()
    mass = T.sum_over_axis(T.mul(A3, Tensor(dense)), axis=2)  # (B, n)
    nll = T.scale(T.log(T.clamp_min(mass, PROB_FLOOR)), -1.0)
    weights = dense.sum(axis=2) if not unweighted else (dense.sum(axis=2) > 0).astype(float)
    per_row = T.mul(nll, Tensor(weights))
    per_instance = T.sum_over_axis(per_row, axis=1)  # (B,)
    inv_k = np.array([1.0 / max(m.k, 1) for m in mats])
    scaled = T.mul(per_instance, Tensor(inv_k))
    return T.mean_over_axis(scaled, None)


def total_loss(answer: Tensor, supervision: dict[str, Tensor], lambda_weight: float):
    """Combine the components; returns (scalar Tensor, LossBreakdown).

    Rejects non-finite components by name. The breakdown reports plain floats
    with tiny negative rounding residues floored at zero.
    """
    a = float(answer.data)
    if not np.isfinite(a):
        raise ValueError(f"total_loss: non-finite answer_loss ({a})")
    sup_vals = {}
    for kind, t in supervision.items():
        v = float(t.data)
        if not np.isfinite(v):
            raise ValueError(f"total_loss: non-finite supervision loss {kind!r} ({v})")
        sup_vals[kind] = max(v, 0.0)
    total = answer
    for t in supervision.values():
        total = T.add(total, T.scale(t, lambda_weight))
    breakdown = LossBreakdown(
        answer_loss=max(a, 0.0),
        supervision_losses=sup_vals,
        lambda_weight=lambda_weight,
        total=max(float(total.data), 0.0),
    )
    return total, breakdown


def target_mass(A: np.ndarray, S: SupervisionMatrix):
    """Attention mass on the gold target columns, per supervised row.

    Returns (per_row, mean): per_row maps row index to its target mass; mean
    is the average over supervised rows, or None when the matrix has none.
    """
    A = A.data if isinstance(A, Tensor) else np.asarray(A)
    per_row = {}
    for i, cols in S.rows.items():
        per_row[i] = float(A[i, cols].sum())
    if not per_row:
        return per_row, None
    return per_row, float(np.mean(list(per_row.values())))
