"""Distance functions and the three pre-training objectives.

The Siamese term averages negative cosine similarity between each branch's
prediction and the *stop-gradiented* latent code of the other branch; the
reconstruction term averages per-element squared error of both decoded views
against their target; the combined objective is their convex combination
weighted by ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import Tensor, ShapeError, clamp_min, mean, mul, scale, sqrt, stop_gradient, tensor_sum

NCS_EPS = 1e-8


@dataclass
class LossBreakdown:
    """Scalar loss values for one step; absent terms are None."""

    total: float
    l_si: float | None = None
    l_dae: float | None = None
    w: float | None = None


def ncs_distance(a: Tensor, b: Tensor) -> Tensor:
    """Batch-mean negative cosine similarity between rows of a and b."""
    if a.shape != b.shape or a.data.ndim != 2 or a.shape[1] < 1:
        raise ShapeError(f"ncs_distance: shapes {a.shape} and {b.shape} do not conform")
    dot = tensor_sum(mul(a, b), axis=1)
    ss_a = tensor_sum(mul(a, a), axis=1)
    ss_b = tensor_sum(mul(b, b), axis=1)
    # max(|a||b|, eps) == sqrt(max(|a|^2 |b|^2, eps^2)); clamping before the
    # sqrt keeps the gradient finite for near-zero rows.
    denom = sqrt(clamp_min(mul(ss_a, ss_b), NCS_EPS * NCS_EPS))
    return scale(mean(dot / denom), -1.0)


def mse_distance(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference over all elements."""
    if a.shape != b.shape:
        raise ShapeError(f"mse_distance: shapes {a.shape} and {b.shape} do not conform")
    diff = a - b
    return mean(mul(diff, diff))


def simsiam_loss(p1: Tensor, p2: Tensor, z1: Tensor, z2: Tensor) -> tuple[Tensor, LossBreakdown]:
    """Symmetrized Siamese loss; gradient into the z targets is blocked."""
    total = scale(ncs_distance(p1, stop_gradient(z2)) + ncs_distance(p2, stop_gradient(z1)), 0.5)
    return total, LossBreakdown(total=total.item(), l_si=total.item())


def dae_loss(target_x: Tensor, x1_rec: Tensor, x2_rec: Tensor, target_x2: Tensor | None = None) -> tuple[Tensor, LossBreakdown]:
    """Reconstruction loss of both views; one shared target unless target_x2 is given."""
    t1 = target_x
    t2 = target_x if target_x2 is None else target_x2
    total = scale(mse_distance(t1, x1_rec) + mse_distance(t2, x2_rec), 0.5)
    return total, LossBreakdown(total=total.item(), l_dae=total.item())


def sidae_loss(w: float, si_inputs: tuple, dae_inputs: tuple) -> tuple[Tensor, LossBreakdown]:
    """Convex combination w * L_dae + (1 - w) * L_si.

    ``si_inputs`` is (p1, p2, z1, z2) and ``dae_inputs`` is
    (target, x1_rec, x2_rec[, target2]).
    """
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"sidae_loss: w must be in [0, 1], got {w}")
    l_si, _ = simsiam_loss(*si_inputs)
    l_dae, _ = dae_loss(*dae_inputs)
    total = scale(l_dae, w) + scale(l_si, 1.0 - w)
    return total, LossBreakdown(total=total.item(), l_si=l_si.item(), l_dae=l_dae.item(), w=w)
