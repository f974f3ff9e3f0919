"""Training losses. All of them run on the autodiff tensors so they can sit
at the end of a recorded graph; each has a deliberately simple formula so the
test suite can mirror it with naive loops.

Shape conventions: a marker frame is (N, 3), a joint clip is (T, J, 3), and
any loss accepts one extra leading batch dimension, over which it averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .motion import ObjectPointCloud
from .tensor import Tensor, euclidean_norm, squared_norm

FOOT_CONTACT_HEIGHT = 0.05


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(pred: Tensor, gt: Tensor, what: str) -> None:
    if pred.shape != gt.shape:
        raise ShapeError(f"{what}: shapes {pred.shape} and {gt.shape} differ")


@dataclass
class LossWeights:
    """Multipliers for the combined sequence loss: reconstruction, velocity,
    acceleration, pelvis, and foot-skating terms."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.5
    delta: float = 1.0
    zeta: float = 0.5

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma, self.delta, self.zeta)
        if any(v < 0 for v in vals):
            raise ContractError("loss weights must be non-negative")
        if all(v == 0 for v in vals):
            raise ContractError("at least one loss weight must be positive")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
                "delta": self.delta, "zeta": self.zeta}

    @staticmethod
    def from_dict(d: dict) -> "LossWeights":
        return LossWeights(**d)


@dataclass(frozen=True)
class ContactMap:
    """Per-marker and per-object-point contact probabilities."""

    marker_probs: np.ndarray
    object_probs: np.ndarray

    def __post_init__(self):
        for name in ("marker_probs", "object_probs"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if np.any(arr < 0) or np.any(arr > 1):
                raise ContractError(f"{name} must lie in [0, 1]")
            object.__setattr__(self, name, arr)


def l_spatial(pred, gt, masked=None) -> Tensor:
    """Mean Euclidean error per marker: (1/N) sum_i ||m_i - m_hat_i||.

    With ``masked`` (an index array), the mean runs over the masked subset
    only - the useful training signal for masked-marker recovery, since the
    unmasked markers are an identity copy.
    """
    pred, gt = _t(pred), _t(gt)
    _check_same_shape(pred, gt, "l_spatial")
    if pred.shape[-2] == 0:
        raise ContractError("l_spatial needs at least one marker")
    if masked is not None:
        masked = np.asarray(masked, dtype=np.int64)
        if masked.size == 0:
            raise ContractError("masked variant needs a non-empty index set")
        pred = pred[..., masked, :]
        gt = gt[..., masked, :]
    norms = euclidean_norm(pred - gt, axis=-1)
    return norms.mean(axis=-1).mean() if norms.ndim > 1 else norms.mean()


def l_recon(pred, gt, joint_weights) -> Tensor:
    """Weighted squared error over a joint clip:
    (1/W) sum_t sum_j w_j ||y_tj - y_hat_tj||^2 with W = sum_j w_j."""
    pred, gt = _t(pred), _t(gt)
    _check_same_shape(pred, gt, "l_recon")
    w = np.asarray(joint_weights, dtype=np.float64)
    if w.shape != (pred.shape[-2],):
        raise ShapeError(f"joint_weights {w.shape} does not match J={pred.shape[-2]}")
    total = w.sum()
    if total <= 0:
        raise ContractError("joint weights sum to zero")
    sq = squared_norm(pred - gt, axis=-1)            # (..., T, J)
    weighted = (sq * Tensor(w)).sum(axis=(-1, -2)) * (1.0 / total)
    return weighted.mean() if weighted.ndim > 0 else weighted


def _forward_difference(x: Tensor, order: int) -> Tensor:
    for _ in range(order):
        x = x[..., 1:, :, :] - x[..., :-1, :, :]
    return x


def l_derivative(pred, gt, joint_weights, order: int) -> Tensor:
    """The reconstruction loss applied to forward-differenced sequences:
    order 1 compares velocities, order 2 accelerations."""
    if order not in (1, 2):
        raise ContractError(f"order must be 1 or 2, got {order}")
    pred, gt = _t(pred), _t(gt)
    _check_same_shape(pred, gt, "l_derivative")
    if pred.shape[-3] <= order:
        raise ContractError(
            f"need more than {order} frames for order-{order} differences")
    return l_recon(_forward_difference(pred, order),
                   _forward_difference(gt, order), joint_weights)


def l_pelvis(pred, gt) -> Tensor:
    """Per-frame mean squared pelvis error: (1/T) sum_t ||p_t - p_hat_t||^2."""
    pred, gt = _t(pred), _t(gt)
    _check_same_shape(pred, gt, "l_pelvis")
    sq = squared_norm(pred - gt, axis=-1)            # (..., T)
    return sq.mean(axis=-1).mean() if sq.ndim > 1 else sq.mean()


def l_foot(frames, foot_indices, gated: bool = True,
           height_thresh: float = FOOT_CONTACT_HEIGHT) -> Tensor:
    """Foot-skating penalty: mean squared frame-to-frame foot displacement.

    Gated mode (the training default) counts only pairs whose foot height at
    the earlier frame is below ``height_thresh`` - a stand-in contact detector
    - and normalizes by the number of gated (frame, foot) pairs, clamped to at
    least 1. Ungated mode sums every pair and normalizes by the foot count.
    """
    frames = _t(frames)
    foot_indices = np.asarray(foot_indices, dtype=np.int64)
    if foot_indices.size == 0:
        raise ContractError("l_foot needs a non-empty foot set")
    if frames.shape[-3] < 2:
        raise ContractError("l_foot needs at least two frames")
    feet = frames[..., foot_indices, :]              # (..., T, F, 3)
    delta = feet[..., 1:, :, :] - feet[..., :-1, :, :]
    sq = squared_norm(delta, axis=-1)                # (..., T-1, F)
    if gated:
        heights = feet.data[..., :-1, :, 2]
        gate = (heights < height_thresh).astype(np.float64)
        n_f = max(float(gate.sum()), 1.0)
        return (sq * Tensor(gate)).sum() * (1.0 / n_f)
    return sq.sum() * (1.0 / foot_indices.size)


def l_total(recon: Tensor, vel: Tensor, accel: Tensor, pelvis: Tensor,
            foot: Tensor, weights: LossWeights) -> Tensor:
    """Weighted sum of the five sequence-loss components."""
    return (recon * weights.alpha + vel * weights.beta + accel * weights.gamma
            + pelvis * weights.delta + foot * weights.zeta)


def kl_divergence(mu, logvar) -> Tensor:
    """KL(N(mu, e^logvar) || N(0, I)), summed over latent dims (mean over any
    batch dim): -0.5 sum(1 + logvar - mu^2 - e^logvar)."""
    mu, logvar = _t(mu), _t(logvar)
    _check_same_shape(mu, logvar, "kl_divergence")
    per = (mu * mu + logvar.exp() - logvar - 1.0).sum(axis=-1) * 0.5
    return per.mean() if per.ndim > 0 else per


def bce_contact(pred, gt) -> Tensor:
    """Mean binary cross-entropy over all contact entries.

    ``pred``/``gt`` are ContactMaps or probability tensors; the log op clamps
    its argument at 1e-8, which bounds the loss on saturated probabilities.
    """
    if isinstance(pred, ContactMap):
        pred = np.concatenate([pred.marker_probs, pred.object_probs])
    if isinstance(gt, ContactMap):
        gt = np.concatenate([gt.marker_probs, gt.object_probs])
    pred, gt = _t(pred), _t(gt)
    _check_same_shape(pred, gt, "bce_contact")
    term = gt * pred.log() + (1.0 - gt) * (1.0 - pred).log()
    return -term.mean()


def consistency_loss(pred_markers, cloud, gt_distances) -> Tensor:
    """Squared error between each predicted marker's distance to its nearest
    object point and the ground-truth distance.

    ``cloud`` is an ObjectPointCloud or a raw (P, 3) / batched (B, P, 3)
    points array; gradients flow through the distance to the chosen nearest
    point only (the selection itself is not differentiated).
    """
    pred = _t(pred_markers)
    gt = np.asarray(gt_distances, dtype=np.float64)
    if np.any(gt < 0):
        raise ContractError("ground-truth distances must be non-negative")
    n = pred.shape[-2]
    if gt.shape[-1] != n:
        raise ShapeError(f"{gt.shape[-1]} distances for {n} markers")
    points = cloud.points if isinstance(cloud, ObjectPointCloud) else \
        np.asarray(cloud, dtype=np.float64)
    if points.ndim == 2:
        points = points[None]
    p = points.shape[-2]
    batched = pred if pred.ndim == 3 else pred.reshape(1, *pred.shape)
    diff = batched.reshape(batched.shape[0], n, 1, 3) - Tensor(points.reshape(-1, 1, p, 3))
    dist = squared_norm(diff, axis=-1).sqrt()         # (B, N, P)
    nearest = dist.min(axis=-1)
    err = (nearest - Tensor(np.atleast_2d(gt))) ** 2
    return err.mean()


def l_liftup(pred, gt, marker_weights) -> Tensor:
    """Weighted squared marker error: (1/N) sum_i w_i ||m_i - m_hat_i||^2."""
    pred, gt = _t(pred), _t(gt)
    _check_same_shape(pred, gt, "l_liftup")
    w = np.asarray(marker_weights, dtype=np.float64)
    n = pred.shape[-2]
    if w.shape != (n,):
        raise ShapeError(f"marker_weights {w.shape} does not match N={n}")
    sq = squared_norm(pred - gt, axis=-1)             # (..., N)
    per = (sq * Tensor(w)).sum(axis=-1) * (1.0 / n)
    return per.mean() if per.ndim > 0 else per


def sequence_loss(pred_x, gt_x, layout_joint_weights, foot_rows,
                  weights: LossWeights, gated_foot: bool = True) -> tuple[Tensor, dict]:
    """The combined loss on stacked (.., T, J+1, 3) views (pelvis row first).

    Returns the weighted total plus the unweighted components for logging.
    """
    pred_x, gt_x = _t(pred_x), _t(gt_x)
    _check_same_shape(pred_x, gt_x, "sequence_loss")
    pred_j, gt_j = pred_x[..., 1:, :], gt_x[..., 1:, :]
    pred_p, gt_p = pred_x[..., 0, :], gt_x[..., 0, :]
    parts = {
        "recon": l_recon(pred_j, gt_j, layout_joint_weights),
        "vel": l_derivative(pred_j, gt_j, layout_joint_weights, order=1),
        "accel": l_derivative(pred_j, gt_j, layout_joint_weights, order=2),
        "pelvis": l_pelvis(pred_p, gt_p),
        "foot": l_foot(pred_x, foot_rows, gated=gated_foot),
    }
    total = l_total(parts["recon"], parts["vel"], parts["accel"],
                    parts["pelvis"], parts["foot"], weights)
    return total, parts
