"""Evaluation metrics over plain numpy arrays, plus the report container.

These are the read-only counterparts to the training losses: displacement
error, sample diversity, spectral motion quality, foot skating, and the two
object-interaction measures (contact ratio, interpenetration depth). They are
pure functions with fixed summation order, so repeated evaluation of the same
inputs is bit-stable.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, fields

import numpy as np

from .errors import ContractError, ShapeError
from .motion import JointSequence, MarkerLayout, MarkerSequence, ObjectPointCloud

PSKL_EPS = 1e-8
CONTACT_THRESH = 0.005          # 5 mm
SKATE_HEIGHT_THRESH = 0.05      # 5 cm
SKATE_SPEED_THRESH = 0.075      # m/s


def _joints_of(seq) -> np.ndarray:
    return seq.joints if isinstance(seq, JointSequence) else np.asarray(seq)


def ade(pred, gt) -> float:
    """Average L2 displacement error over frames and joints, meters."""
    p, g = _joints_of(pred), _joints_of(gt)
    if p.shape != g.shape:
        raise ShapeError(f"ade: shapes {p.shape} and {g.shape} differ")
    return float(np.linalg.norm(p - g, axis=-1).mean())


def apd(samples) -> float:
    """Average pairwise distance across K sampled poses: the mean over all
    unordered pairs of the mean per-marker distance."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] < 2:
        raise ContractError(f"apd needs K >= 2 stacked (N, 3) samples, "
                            f"got shape {arr.shape}")
    k = arr.shape[0]
    total = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            total += float(np.linalg.norm(arr[i] - arr[j], axis=-1).mean())
    return total * 2.0 / (k * (k - 1))


def _acceleration_spectrum(joints: np.ndarray) -> np.ndarray:
    """Normalized acceleration power spectrum per (joint, axis).

    Second differences are circular, so the spectrum is exactly invariant to
    circular time shifts; bins are epsilon-smoothed and normalized into a
    distribution over frequencies. Returns (bins, J, 3).
    """
    acc = (np.roll(joints, -2, axis=0) - 2.0 * np.roll(joints, -1, axis=0)
           + joints)
    power = np.abs(np.fft.rfft(acc, axis=0)) ** 2 + PSKL_EPS
    return power / power.sum(axis=0, keepdims=True)


def pskl_j(pred, gt, direction: str = "p2gt") -> float:
    """Power-spectrum KL divergence between acceleration spectra, in nats,
    averaged over joints and axes. ``p2gt`` is KL(pred || gt); ``gt2p`` the
    reverse. The two directions generally differ."""
    if direction not in ("p2gt", "gt2p"):
        raise ContractError(f"direction must be 'p2gt' or 'gt2p', got {direction}")
    p, g = _joints_of(pred), _joints_of(gt)
    if p.shape != g.shape:
        raise ShapeError(f"pskl_j: shapes {p.shape} and {g.shape} differ")
    if p.shape[0] < 8:
        raise ContractError(f"pskl_j needs at least 8 frames, got {p.shape[0]}")
    sp, sg = _acceleration_spectrum(p), _acceleration_spectrum(g)
    a, b = (sp, sg) if direction == "p2gt" else (sg, sp)
    kl = (a * np.log(a / b)).sum(axis=0)
    return float(kl.mean())


def foot_skate(seq: MarkerSequence, layout: MarkerLayout,
               height_thresh: float = SKATE_HEIGHT_THRESH,
               speed_thresh: float = SKATE_SPEED_THRESH,
               mode: str = "ratio") -> float:
    """Foot skating over a marker clip, via the layout's foot set."""
    return foot_skate_frames(seq.frames, layout.foot_markers, seq.fps,
                             height_thresh, speed_thresh, mode)


def foot_skate_frames(frames: np.ndarray, foot_indices, fps: float,
                      height_thresh: float = SKATE_HEIGHT_THRESH,
                      speed_thresh: float = SKATE_SPEED_THRESH,
                      mode: str = "ratio") -> float:
    """Fraction of (frame, foot) pairs that are both grounded (height below
    ``height_thresh``) and sliding (horizontal speed above ``speed_thresh``).

    ``mode="displacement"`` instead returns the mean horizontal displacement
    (meters per transition) accumulated over skating pairs; the ratio is the
    reported default.
    """
    if mode not in ("ratio", "displacement"):
        raise ContractError(f"unknown foot skate mode '{mode}'")
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] < 2:
        raise ContractError("foot skate needs at least two frames")
    feet = frames[:, list(foot_indices), :]           # (T, F, 3)
    step = feet[1:, :, :2] - feet[:-1, :, :2]
    speed = np.linalg.norm(step, axis=-1) * fps       # (T-1, F)
    grounded = feet[:-1, :, 2] < height_thresh
    skating = grounded & (speed > speed_thresh)
    if mode == "ratio":
        return float(skating.mean())
    slide = np.linalg.norm(step, axis=-1) * skating
    return float(slide.sum() / max(skating.size, 1))


def nearest_distances(markers: np.ndarray,
                      cloud: ObjectPointCloud) -> tuple[np.ndarray, np.ndarray]:
    """Per-marker distance to, and index of, the nearest cloud point."""
    markers = np.atleast_2d(np.asarray(markers, dtype=np.float64))
    diff = markers[:, None, :] - cloud.points[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    idx = dist.argmin(axis=1)
    return dist[np.arange(len(markers)), idx], idx


def contact_ratio(hand_markers: np.ndarray, cloud: ObjectPointCloud,
                  thresh: float = CONTACT_THRESH) -> float:
    """Percent of the given markers within ``thresh`` of the object surface."""
    markers = np.atleast_2d(np.asarray(hand_markers, dtype=np.float64))
    if markers.shape[0] == 0:
        raise ContractError("contact_ratio needs at least one marker")
    dist, _ = nearest_distances(markers, cloud)
    return float((dist <= thresh).mean() * 100.0)


def interpenetration_depth(hand_markers: np.ndarray,
                           cloud: ObjectPointCloud) -> float:
    """Mean penetration depth in centimeters.

    A marker penetrates when it sits behind its nearest point's outward
    normal: s = (marker - p) . n < 0. Returns mean |s| over penetrating
    markers (0 when none penetrate). A point-cloud proxy for a mesh measure.
    """
    markers = np.atleast_2d(np.asarray(hand_markers, dtype=np.float64))
    dist, idx = nearest_distances(markers, cloud)
    signed = ((markers - cloud.points[idx]) * cloud.normals[idx]).sum(axis=-1)
    inside = signed < 0
    if not np.any(inside):
        return 0.0
    return float(np.abs(signed[inside]).mean() * 100.0)


@dataclass
class MetricReport:
    """One evaluation row. Unavailable metrics stay None (e.g. apd needs a
    sample set, ade needs ground truth)."""

    ade: float | None = None
    apd: float | None = None
    pskl_p_to_gt: float | None = None
    pskl_gt_to_p: float | None = None
    skate: float | None = None
    contact_ratio: float | None = None
    interpenetration_depth: float | None = None

    FIELDS = ("ade", "apd", "pskl_p_to_gt", "pskl_gt_to_p", "skate",
              "contact_ratio", "interpenetration_depth")

    def to_kv_text(self) -> str:
        lines = []
        for name in self.FIELDS:
            value = getattr(self, name)
            lines.append(f"{name}={'' if value is None else repr(float(value))}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def csv_header() -> str:
        return ",".join(MetricReport.FIELDS)

    def to_csv_row(self) -> str:
        cells = []
        for name in self.FIELDS:
            value = getattr(self, name)
            cells.append("" if value is None else repr(float(value)))
        return ",".join(cells)

    @staticmethod
    def from_kv_text(text: str) -> "MetricReport":
        values: dict[str, float | None] = {}
        for line in io.StringIO(text):
            line = line.strip()
            if not line:
                continue
            key, _, raw = line.partition("=")
            values[key] = float(raw) if raw else None
        return MetricReport(**{f.name: values.get(f.name)
                               for f in fields(MetricReport)})
