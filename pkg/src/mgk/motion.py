"""Motion data model: marker/joint layouts, clips, point clouds, file IO.

Conventions fixed across the package: coordinates are meters, the ground plane
is z=0 with gravity along -z, and a joint-space clip is stored as J joints plus
a separate global pelvis trajectory; the stacked per-frame view ``X`` puts the
pelvis in row 0 and the joints in rows 1..J.

All container types are immutable values: their arrays are copied on
construction and marked read-only, so instances can be shared freely.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError, ShapeError

MSQ_MAGIC = b"MSQ1"
MSQ_VERSION = 1
_REGRESSOR_ROW_TOL = 1e-9


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class MarkerLayout:
    """Marker/joint naming, the markers-to-joints regressor, and loss weights.

    Each regressor row is a convex combination (non-negative, sums to 1), so
    joints are weighted averages of marker positions. ``foot_markers`` and
    ``hand_markers`` index into the marker set; ``pelvis_joint`` indexes into
    the joint set.
    """

    n_markers: int
    n_joints: int
    marker_names: tuple[str, ...]
    joint_names: tuple[str, ...]
    regressor: np.ndarray          # (J, N)
    pelvis_joint: int
    foot_markers: tuple[int, ...]
    hand_markers: tuple[int, ...]
    joint_weights: np.ndarray      # (J,)
    marker_weights: np.ndarray     # (N,)

    def __post_init__(self):
        object.__setattr__(self, "regressor", _frozen(self.regressor))
        object.__setattr__(self, "joint_weights", _frozen(self.joint_weights))
        object.__setattr__(self, "marker_weights", _frozen(self.marker_weights))
        object.__setattr__(self, "marker_names", tuple(self.marker_names))
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "foot_markers", tuple(int(i) for i in self.foot_markers))
        object.__setattr__(self, "hand_markers", tuple(int(i) for i in self.hand_markers))
        N, J = self.n_markers, self.n_joints
        if self.regressor.shape != (J, N):
            raise ShapeError(f"regressor shape {self.regressor.shape} != ({J}, {N})")
        if len(self.marker_names) != N or len(self.joint_names) != J:
            raise ContractError("name list lengths disagree with counts")
        if np.any(self.regressor < 0):
            raise ContractError("regressor weights must be non-negative")
        rowsums = self.regressor.sum(axis=1)
        if np.any(np.abs(rowsums - 1.0) > _REGRESSOR_ROW_TOL):
            raise ContractError(
                f"regressor rows must sum to 1 (max deviation "
                f"{np.abs(rowsums - 1.0).max():.2e})")
        if not (0 <= self.pelvis_joint < J):
            raise ContractError(f"pelvis_joint {self.pelvis_joint} out of range")
        if not self.foot_markers or not self.hand_markers:
            raise ContractError("layout needs at least one foot and one hand marker")
        for idx in (*self.foot_markers, *self.hand_markers):
            if not (0 <= idx < N):
                raise ContractError(f"marker index {idx} out of range")
        if self.joint_weights.shape != (J,) or self.marker_weights.shape != (N,):
            raise ShapeError("weight vector shapes disagree with counts")
        if np.any(self.joint_weights < 0) or np.any(self.marker_weights < 0):
            raise ContractError("loss weights must be non-negative")

    def foot_joints(self) -> tuple[int, ...]:
        """Joints whose regressor mass sits mostly (>50%) on foot markers."""
        feet = np.zeros(self.n_markers, dtype=bool)
        feet[list(self.foot_markers)] = True
        mass = self.regressor[:, feet].sum(axis=1)
        return tuple(int(j) for j in np.flatnonzero(mass > 0.5))

    def hash(self) -> str:
        digest = hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True)
                                .encode("utf-8"))
        return digest.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "n_markers": self.n_markers,
            "n_joints": self.n_joints,
            "marker_names": list(self.marker_names),
            "joint_names": list(self.joint_names),
            "regressor": [[float(v) for v in row] for row in self.regressor],
            "pelvis_joint": self.pelvis_joint,
            "foot_markers": list(self.foot_markers),
            "hand_markers": list(self.hand_markers),
            "joint_weights": [float(v) for v in self.joint_weights],
            "marker_weights": [float(v) for v in self.marker_weights],
        }

    @staticmethod
    def from_dict(d: dict) -> "MarkerLayout":
        return MarkerLayout(
            n_markers=int(d["n_markers"]), n_joints=int(d["n_joints"]),
            marker_names=d["marker_names"], joint_names=d["joint_names"],
            regressor=np.asarray(d["regressor"], dtype=np.float64),
            pelvis_joint=int(d["pelvis_joint"]),
            foot_markers=d["foot_markers"], hand_markers=d["hand_markers"],
            joint_weights=np.asarray(d["joint_weights"], dtype=np.float64),
            marker_weights=np.asarray(d["marker_weights"], dtype=np.float64),
        )


def save_layout(layout: MarkerLayout, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(layout.to_dict(), fh, indent=2)


def load_layout(path: str | os.PathLike) -> MarkerLayout:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return MarkerLayout.from_dict(json.load(fh))
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"bad layout file {path}: {exc}") from exc


@dataclass(frozen=True)
class MarkerSequence:
    """A T x N x 3 clip of marker positions at a fixed frame rate."""

    frames: np.ndarray
    fps: float

    def __post_init__(self):
        object.__setattr__(self, "frames", _frozen(self.frames))
        if self.frames.ndim != 3 or self.frames.shape[-1] != 3:
            raise ShapeError(f"frames must be (T, N, 3), got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ContractError("a sequence needs at least one frame")
        if not np.all(np.isfinite(self.frames)):
            raise ContractError("marker coordinates must be finite")
        if self.fps <= 0:
            raise ContractError(f"fps must be positive, got {self.fps}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_markers(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class JointFrame:
    """A single joint-space pose: J joints plus the global pelvis position."""

    joints: np.ndarray   # (J, 3)
    pelvis: np.ndarray   # (3,)

    def __post_init__(self):
        object.__setattr__(self, "joints", _frozen(self.joints))
        object.__setattr__(self, "pelvis", _frozen(self.pelvis))
        if self.joints.ndim != 2 or self.joints.shape[-1] != 3:
            raise ShapeError(f"joints must be (J, 3), got {self.joints.shape}")
        if self.pelvis.shape != (3,):
            raise ShapeError(f"pelvis must be (3,), got {self.pelvis.shape}")

    @property
    def x_row(self) -> np.ndarray:
        """(J+1, 3) stacked view, pelvis first."""
        return np.concatenate([self.pelvis[None, :], self.joints], axis=0)


@dataclass(frozen=True)
class JointSequence:
    """A joint-space clip: T x J x 3 joints plus the T x 1 x 3 pelvis path."""

    joints: np.ndarray
    pelvis: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "joints", _frozen(self.joints))
        object.__setattr__(self, "pelvis", _frozen(self.pelvis))
        if self.joints.ndim != 3 or self.joints.shape[-1] != 3:
            raise ShapeError(f"joints must be (T, J, 3), got {self.joints.shape}")
        if self.pelvis.shape != (self.joints.shape[0], 1, 3):
            raise ShapeError(
                f"pelvis must be (T, 1, 3) sharing T with joints, got "
                f"{self.pelvis.shape} vs T={self.joints.shape[0]}")
        if not (np.all(np.isfinite(self.joints)) and np.all(np.isfinite(self.pelvis))):
            raise ContractError("joint coordinates must be finite")
        if self.fps <= 0:
            raise ContractError(f"fps must be positive, got {self.fps}")

    @property
    def n_frames(self) -> int:
        return self.joints.shape[0]

    @property
    def n_joints(self) -> int:
        return self.joints.shape[1]

    @property
    def x(self) -> np.ndarray:
        """(T, J+1, 3) stacked view: row 0 is the pelvis, rows 1..J the joints."""
        return np.concatenate([self.pelvis, self.joints], axis=1)

    def frame(self, t: int) -> JointFrame:
        return JointFrame(joints=self.joints[t], pelvis=self.pelvis[t, 0])

    @staticmethod
    def from_x(x: np.ndarray, fps: float = 30.0) -> "JointSequence":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] < 2 or x.shape[-1] != 3:
            raise ShapeError(f"X view must be (T, J+1, 3) with J >= 1, got {x.shape}")
        return JointSequence(joints=x[:, 1:, :], pelvis=x[:, :1, :], fps=fps)


@dataclass(frozen=True)
class ObjectPointCloud:
    """P surface points with unit outward normals."""

    points: np.ndarray    # (P, 3)
    normals: np.ndarray   # (P, 3)
    centroid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(self.points))
        object.__setattr__(self, "normals", _frozen(self.normals))
        if self.points.ndim != 2 or self.points.shape[-1] != 3:
            raise ShapeError(f"points must be (P, 3), got {self.points.shape}")
        if self.points.shape[0] < 8:
            raise ContractError(f"need at least 8 points, got {self.points.shape[0]}")
        if self.normals.shape != self.points.shape:
            raise ShapeError("normals must match points shape")
        lengths = np.linalg.norm(self.normals, axis=1)
        if np.any(np.abs(lengths - 1.0) > 1e-6):
            raise ContractError("normals must have unit length (tol 1e-6)")
        centroid = self.centroid
        if centroid is None:
            centroid = self.points.mean(axis=0)
        object.__setattr__(self, "centroid", _frozen(centroid))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class MaskSpec:
    """Which markers were masked in each frame of a corrupted sequence."""

    ratio: float
    seed: int
    masked_indices: np.ndarray   # (T, k) int, unique per row

    def __post_init__(self):
        object.__setattr__(self, "masked_indices",
                           _frozen(self.masked_indices, dtype=np.int64))

    @property
    def per_frame(self) -> int:
        return self.masked_indices.shape[1] if self.masked_indices.ndim == 2 else 0


# -- core transforms ---------------------------------------------------------


def downsample(seq: MarkerSequence, layout: MarkerLayout) -> JointSequence:
    """Markers -> joints through the layout regressor (lossy by design)."""
    if seq.n_markers != layout.n_markers:
        raise ShapeError(
            f"sequence has {seq.n_markers} markers but layout expects "
            f"{layout.n_markers}")
    joints = np.einsum("jn,tnc->tjc", layout.regressor, seq.frames)
    pelvis = joints[:, layout.pelvis_joint:layout.pelvis_joint + 1, :]
    return JointSequence(joints=joints, pelvis=pelvis, fps=seq.fps)


def downsample_frame(markers: np.ndarray, layout: MarkerLayout) -> JointFrame:
    seq = MarkerSequence(frames=np.asarray(markers, dtype=np.float64)[None], fps=30.0)
    return downsample(seq, layout).frame(0)


def interpolate_linear(start: JointFrame, end: JointFrame, n_frames: int,
                       fps: float = 30.0) -> JointSequence:
    """Straight-line in-betweening; endpoint frames are the inputs, bit-exact."""
    if n_frames < 2:
        raise ContractError(f"need at least 2 frames, got {n_frames}")
    if start.joints.shape != end.joints.shape:
        raise ShapeError("start and end frames disagree in joint count")
    ts = np.arange(n_frames, dtype=np.float64)[:, None, None] / (n_frames - 1)
    joints = start.joints[None] + ts * (end.joints[None] - start.joints[None])
    pelvis = (start.pelvis[None, None] +
              ts * (end.pelvis[None, None] - start.pelvis[None, None]))
    joints[0], joints[-1] = start.joints, end.joints
    pelvis[0, 0], pelvis[-1, 0] = start.pelvis, end.pelvis
    return JointSequence(joints=joints, pelvis=pelvis, fps=fps)


def mask_markers(seq: MarkerSequence, ratio: float,
                 seed: int) -> tuple[MarkerSequence, MaskSpec]:
    """Zero out round(ratio*N) markers per frame; the spec records which.

    The data-level sentinel is zeros; models add a learned mask embedding on
    top, so corruption stays reversible and unambiguous.
    """
    if not (0.0 <= ratio < 1.0):
        raise ContractError(f"mask ratio must be in [0, 1), got {ratio}")
    T, N = seq.n_frames, seq.n_markers
    k = int(round(ratio * N))
    rng = np.random.default_rng(seed)
    if k == 0:
        spec = MaskSpec(ratio=ratio, seed=seed,
                        masked_indices=np.zeros((T, 0), dtype=np.int64))
        return seq, spec
    idx = np.stack([np.sort(rng.choice(N, size=k, replace=False))
                    for _ in range(T)])
    frames = seq.frames.copy()
    rows = np.repeat(np.arange(T), k)
    frames[rows, idx.reshape(-1), :] = 0.0
    spec = MaskSpec(ratio=ratio, seed=seed, masked_indices=idx)
    return MarkerSequence(frames=frames, fps=seq.fps), spec


def add_gaussian_noise(seq: JointSequence, sigma: float, seed: int) -> JointSequence:
    """i.i.d. N(0, sigma^2) per coordinate on joints and pelvis alike."""
    if sigma < 0:
        raise ContractError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return seq
    rng = np.random.default_rng(seed)
    joints = seq.joints + rng.normal(0.0, sigma, size=seq.joints.shape)
    pelvis = seq.pelvis + rng.normal(0.0, sigma, size=seq.pelvis.shape)
    return JointSequence(joints=joints, pelvis=pelvis, fps=seq.fps)


# -- sequence file IO ---------------------------------------------------------

_HEADER = struct.Struct("<4sIIIf")   # magic, version, T, N, fps


def save_sequence(seq: MarkerSequence, path: str | os.PathLike) -> None:
    """Write the MSQ1 binary motion format (float32 little-endian payload).

    The payload is float32, so coordinates are rounded to float32 on write;
    sequences produced by the synthetic generators are already exactly
    representable and therefore round-trip bit-identically.
    """
    header = _HEADER.pack(MSQ_MAGIC, MSQ_VERSION, seq.n_frames, seq.n_markers,
                          float(seq.fps))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(seq.frames.astype("<f4").tobytes())


def load_sequence(path: str | os.PathLike) -> MarkerSequence:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError("file too short for a motion header", offset=len(blob))
    magic, version, t, n, fps = _HEADER.unpack_from(blob, 0)
    if magic != MSQ_MAGIC:
        raise FormatError(f"bad motion magic {magic!r}", offset=0)
    if version != MSQ_VERSION:
        raise FormatError(f"unsupported motion version {version}", offset=4)
    expected = t * n * 3 * 4
    payload = blob[_HEADER.size:]
    if len(payload) < expected:
        raise FormatError(
            f"payload holds {len(payload)} bytes but header promises {expected}",
            offset=_HEADER.size + len(payload))
    flat = np.frombuffer(payload[:expected], dtype="<f4")
    if not np.all(np.isfinite(flat)):
        bad = int(np.flatnonzero(~np.isfinite(flat))[0])
        raise FormatError("non-finite coordinate in payload",
                          offset=_HEADER.size + bad * 4)
    frames = flat.astype(np.float64).reshape(t, n, 3)
    return MarkerSequence(frames=frames, fps=float(fps))


def sequence_to_csv(seq: MarkerSequence, path: str | os.PathLike) -> None:
    """Debug export: one row per (frame, marker) with header t,marker,x,y,z."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,marker,x,y,z\n")
        for t in range(seq.n_frames):
            for m in range(seq.n_markers):
                x, y, z = seq.frames[t, m]
                fh.write(f"{t},{m},{x!r},{y!r},{z!r}\n")


def quantize_f32(frames: np.ndarray) -> np.ndarray:
    """Round to float32 precision so MSQ1 round-trips are bit-exact."""
    return frames.astype(np.float32).astype(np.float64)


# -- point cloud IO ------------------------------------------------------------


def save_cloud(cloud: ObjectPointCloud, path: str | os.PathLike) -> None:
    doc = {
        "points": [[float(v) for v in p] for p in cloud.points],
        "normals": [[float(v) for v in n] for n in cloud.normals],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_cloud(path: str | os.PathLike) -> ObjectPointCloud:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
            return ObjectPointCloud(
                points=np.asarray(doc["points"], dtype=np.float64),
                normals=np.asarray(doc["normals"], dtype=np.float64))
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"bad point cloud file {path}: {exc}") from exc
