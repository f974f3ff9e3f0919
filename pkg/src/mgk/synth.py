"""Synthetic motion, layouts, and object clouds.

Stands in for large licensed mocap corpora: a deterministic humanoid layout
factory, band-limited Fourier motion generators (walk-like, reach,
random-smooth), primitive object clouds (sphere, box, cylinder), and
procedurally posed grasp samples with contact labels.

Everything is seeded explicitly and generated coordinates are rounded to
float32 precision so the binary motion format round-trips bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .motion import (JointSequence, MarkerLayout, MarkerSequence,
                     ObjectPointCloud, downsample, quantize_f32)

# Canonical standing skeleton: joint name -> (anchor xyz in meters, marker
# scatter radius). Ground plane z=0, body faces +y, left is +x.
_JOINT_TABLE: dict[str, tuple[tuple[float, float, float], float]] = {
    "pelvis": ((0.0, 0.0, 0.95), 0.09),
    "spine1": ((0.0, 0.0, 1.10), 0.09),
    "spine2": ((0.0, 0.0, 1.25), 0.09),
    "spine3": ((0.0, 0.0, 1.38), 0.08),
    "neck": ((0.0, 0.0, 1.50), 0.05),
    "head": ((0.0, 0.0, 1.62), 0.08),
    "left_collar": ((0.08, 0.0, 1.45), 0.05),
    "right_collar": ((-0.08, 0.0, 1.45), 0.05),
    "left_shoulder": ((0.20, 0.0, 1.42), 0.06),
    "right_shoulder": ((-0.20, 0.0, 1.42), 0.06),
    "left_elbow": ((0.45, 0.0, 1.20), 0.05),
    "right_elbow": ((-0.45, 0.0, 1.20), 0.05),
    "left_hand": ((0.55, 0.05, 0.95), 0.03),
    "right_hand": ((-0.55, 0.05, 0.95), 0.03),
    "left_hip": ((0.10, 0.0, 0.90), 0.07),
    "right_hip": ((-0.10, 0.0, 0.90), 0.07),
    "left_knee": ((0.12, 0.0, 0.50), 0.05),
    "right_knee": ((-0.12, 0.0, 0.50), 0.05),
    "left_ankle": ((0.12, -0.03, 0.08), 0.03),
    "right_ankle": ((-0.12, -0.03, 0.08), 0.03),
    "left_foot": ((0.13, 0.10, 0.04), 0.03),
    "right_foot": ((-0.13, 0.10, 0.04), 0.03),
}

# Joints kept first when a smaller skeleton is requested.
_JOINT_PRIORITY = [
    "pelvis", "left_foot", "right_foot", "left_hand", "right_hand", "head",
    "spine2", "left_knee", "right_knee", "left_elbow", "right_elbow",
    "left_ankle", "right_ankle", "left_shoulder", "right_shoulder", "neck",
    "spine1", "spine3", "left_hip", "right_hip", "left_collar", "right_collar",
]

_FOOT_JOINTS = {"left_foot", "right_foot", "left_ankle", "right_ankle"}
_HAND_JOINTS = {"left_hand", "right_hand"}
_HAND_WEIGHT = 10.0

KINDS = ("walk-like", "reach", "random-smooth")


def _fib_directions(n: int, offset: int = 0) -> np.ndarray:
    """Deterministic well-spread unit vectors (spherical Fibonacci lattice)."""
    k = np.arange(offset, offset + n, dtype=np.float64)
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    z = 1.0 - 2.0 * ((k + 0.5) % (n + offset)) / (n + offset)
    theta = 2.0 * np.pi * k / golden
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _marker_offset(ordinal: int, radius: float) -> np.ndarray:
    """Fixed local offset of the ordinal-th marker on a segment."""
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    z = np.cos(0.6 + 0.9 * ordinal)
    theta = 2.0 * np.pi * ordinal / golden
    r = np.sqrt(max(1.0 - z * z, 0.0))
    return radius * np.array([r * np.cos(theta), r * np.sin(theta), z])


def default_layout(n_markers: int = 67, n_joints: int = 22) -> MarkerLayout:
    """Humanoid layout: markers scattered on body segments, joints as the
    per-segment marker means. Any (N, J) with J in [5, 22] and N >= J works."""
    if not (5 <= n_joints <= len(_JOINT_TABLE)):
        raise ContractError(f"n_joints must be in [5, {len(_JOINT_TABLE)}]")
    if n_markers < n_joints:
        raise ContractError("need at least one marker per joint")
    joint_names = sorted(_JOINT_PRIORITY[:n_joints],
                         key=list(_JOINT_TABLE).index)
    # Round-robin markers over joints so every joint gets at least one.
    counts = {name: 1 for name in joint_names}
    order = sorted(joint_names, key=_JOINT_PRIORITY.index)
    i = 0
    while sum(counts.values()) < n_markers:
        counts[order[i % len(order)]] += 1
        i += 1
    marker_names: list[str] = []
    for name in joint_names:
        marker_names.extend(f"{name}_m{k}" for k in range(counts[name]))
    regressor = np.zeros((n_joints, n_markers))
    foot, hand = [], []
    for m, mname in enumerate(marker_names):
        jname = mname.rsplit("_m", 1)[0]
        j = joint_names.index(jname)
        regressor[j, m] = 1.0
        if jname in _FOOT_JOINTS:
            foot.append(m)
        if jname in _HAND_JOINTS:
            hand.append(m)
    regressor /= regressor.sum(axis=1, keepdims=True)
    marker_weights = np.ones(n_markers)
    marker_weights[hand] = _HAND_WEIGHT
    return MarkerLayout(
        n_markers=n_markers, n_joints=n_joints,
        marker_names=marker_names, joint_names=joint_names,
        regressor=regressor, pelvis_joint=joint_names.index("pelvis"),
        foot_markers=foot, hand_markers=hand,
        joint_weights=np.ones(n_joints), marker_weights=marker_weights,
    )


def rest_pose(layout: MarkerLayout) -> np.ndarray:
    """(N, 3) canonical standing pose, reconstructed from marker names."""
    pose = np.zeros((layout.n_markers, 3))
    for m, name in enumerate(layout.marker_names):
        try:
            jname, ordinal = name.rsplit("_m", 1)
            anchor, radius = _JOINT_TABLE[jname]
        except (ValueError, KeyError):
            raise ContractError(
                f"marker '{name}' does not follow the '<joint>_m<k>' naming "
                "scheme of default_layout; no rest pose is derivable") from None
        pose[m] = np.asarray(anchor) + _marker_offset(int(ordinal), radius)
    return pose


def _joint_of_marker(layout: MarkerLayout) -> list[str]:
    return [name.rsplit("_m", 1)[0] for name in layout.marker_names]


def _smoothstep(u: np.ndarray) -> np.ndarray:
    """Quintic ease-in-out: zero velocity and acceleration at both ends."""
    return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


def _fourier_path(rng: np.random.Generator, t: np.ndarray,
                  amplitudes: tuple[float, ...],
                  freq_ranges: tuple[tuple[float, float], ...]) -> np.ndarray:
    """Sum of low-frequency sinusoids per axis; shape (T, 3)."""
    out = np.zeros((t.size, 3))
    for amp, (f_lo, f_hi) in zip(amplitudes, freq_ranges):
        freqs = rng.uniform(f_lo, f_hi, size=3)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
        scale = rng.uniform(0.5, 1.0, size=3) * amp
        out += scale * np.sin(2.0 * np.pi * freqs * t[:, None] + phases)
    return out


def synth_motion(layout: MarkerLayout, n_frames: int, fps: float, seed: int,
                 kind: str = "random-smooth",
                 target: np.ndarray | None = None) -> MarkerSequence:
    """Deterministic band-limited synthetic motion around the rest pose.

    walk-like      forward translation with gait swing; foot markers stay
                   within 0.15 m of the ground plane.
    reach          both hands travel on an arced, eased path to ``target``
                   (seeded within arm's reach when not given); feet planted.
    random-smooth  global drift plus per-segment low-frequency wander.
    """
    if n_frames < 2:
        raise ContractError(f"need at least 2 frames, got {n_frames}")
    if kind not in KINDS:
        raise ContractError(f"unknown motion kind '{kind}'; options: {KINDS}")
    rng = np.random.default_rng(seed)
    rest = rest_pose(layout)
    seg_of = _joint_of_marker(layout)
    t = np.arange(n_frames, dtype=np.float64) / fps
    frames = np.repeat(rest[None, :, :], n_frames, axis=0)

    foot_set = set(layout.foot_markers)
    hand_set = set(layout.hand_markers)

    if kind == "random-smooth":
        globe = _fourier_path(rng, t, (0.20, 0.05), ((0.2, 0.6), (0.7, 1.4)))
        globe[:, 2] *= 0.5
        frames += globe[:, None, :]
        for seg in sorted(set(seg_of)):
            idx = [m for m, s in enumerate(seg_of) if s == seg]
            wobble = _fourier_path(rng, t, (0.06,), ((0.3, 1.2),))
            if set(idx) & foot_set:
                wobble *= 0.3
            frames[:, idx, :] += wobble[:, None, :]

    elif kind == "walk-like":
        gait_hz = rng.uniform(0.9, 1.3)
        stride = rng.uniform(0.35, 0.5)
        stance_frac = 0.6
        lift_height = rng.uniform(0.04, 0.06)
        speed = stride * gait_hz
        frames[:, :, 1] += speed * t[:, None]                      # advance +y
        bob = 0.02 * np.sin(2.0 * np.pi * 2.0 * gait_hz * t)
        frames[:, :, 2] += bob[:, None]
        swing_arm = 0.06 * np.sin(2.0 * np.pi * gait_hz * t)

        def foot_path(side_offset: float) -> tuple[np.ndarray, np.ndarray]:
            """Forward displacement (relative to the advancing body) and lift
            for one leg: planted during stance, smoothstep swing between
            footholds. Returns (dy, dz) arrays over time."""
            phase = gait_hz * t + side_offset
            cycle = np.floor(phase)
            p = phase - cycle
            swing = p >= stance_frac
            s = np.zeros_like(p)
            s[swing] = _smoothstep((p[swing] - stance_frac) / (1.0 - stance_frac))
            # Foothold k sits at y = (k + const) * stride; during stance the
            # foot holds position while the body keeps moving.
            hold_y = (cycle + s) * stride
            dy = hold_y - speed * t
            dz = lift_height * np.sin(np.pi * s)
            return dy - dy[0], dz

        left_dy, left_dz = foot_path(0.0)
        right_dy, right_dz = foot_path(0.5)
        for m, seg in enumerate(seg_of):
            left = seg.startswith("left")
            dy, dz = (left_dy, left_dz) if left else (right_dy, right_dz)
            if seg in _FOOT_JOINTS:
                frames[:, m, 1] += dy
                frames[:, m, 2] += dz - bob                # feet ignore torso bob
            elif seg in ("left_knee", "right_knee"):
                frames[:, m, 1] += 0.5 * dy
                frames[:, m, 2] += 0.5 * dz
            elif seg in ("left_hand", "right_hand", "left_elbow", "right_elbow"):
                frames[:, m, 1] += (-swing_arm if left else swing_arm)
        # Feet stay inside the 0.15 m ground band: rest offsets (< 0.08) plus
        # lift (< 0.06), minus the cancelled bob.

    else:  # reach
        if target is None:
            azim = rng.uniform(-0.6, 0.6)
            dist = rng.uniform(0.45, 0.70)
            height = rng.uniform(0.75, 1.25)
            target = np.array([dist * np.sin(azim), dist * np.cos(azim), height])
        target = np.asarray(target, dtype=np.float64)
        u = np.arange(n_frames, dtype=np.float64) / (n_frames - 1)
        blend = _smoothstep(u)
        # Arc lift is a fixed function of the reach geometry (reproducible
        # from the endpoints), so in-betweening it is a learnable rule.
        reach_xy = float(np.hypot(target[0], target[1] - 0.05))
        arc = np.sin(np.pi * u) * (0.05 + 0.18 * reach_xy)
        hand_dirs = _fib_directions(max(len(hand_set), 1), offset=3)
        displacement = np.zeros_like(rest)
        hand_centroid = rest[list(hand_set)].mean(axis=0)
        reach_vec = target - hand_centroid
        k = 0
        for m, seg in enumerate(seg_of):
            if m in hand_set:
                goal = target + 0.012 * hand_dirs[k % len(hand_dirs)]
                displacement[m] = goal - rest[m]
                k += 1
            elif seg in ("left_elbow", "right_elbow"):
                displacement[m] = 0.55 * reach_vec
            elif seg in ("left_shoulder", "right_shoulder",
                         "left_collar", "right_collar"):
                displacement[m] = 0.25 * reach_vec
            elif seg in _FOOT_JOINTS:
                displacement[m] = 0.0                              # feet planted
            else:
                displacement[m] = 0.12 * np.array([reach_vec[0], reach_vec[1], 0.0])
        frames += blend[:, None, None] * displacement[None, :, :]
        arm = [m for m, seg in enumerate(seg_of)
               if m in hand_set or seg in ("left_elbow", "right_elbow")]
        frames[:, arm, 2] += arc[:, None]
        side = 1.0 if target[0] >= 0 else -1.0
        frames[:, arm, 0] += side * 0.35 * arc[:, None]

    # Tiny per-marker shimmer keeps frames from being exactly rigid.
    shimmer = 0.004 * np.sin(
        2.0 * np.pi * rng.uniform(0.4, 1.2, size=(1, layout.n_markers, 1)) *
        t[:, None, None] + rng.uniform(0, 2 * np.pi, size=(1, layout.n_markers, 1)))
    body = [m for m in range(layout.n_markers)
            if kind != "reach" or m not in hand_set]
    frames[:, body, :] += shimmer[:, body, :]

    return MarkerSequence(frames=quantize_f32(frames), fps=fps)


# -- object clouds -------------------------------------------------------------


def sphere_cloud(center, radius: float, n_points: int = 64) -> ObjectPointCloud:
    center = np.asarray(center, dtype=np.float64)
    dirs = _fib_directions(n_points)
    points = center + radius * dirs
    return ObjectPointCloud(points=points, normals=dirs, centroid=center)


def box_cloud(center, half_extents, n_per_face: int = 16) -> ObjectPointCloud:
    center = np.asarray(center, dtype=np.float64)
    he = np.asarray(half_extents, dtype=np.float64)
    points, normals = [], []
    side = int(np.ceil(np.sqrt(n_per_face)))
    lin = np.linspace(-1.0, 1.0, side)
    uu, vv = np.meshgrid(lin, lin)
    grid = np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)[:n_per_face]
    for axis in range(3):
        for sign in (-1.0, 1.0):
            n = np.zeros(3)
            n[axis] = sign
            other = [a for a in range(3) if a != axis]
            for u, v in grid:
                p = np.zeros(3)
                p[axis] = sign * he[axis]
                p[other[0]] = u * he[other[0]]
                p[other[1]] = v * he[other[1]]
                points.append(center + p)
                normals.append(n)
    return ObjectPointCloud(points=np.asarray(points),
                            normals=np.asarray(normals), centroid=center)


def cylinder_cloud(center, radius: float, height: float,
                   n_points: int = 64) -> ObjectPointCloud:
    center = np.asarray(center, dtype=np.float64)
    n_side = max(n_points - 16, 8)
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    k = np.arange(n_side, dtype=np.float64)
    theta = 2.0 * np.pi * k / golden
    z = (k + 0.5) / n_side - 0.5
    side = np.stack([radius * np.cos(theta), radius * np.sin(theta),
                     z * height], axis=1)
    side_n = np.stack([np.cos(theta), np.sin(theta), np.zeros(n_side)], axis=1)
    caps, caps_n = [], []
    for sign in (-1.0, 1.0):
        for j in range(8):
            ang = 2.0 * np.pi * j / 8.0
            caps.append([0.5 * radius * np.cos(ang), 0.5 * radius * np.sin(ang),
                         sign * height / 2.0])
            caps_n.append([0.0, 0.0, sign])
    points = np.concatenate([side, np.asarray(caps)], axis=0)
    normals = np.concatenate([side_n, np.asarray(caps_n)], axis=0)
    return ObjectPointCloud(points=center + points, normals=normals,
                            centroid=center)


def random_object_cloud(seed: int, center=None,
                        n_points: int = 64) -> ObjectPointCloud:
    """A seeded primitive cloud with exactly ``n_points`` points, so grasp
    samples can be stacked into batches."""
    rng = np.random.default_rng(seed)
    if center is None:
        azim = rng.uniform(-0.6, 0.6)
        dist = rng.uniform(0.45, 0.70)
        center = np.array([dist * np.sin(azim), dist * np.cos(azim),
                           rng.uniform(0.75, 1.25)])
    kind = rng.choice(["sphere", "box", "cylinder"])
    if kind == "sphere":
        cloud = sphere_cloud(center, radius=rng.uniform(0.04, 0.08),
                             n_points=n_points)
    elif kind == "box":
        cloud = box_cloud(center, half_extents=rng.uniform(0.03, 0.07, size=3),
                          n_per_face=int(np.ceil(n_points / 6)))
    else:
        cloud = cylinder_cloud(center, radius=rng.uniform(0.03, 0.06),
                               height=rng.uniform(0.08, 0.16),
                               n_points=n_points)
    if cloud.n_points > n_points:
        cloud = ObjectPointCloud(points=cloud.points[:n_points],
                                 normals=cloud.normals[:n_points],
                                 centroid=cloud.centroid)
    return cloud


# -- grasp samples ---------------------------------------------------------------


@dataclass(frozen=True)
class GraspSample:
    """One procedurally posed grasp: pose, object, labels, distances."""

    markers: np.ndarray            # (N, 3) grasp pose
    cloud: ObjectPointCloud
    contact_markers: np.ndarray    # (N,) binary
    contact_points: np.ndarray     # (P,) binary
    distances: np.ndarray          # (N,) marker -> nearest cloud point, meters


def make_grasp_sample(layout: MarkerLayout, seed: int,
                      contact_thresh: float = 0.005) -> GraspSample:
    """A reach pose whose hand markers rest on a primitive object surface.

    Body posture varies independently of the object (stance shift, crouch,
    lean), so the same object admits many grasp poses - the diversity a
    latent-variable generator is meant to capture.
    """
    rng = np.random.default_rng(seed)
    cloud = random_object_cloud(seed)
    seq = synth_motion(layout, n_frames=8, fps=30.0, seed=seed, kind="reach",
                       target=cloud.centroid)
    markers = seq.frames[-1].copy()
    hand = list(layout.hand_markers)
    body = [m for m in range(layout.n_markers) if m not in set(hand)]
    # Posture variation on the body only; hands stay object-bound.
    stance = np.array([rng.uniform(-0.12, 0.12), rng.uniform(-0.10, 0.10),
                       rng.uniform(-0.16, 0.0)])
    lean = rng.uniform(-0.08, 0.08, size=2)
    heights = markers[body, 2:3] - markers[body, 2:3].min()
    markers[body] += stance
    markers[body, :2] += lean * heights                 # lean grows with height
    # Snap hand markers onto nearby surface points for exact contact.
    chosen = rng.choice(cloud.n_points, size=len(hand), replace=len(hand) > cloud.n_points)
    markers[hand] = cloud.points[chosen]
    markers = quantize_f32(markers)
    diff = markers[:, None, :] - cloud.points[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    nearest = dist.min(axis=1)
    contact_markers = (nearest <= contact_thresh).astype(np.float64)
    contact_points = (dist.min(axis=0) <= contact_thresh).astype(np.float64)
    return GraspSample(markers=markers, cloud=cloud,
                       contact_markers=contact_markers,
                       contact_points=contact_points, distances=nearest)


# -- linear marker rig -------------------------------------------------------------


def linear_rig_matrix(layout: MarkerLayout, seed: int,
                      own_weight: float = 0.75, tilt: float = 0.08) -> np.ndarray:
    """A fixed (N, J) affine mixing matrix (rows sum to 1) used to synthesize
    marker sets that are an exact linear function of the joints.

    Anatomically shaped: each marker row puts ``own_weight`` on its dominant
    joint (taken from the layout regressor), spreads the rest, and adds a
    zero-sum tilt so the map is affine rather than convex.
    """
    rng = np.random.default_rng(seed)
    J, N = layout.n_joints, layout.n_markers
    own_idx = layout.regressor.argmax(axis=0)
    mix = rng.uniform(0.0, 1.0, size=(N, J))
    mix /= mix.sum(axis=1, keepdims=True)
    rig = (1.0 - own_weight) * mix
    rig[np.arange(N), own_idx] += own_weight
    t = rng.normal(0.0, tilt, size=(N, J))
    t -= t.mean(axis=1, keepdims=True)            # keeps row sums at 1
    return rig + t


def apply_linear_rig(joints: JointSequence, rig: np.ndarray,
                     fps: float | None = None) -> MarkerSequence:
    frames = np.einsum("nj,tjc->tnc", rig, joints.joints)
    return MarkerSequence(frames=quantize_f32(frames),
                          fps=fps if fps is not None else joints.fps)


def linear_rig_pairs(layout: MarkerLayout, n_clips: int, n_frames: int,
                     seed: int) -> list[tuple[JointSequence, MarkerSequence]]:
    """(joints, markers) pairs where markers are exactly rig @ joints."""
    rig = linear_rig_matrix(layout, seed)
    pairs = []
    for i in range(n_clips):
        base = synth_motion(layout, n_frames, fps=30.0, seed=seed + 1000 + i,
                            kind="random-smooth")
        joints = downsample(base, layout)
        markers = apply_linear_rig(joints, rig)
        pairs.append((downsample(markers, layout), markers))
    return pairs
