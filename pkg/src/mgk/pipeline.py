"""End-to-end inference: sample a grasp pose, infill the joint motion between
the start pose and the grasp, then lift the joints back to markers frame by
frame, and score the result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import AttentionConfig
from .checkpoint import load_checkpoint, load_meta
from .errors import CompositionError, ContractError
from .losses import ContactMap
from .metrics import MetricReport, contact_ratio, foot_skate, interpenetration_depth
from .models import MODEL_KINDS, GraspPoseModel, LiftUpModel, SequenceRefiner
from .motion import (JointFrame, JointSequence, MarkerLayout, MarkerSequence,
                     ObjectPointCloud, downsample_frame, interpolate_linear)
from .tensor import Tensor
from .training import clamp_endpoints, linear_inputs


def grasp_sample(model: GraspPoseModel, cloud: ObjectPointCloud, k: int,
                 seed: int, eps_zero: bool = False
                 ) -> tuple[list[np.ndarray], list[ContactMap]]:
    """Draw k grasp poses from the latent prior, conditioned on the object.

    ``eps_zero`` decodes the prior mean (z = 0) instead of sampling, which is
    deterministic independent of the seed.
    """
    if k < 1:
        raise ContractError(f"need at least one sample, got k={k}")
    z = (np.zeros((k, model.z_dim)) if eps_zero
         else np.random.default_rng(seed).standard_normal((k, model.z_dim)))
    feats = np.concatenate([cloud.points, cloud.normals], axis=1)
    feats_b = np.broadcast_to(feats, (k, *feats.shape)).copy()
    points_b = np.broadcast_to(cloud.points, (k, *cloud.points.shape)).copy()
    markers, contact_m, contact_o = model.decode_prior(Tensor(feats_b),
                                                       points_b, z)
    poses = [markers.data[i].copy() for i in range(k)]
    maps = [ContactMap(marker_probs=contact_m.data[i].copy(),
                       object_probs=contact_o.data[i].copy()) for i in range(k)]
    return poses, maps


def grasp_points(contacts: ContactMap, markers: np.ndarray,
                 top_k: int = 5) -> np.ndarray:
    """The predicted grasp points: positions of the top-contact markers."""
    order = np.argsort(-contacts.marker_probs)[:top_k]
    return markers[order]


def infill_sequence(model: SequenceRefiner, start: JointFrame, end: JointFrame,
                    n_frames: int, fps: float = 30.0) -> JointSequence:
    """Interpolate, refine, and clamp the endpoints (bit-exact by copy)."""
    if n_frames < 2:
        raise ContractError(f"need at least 2 frames, got {n_frames}")
    lin = interpolate_linear(start, end, n_frames, fps=fps).x
    if n_frames == 2:
        return JointSequence.from_x(lin, fps=fps)
    refined = clamp_endpoints(model(Tensor(lin[None])), lin[None]).data[0]
    refined[0], refined[-1] = lin[0], lin[-1]
    return JointSequence.from_x(refined, fps=fps)


def liftup_frames(model: LiftUpModel, seq: JointSequence) -> MarkerSequence:
    """Per-frame joints-to-markers decoding; frame t depends only on frame t."""
    frames = model(Tensor(seq.x)).data
    return MarkerSequence(frames=frames, fps=seq.fps)


@dataclass
class PipelineModels:
    """The three trained stages plus the layout they share."""

    grasp: GraspPoseModel
    infill: SequenceRefiner
    liftup: LiftUpModel
    layout: MarkerLayout

    def validate(self) -> None:
        problems = []
        n, j = self.layout.n_markers, self.layout.n_joints
        if self.grasp.n_markers != n:
            problems.append(f"grasp model emits {self.grasp.n_markers} markers, "
                            f"layout has {n}")
        if self.infill.n_tokens != j + 1:
            problems.append(f"infill model expects {self.infill.n_tokens} rows, "
                            f"layout implies {j + 1}")
        if self.liftup.n_joint_tokens != j + 1 or self.liftup.n_markers != n:
            problems.append("liftup model dimensions do not match the layout")
        if problems:
            raise CompositionError("; ".join(problems))


def run_full_pipeline(start_pose: np.ndarray, cloud: ObjectPointCloud,
                      models: PipelineModels, n_frames: int, seed: int,
                      fps: float = 30.0, contact_thresh: float = 0.005
                      ) -> tuple[MarkerSequence, MetricReport, ContactMap]:
    """start pose + object -> grasp pose -> joint infill -> marker liftup.

    Returns the generated marker clip, a report of the metrics computable
    without ground truth (foot skate, final-frame contact ratio and
    interpenetration depth), and the sampled grasp contact map.
    """
    models.validate()
    start_pose = np.asarray(start_pose, dtype=np.float64)
    if start_pose.shape != (models.layout.n_markers, 3):
        raise CompositionError(
            f"start pose shape {start_pose.shape} does not match layout "
            f"({models.layout.n_markers}, 3)")
    poses, maps = grasp_sample(models.grasp, cloud, k=1, seed=seed)
    start = downsample_frame(start_pose, models.layout)
    end = downsample_frame(poses[0], models.layout)
    joints = infill_sequence(models.infill, start, end, n_frames, fps=fps)
    markers = liftup_frames(models.liftup, joints)
    hands = list(models.layout.hand_markers)
    report = MetricReport(
        skate=foot_skate(markers, models.layout),
        contact_ratio=contact_ratio(markers.frames[-1, hands], cloud,
                                    thresh=contact_thresh),
        interpenetration_depth=interpenetration_depth(markers.frames[-1, hands],
                                                      cloud),
    )
    return markers, report, maps[0]


# -- checkpoint loading --------------------------------------------------------


def model_from_checkpoint(path: str):
    """Rebuild a model from an MGK1 file plus its .meta sidecar."""
    meta = load_meta(path)
    if meta is None:
        raise CompositionError(f"checkpoint {path} has no .meta sidecar; "
                               "cannot reconstruct the architecture")
    state = load_checkpoint(path)
    kind = meta["kind"]
    if kind not in MODEL_KINDS:
        raise CompositionError(f"unknown model kind '{kind}' in {path}")
    config = AttentionConfig.from_dict(meta["config"])
    dims = meta["dims"]
    base = meta.get("base_pose")
    base = np.asarray(base, dtype=np.float64) if base is not None else None
    if kind == "spatial-mask":
        model = MODEL_KINDS[kind](dims["n_markers"], config, seed=meta["seed"],
                                  base_pose=base)
    elif kind == "sequence-refiner":
        model = MODEL_KINDS[kind](dims["n_tokens"], config, seed=meta["seed"])
    elif kind == "liftup":
        model = MODEL_KINDS[kind](dims["n_tokens"], dims["n_markers"], config,
                                  seed=meta["seed"])
    else:
        model = MODEL_KINDS[kind](dims["n_markers"], config, seed=meta["seed"],
                                  z_dim=dims["z_dim"], base_pose=base)
    model.load_state_dict(state)
    return model, meta


def load_pipeline(grasp_path: str, infill_path: str, liftup_path: str,
                  layout: MarkerLayout) -> PipelineModels:
    """Load all three stages, refusing mismatched layout hashes up front."""
    loaded = {}
    hashes = {}
    for name, path in (("grasp", grasp_path), ("infill", infill_path),
                       ("liftup", liftup_path)):
        model, meta = model_from_checkpoint(path)
        loaded[name] = model
        hashes[name] = meta.get("layout_hash")
    expect = layout.hash()
    bad = {name: h for name, h in hashes.items() if h != expect}
    if bad:
        raise CompositionError(
            f"layout hash mismatch against the configured layout ({expect}): "
            + ", ".join(f"{k}={v}" for k, v in sorted(bad.items())))
    models = PipelineModels(grasp=loaded["grasp"], infill=loaded["infill"],
                            liftup=loaded["liftup"], layout=layout)
    models.validate()
    return models
