"""Training loops for the three pretraining tasks and the two finetuned
stages, plus checkpoint emission and pretrain-to-finetune weight transfer.

Every run is fully determined by its :class:`TrainRun` seed: model init,
data splits, shuffling, masking/noise draws, and latent samples all derive
from it, so identical configurations produce bit-identical checkpoints.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .blocks import AttentionConfig
from .checkpoint import TransferReport, load_checkpoint, save_checkpoint, transfer_weights
from .errors import ContractError, ShapeError, TrainingError
from .losses import LossWeights, bce_contact, consistency_loss, kl_divergence, \
    l_liftup, sequence_loss
from .metrics import ade
from .models import GraspPoseModel, LiftUpModel, SequenceRefiner, SpatialMaskModel
from .motion import JointSequence, MarkerLayout, MarkerSequence, interpolate_linear
from .optim import Adam
from .synth import GraspSample, rest_pose
from .tensor import Tensor, concat, euclidean_norm

VAL_FRACTION = 0.15


def copy_joint_blend(layout: MarkerLayout) -> np.ndarray:
    """Blend-matrix init that copies each marker's dominant joint (offset by
    one for the pelvis row) - the natural first guess at inverting the
    markers-to-joints regressor."""
    init = np.zeros((layout.n_markers, layout.n_joints + 1))
    init[np.arange(layout.n_markers), layout.regressor.argmax(axis=0) + 1] = 1.0
    return init


@dataclass
class TrainRun:
    """Reproducible run description; the seed determines everything."""

    seed: int
    epochs: int
    batch_size: int = 16
    lr: float = 1e-4
    lr_final: float | None = None    # geometric per-epoch decay target
    beta2: float = 0.999
    checkpoint_path: str | None = None

    def epoch_lr(self, epoch: int) -> float:
        if self.lr_final is None or self.epochs <= 1:
            return self.lr
        frac = epoch / (self.epochs - 1)
        return float(self.lr * (self.lr_final / self.lr) ** frac)


@dataclass
class TrainResult:
    model: object
    loss_curve: list[dict] = field(default_factory=list)
    val_curve: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)
    transfer: TransferReport | None = None
    checkpoint_path: str | None = None

    @property
    def final_train_loss(self) -> float:
        return self.loss_curve[-1]["loss"] if self.loss_curve else float("nan")

    @property
    def final_val_loss(self) -> float:
        return self.val_curve[-1]["val_loss"] if self.val_curve else float("nan")


def _split(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    idx = rng.permutation(n)
    n_val = max(1, int(round(n * VAL_FRACTION))) if n > 1 else 0
    return idx[n_val:], idx[:n_val]


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _check_finite(value: float, step: int) -> float:
    if not np.isfinite(value):
        raise TrainingError("loss became non-finite", step=step)
    return value


def file_hash(path: str | os.PathLike) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()[:16]


def _resolve_pretrained(pretrained) -> tuple[dict | None, str]:
    if pretrained is None:
        return None, "scratch"
    if isinstance(pretrained, dict):
        return pretrained, "in-memory"
    return load_checkpoint(pretrained), file_hash(pretrained)


def _emit(result: TrainResult, run: TrainRun, layout: MarkerLayout,
          kind: str, config: AttentionConfig, dims: dict) -> TrainResult:
    if run.checkpoint_path is None:
        return result
    base = getattr(result.model, "base_pose", None)
    meta = {
        "kind": kind,
        "config": config.to_dict(),
        "base_pose": (None if base is None
                      else [[float(v) for v in row] for row in base]),
        "dims": dims,
        "layout_hash": layout.hash(),
        "seed": run.seed,
        "epochs": run.epochs,
        "lr": run.lr,
        "final_train_loss": result.final_train_loss,
        "final_val_loss": result.final_val_loss,
        "loss_curve": [[row["step"], row["loss"]] for row in result.loss_curve],
        "val_curve": result.val_curve,
        "transfer": ({"source": result.extras.get("transfer_source", "scratch"),
                      "transferred": result.transfer.transferred,
                      "missing": result.transfer.missing,
                      "extra": result.transfer.extra}
                     if result.transfer is not None else "scratch"),
        "extras": {k: v for k, v in result.extras.items()
                   if isinstance(v, (int, float, str))},
    }
    save_checkpoint(run.checkpoint_path, result.model.state_dict(), meta=meta)
    result.checkpoint_path = run.checkpoint_path
    return result


def _mask_batch(frames: np.ndarray, k: int, rng: np.random.Generator):
    """Zero k random markers per frame; returns (corrupted, flags (B,N))."""
    B, N, _ = frames.shape
    order = np.argsort(rng.random((B, N)), axis=1)[:, :k]
    flags = np.zeros((B, N))
    np.put_along_axis(flags, order, 1.0, axis=1)
    corrupted = frames * (1.0 - flags[..., None])
    return corrupted, flags


def _masked_l1(pred: Tensor, gt: np.ndarray, flags: np.ndarray) -> Tensor:
    norms = euclidean_norm(pred - Tensor(gt), axis=-1)
    return (norms * Tensor(flags)).sum() * (1.0 / max(flags.sum(), 1.0))


def pretrain_spatial(sequences: list[MarkerSequence], layout: MarkerLayout,
                     config: AttentionConfig, mask_ratio: float,
                     run: TrainRun) -> TrainResult:
    """Masked-marker recovery pretraining on per-frame marker sets.

    Trains on the masked subset only (the unmasked markers are an identity
    copy); validation reports the same masked L1 next to the copy-the-rest-
    pose baseline.
    """
    if not sequences:
        raise ContractError("pretrain_spatial needs a non-empty dataset")
    if not (0.0 < mask_ratio < 1.0):
        raise ContractError(
            "masked-only training needs mask_ratio in (0, 1); ratio 0 leaves "
            "nothing to recover")
    frames = np.concatenate([s.frames for s in sequences], axis=0)
    if frames.shape[1] != layout.n_markers:
        raise ShapeError(f"dataset has {frames.shape[1]} markers, layout "
                         f"expects {layout.n_markers}")
    k = max(1, int(round(mask_ratio * layout.n_markers)))
    rng = np.random.default_rng(run.seed)
    model = SpatialMaskModel(layout.n_markers, config, seed=run.seed,
                             base_pose=rest_pose(layout))
    opt = Adam(model.named_parameters(), lr=run.lr, beta2=run.beta2)
    train_idx, val_idx = _split(len(frames), rng)
    val_frames = frames[val_idx] if len(val_idx) else frames[:1]
    val_corr, val_flags = _mask_batch(val_frames, k, np.random.default_rng(run.seed + 1))
    rest = rest_pose(layout)
    baseline = float(_masked_l1(Tensor(np.broadcast_to(rest, val_frames.shape)),
                                val_frames, val_flags).data)

    result = TrainResult(model=model, extras={"baseline_val_l1": baseline})
    step = 0
    for epoch in range(run.epochs):
        opt.set_lr(run.epoch_lr(epoch))
        for batch in _minibatches(len(train_idx), run.batch_size, rng):
            gt = frames[train_idx[batch]]
            corrupted, flags = _mask_batch(gt, k, rng)
            opt.zero_grad()
            loss = _masked_l1(model(Tensor(corrupted), flags), gt, flags)
            value = _check_finite(loss.item(), step)
            loss.backward()
            opt.step()
            result.loss_curve.append({"step": step, "loss": value})
            step += 1
        val = float(_masked_l1(model(Tensor(val_corr), val_flags),
                               val_frames, val_flags).data)
        result.val_curve.append({"epoch": epoch, "val_loss": val})
    result.extras["val_masked_l1"] = result.final_val_loss
    return _emit(result, run, layout, SpatialMaskModel.KIND, config,
                 {"n_markers": layout.n_markers})


def pretrain_temporal(clips: list[JointSequence], layout: MarkerLayout,
                      config: AttentionConfig, sigma: float,
                      weights: LossWeights, run: TrainRun,
                      sigma_jitter: bool = False) -> TrainResult:
    """Denoise Gaussian-corrupted joint clips under the combined sequence loss.

    ``sigma_jitter`` scales the noise level per training sample over
    U(0.25, 1.5) * sigma, so the model learns to project a whole band of
    corruption levels back onto the motion manifold (validation noise stays
    at the nominal sigma).
    """
    if sigma <= 0:
        raise ContractError("sigma must be positive: nothing to denoise at 0")
    if not clips:
        raise ContractError("pretrain_temporal needs a non-empty dataset")
    if any(c.n_frames < 8 for c in clips):
        raise ContractError("clips must have at least 8 frames")
    x = np.stack([c.x for c in clips])                  # (C, T, J+1, 3)
    if x.shape[2] != layout.n_joints + 1:
        raise ShapeError(f"clips have {x.shape[2] - 1} joints, layout expects "
                         f"{layout.n_joints}")
    foot_rows = [j + 1 for j in layout.foot_joints()]
    rng = np.random.default_rng(run.seed)
    model = SequenceRefiner(layout.n_joints + 1, config, seed=run.seed)
    opt = Adam(model.named_parameters(), lr=run.lr, beta2=run.beta2)
    train_idx, val_idx = _split(len(x), rng)
    val_clean = x[val_idx] if len(val_idx) else x[:1]
    val_noisy = val_clean + np.random.default_rng(run.seed + 1) \
        .normal(0.0, sigma, size=val_clean.shape)
    noisy_mse = float(((val_noisy - val_clean) ** 2).mean())

    result = TrainResult(model=model, extras={"noisy_input_mse": noisy_mse})
    step = 0
    for epoch in range(run.epochs):
        opt.set_lr(run.epoch_lr(epoch))
        for batch in _minibatches(len(train_idx), run.batch_size, rng):
            clean = x[train_idx[batch]]
            scale = (rng.uniform(0.25, 1.5, size=(len(batch), 1, 1, 1))
                     if sigma_jitter else 1.0)
            noisy = clean + rng.normal(0.0, sigma, size=clean.shape) * scale
            opt.zero_grad()
            loss, parts = sequence_loss(model(Tensor(noisy)), clean,
                                        layout.joint_weights, foot_rows, weights)
            value = _check_finite(loss.item(), step)
            loss.backward()
            opt.step()
            row = {"step": step, "loss": value}
            row.update({k: float(v.data) for k, v in parts.items()})
            result.loss_curve.append(row)
            step += 1
        denoised = model(Tensor(val_noisy)).data
        val_mse = float(((denoised - val_clean) ** 2).mean())
        result.val_curve.append({"epoch": epoch, "val_loss": val_mse})
    result.extras["denoised_mse"] = result.final_val_loss
    result.extras["clean_identity_mse"] = float(
        ((model(Tensor(val_clean)).data - val_clean) ** 2).mean())
    return _emit(result, run, layout, SequenceRefiner.KIND, config,
                 {"n_tokens": layout.n_joints + 1})


def _rms(err: np.ndarray) -> float:
    return float(np.sqrt((np.linalg.norm(err, axis=-1) ** 2).mean()))


def pretrain_liftup(pairs: list[tuple[JointSequence, MarkerSequence]],
                    layout: MarkerLayout, config: AttentionConfig,
                    run: TrainRun) -> TrainResult:
    """Per-frame joints-to-markers regression with hand-weighted squared loss."""
    if not pairs:
        raise ContractError("pretrain_liftup needs a non-empty dataset")
    for joints, markers in pairs:
        if joints.n_joints != layout.n_joints or markers.n_markers != layout.n_markers:
            raise ContractError("pair does not match the layout dimensions")
        if joints.n_frames != markers.n_frames:
            raise ContractError("paired clips disagree in frame count")
    x = np.concatenate([j.x for j, _ in pairs], axis=0)       # (M, J+1, 3)
    y = np.concatenate([m.frames for _, m in pairs], axis=0)  # (M, N, 3)
    rng = np.random.default_rng(run.seed)
    model = LiftUpModel(layout.n_joints + 1, layout.n_markers, config,
                        seed=run.seed, blend_init=copy_joint_blend(layout))
    opt = Adam(model.named_parameters(), lr=run.lr, beta2=run.beta2)
    train_idx, val_idx = _split(len(x), rng)
    vx = x[val_idx] if len(val_idx) else x[:1]
    vy = y[val_idx] if len(val_idx) else y[:1]

    result = TrainResult(model=model)
    step = 0
    for epoch in range(run.epochs):
        opt.set_lr(run.epoch_lr(epoch))
        for batch in _minibatches(len(train_idx), run.batch_size, rng):
            opt.zero_grad()
            loss = l_liftup(model(Tensor(x[train_idx[batch]])),
                            y[train_idx[batch]], layout.marker_weights)
            value = _check_finite(loss.item(), step)
            loss.backward()
            opt.step()
            result.loss_curve.append({"step": step, "loss": value})
            step += 1
        err = model(Tensor(vx)).data - vy
        result.val_curve.append({"epoch": epoch, "val_loss": _rms(err)})
    err = model(Tensor(vx)).data - vy
    hands = list(layout.hand_markers)
    body = [m for m in range(layout.n_markers) if m not in set(hands)]
    result.extras["val_rms"] = _rms(err)
    result.extras["hand_rms"] = _rms(err[:, hands])
    result.extras["body_rms"] = _rms(err[:, body])
    return _emit(result, run, layout, LiftUpModel.KIND, config,
                 {"n_tokens": layout.n_joints + 1, "n_markers": layout.n_markers})


def _stack_grasp(samples: list[GraspSample]):
    markers = np.stack([s.markers for s in samples])
    feats = np.stack([np.concatenate([s.cloud.points, s.cloud.normals], axis=1)
                      for s in samples])
    points = np.stack([s.cloud.points for s in samples])
    contacts = np.stack([np.concatenate([s.contact_markers, s.contact_points])
                         for s in samples])
    distances = np.stack([s.distances for s in samples])
    return markers, feats, points, contacts, distances


def train_grasp(samples: list[GraspSample], layout: MarkerLayout,
                config: AttentionConfig, run: TrainRun,
                pretrained_spatial=None, z_dim: int = 16,
                lambda_kl: float = 0.005, lambda_consistency: float = 1.0,
                kl_anneal_frac: float = 0.2) -> TrainResult:
    """Grasp pose VAE training: position + contact BCE + annealed KL +
    marker-object distance consistency. ``pretrained_spatial`` initializes the
    encoder trunk by name prefix."""
    if not samples:
        raise ContractError("train_grasp needs a non-empty dataset")
    if any(s.markers.shape[0] != layout.n_markers for s in samples):
        raise ContractError("grasp samples do not match the layout marker count")
    markers, feats, points, contacts, distances = _stack_grasp(samples)
    rng = np.random.default_rng(run.seed)
    model = GraspPoseModel(layout.n_markers, config, seed=run.seed, z_dim=z_dim,
                           base_pose=rest_pose(layout))
    result = TrainResult(model=model)
    source, source_tag = _resolve_pretrained(pretrained_spatial)
    if source is not None:
        params = model.named_parameters()
        result.transfer = transfer_weights(params, source, prefix="spatial.")
        # The decoder core shares the pretext architecture; remap the
        # checkpoint's spatial.* names onto spatial_dec.* and load it too.
        remapped = {"spatial_dec." + k[len("spatial."):]: v
                    for k, v in source.items() if k.startswith("spatial.")}
        # The pretext reconstruction head maps trunk features to body-scale
        # positions; it seeds the decoder's refinement head.
        remapped.update({"refine_head." + k[len("head."):]: v
                         for k, v in source.items() if k.startswith("head.")})
        if remapped:
            for pref in ("spatial_dec.", "refine_head."):
                sub = {k: v for k, v in remapped.items() if k.startswith(pref)}
                if not sub:
                    continue
                rep = transfer_weights(params, sub, prefix=pref)
                result.transfer.transferred += rep.transferred
                result.transfer.missing += rep.missing
                result.transfer.extra += rep.extra
        result.extras["transfer_source"] = source_tag
    opt = Adam(model.named_parameters(), lr=run.lr, beta2=run.beta2)
    train_idx, val_idx = _split(len(samples), rng)
    vi = val_idx if len(val_idx) else np.arange(min(1, len(samples)))

    n_train = max(len(train_idx), 1)
    steps_per_epoch = int(np.ceil(n_train / run.batch_size))
    anneal_steps = max(1, int(kl_anneal_frac * run.epochs * steps_per_epoch))

    def val_loss() -> float:
        out = model.forward_train(Tensor(markers[vi]), Tensor(feats[vi]),
                                  points[vi], np.zeros((len(vi), z_dim)))
        recon = l_liftup(out["markers"], markers[vi], layout.marker_weights)
        bce = bce_contact(concat([out["contact_markers"],
                                  out["contact_points"]], axis=1),
                          contacts[vi])
        cons = consistency_loss(out["markers"], points[vi], distances[vi])
        return float((recon + bce + cons * lambda_consistency).data)

    step = 0
    for epoch in range(run.epochs):
        opt.set_lr(run.epoch_lr(epoch))
        for batch in _minibatches(len(train_idx), run.batch_size, rng):
            sel = train_idx[batch]
            eps = rng.standard_normal((len(sel), z_dim))
            opt.zero_grad()
            out = model.forward_train(Tensor(markers[sel]), Tensor(feats[sel]),
                                      points[sel], eps)
            recon = l_liftup(out["markers"], markers[sel], layout.marker_weights)
            bce = bce_contact(concat([out["contact_markers"],
                                      out["contact_points"]], axis=1),
                              contacts[sel])
            kl = kl_divergence(out["mu"], out["logvar"])
            cons = consistency_loss(out["markers"], points[sel], distances[sel])
            kl_weight = lambda_kl * min(1.0, (step + 1) / anneal_steps)
            loss = recon + bce + kl * kl_weight + cons * lambda_consistency
            value = _check_finite(loss.item(), step)
            loss.backward()
            opt.step()
            result.loss_curve.append({
                "step": step, "loss": value, "recon": float(recon.data),
                "bce": float(bce.data), "kl": float(kl.data),
                "consistency": float(cons.data), "kl_weight": kl_weight})
            step += 1
        result.val_curve.append({"epoch": epoch, "val_loss": val_loss()})
    return _emit(result, run, layout, GraspPoseModel.KIND, config,
                 {"n_markers": layout.n_markers, "z_dim": z_dim})


def linear_inputs(clip: JointSequence) -> np.ndarray:
    """The infill model input: straight-line interpolation of the clip's
    endpoint frames, as a stacked (T, J+1, 3) view."""
    interp = interpolate_linear(clip.frame(0), clip.frame(clip.n_frames - 1),
                                clip.n_frames, fps=clip.fps)
    return interp.x


def clamp_endpoints(pred: Tensor, target_x: np.ndarray) -> Tensor:
    """Overwrite the first/last output frames with the given endpoint rows."""
    first = Tensor(target_x[:, :1])
    last = Tensor(target_x[:, -1:])
    return concat([first, pred[:, 1:-1], last], axis=1)


def train_infill(clips: list[JointSequence], layout: MarkerLayout,
                 config: AttentionConfig, weights: LossWeights, run: TrainRun,
                 pretrained_temporal=None, gated_foot: bool = True) -> TrainResult:
    """Refine linear interpolations toward the true clips under the combined
    sequence loss, with endpoint frames hard-clamped to the inputs."""
    if not clips:
        raise ContractError("train_infill needs a non-empty dataset")
    if any(c.n_frames < 2 for c in clips):
        raise ContractError("infill clips need at least 2 frames")
    gt = np.stack([c.x for c in clips])
    lin = np.stack([linear_inputs(c) for c in clips])
    foot_rows = [j + 1 for j in layout.foot_joints()]
    rng = np.random.default_rng(run.seed)
    model = SequenceRefiner(layout.n_joints + 1, config, seed=run.seed)
    result = TrainResult(model=model)
    source, source_tag = _resolve_pretrained(pretrained_temporal)
    if source is not None:
        result.transfer = transfer_weights(model.named_parameters(), source,
                                           prefix="temporal.")
        result.extras["transfer_source"] = source_tag
    opt = Adam(model.named_parameters(), lr=run.lr, beta2=run.beta2)
    train_idx, val_idx = _split(len(clips), rng)
    vi = val_idx if len(val_idx) else np.arange(min(1, len(clips)))
    result.extras["val_linear_ade"] = ade(lin[vi][:, :, 1:], gt[vi][:, :, 1:])

    step = 0
    for epoch in range(run.epochs):
        opt.set_lr(run.epoch_lr(epoch))
        for batch in _minibatches(len(train_idx), run.batch_size, rng):
            sel = train_idx[batch]
            opt.zero_grad()
            pred = clamp_endpoints(model(Tensor(lin[sel])), gt[sel])
            loss, parts = sequence_loss(pred, gt[sel], layout.joint_weights,
                                        foot_rows, weights, gated_foot=gated_foot)
            value = _check_finite(loss.item(), step)
            loss.backward()
            opt.step()
            row = {"step": step, "loss": value}
            row.update({k: float(v.data) for k, v in parts.items()})
            result.loss_curve.append(row)
            step += 1
        vp = clamp_endpoints(model(Tensor(lin[vi])), gt[vi])
        vloss, _ = sequence_loss(vp, gt[vi], layout.joint_weights, foot_rows,
                                 weights, gated_foot=gated_foot)
        result.val_curve.append({
            "epoch": epoch, "val_loss": float(vloss.data),
            "val_ade": ade(vp.data[:, :, 1:], gt[vi][:, :, 1:])})
    result.extras["val_ade"] = result.val_curve[-1]["val_ade"]
    return _emit(result, run, layout, SequenceRefiner.KIND, config,
                 {"n_tokens": layout.n_joints + 1})
