"""The pipeline's networks: masked-marker recovery, sequence refinement
(denoising and infilling share one architecture), per-frame joint-to-marker
liftup, and the grasp pose VAE.

Parameter naming is part of the contract: the masked-marker model and the
grasp encoder both expose their trunk under the ``spatial.`` prefix, and the
sequence refiner under ``temporal.``, so pretrain-to-finetune transfer is a
plain name-intersection copy.
"""

from __future__ import annotations

import numpy as np

from .blocks import (AttentionConfig, CrossAttentionDecoder, DistanceBias,
                     Linear, Module, PointCloudEncoder, SpatialTransformer,
                     SpatioTemporalTransformer)
from .errors import ContractError, ShapeError
from .tensor import Tensor, concat

_EMBED_SCALE = 0.02
_INIT_LOG_W = float(np.log(5.0))


class SpatialCore(Module):
    """Shared spatial trunk: per-token input projection, token identity
    embeddings, a learned mask embedding, and the attention stack."""

    def __init__(self, n_tokens: int, config: AttentionConfig,
                 rng: np.random.Generator):
        d = config.d_model
        self.in_proj = Linear(3, d, rng)
        self.token_embed = Tensor(rng.standard_normal((n_tokens, d)) * _EMBED_SCALE,
                                  requires_grad=True)
        self.mask_embed = Tensor(rng.standard_normal(d) * _EMBED_SCALE,
                                 requires_grad=True)
        self.stack = SpatialTransformer(config, rng, positional="none")
        self.n_tokens = n_tokens

    def __call__(self, positions: Tensor, mask: np.ndarray | None = None,
                 extra_tokens: Tensor | None = None) -> Tensor:
        if positions.shape[-2] != self.n_tokens:
            raise ShapeError(f"expected {self.n_tokens} tokens, "
                             f"got {positions.shape[-2]}")
        tok = self.in_proj(positions) + self.token_embed
        if mask is not None:
            tok = tok + Tensor(np.asarray(mask, dtype=np.float64)[..., None]) \
                * self.mask_embed
        if extra_tokens is not None:
            tok = concat([extra_tokens, tok], axis=1)
        return self.stack(tok)

    def run_tokens(self, tokens: Tensor) -> Tensor:
        """Run pre-built d-dimensional tokens through the attention stack
        (used when this core serves as a decoder over query embeddings)."""
        return self.stack(tokens)


class SpatialMaskModel(Module):
    """Recovers zeroed-out markers within a single frame from the rest.

    Predictions are offsets from ``base_pose`` (a canonical standing pose),
    so heads only ever travel pose-deviation distances during training.
    """

    KIND = "spatial-mask"

    def __init__(self, n_markers: int, config: AttentionConfig, seed: int,
                 base_pose: np.ndarray | None = None):
        rng = np.random.default_rng(seed)
        self.spatial = SpatialCore(n_markers, config, rng)
        self.head = Linear(config.d_model, 3, rng)
        self.base_pose = (np.zeros((n_markers, 3)) if base_pose is None
                          else np.asarray(base_pose, dtype=np.float64).copy())
        self.config = config
        self.n_markers = n_markers

    def __call__(self, corrupted: Tensor, mask: np.ndarray) -> Tensor:
        """(B, N, 3) corrupted markers + (B, N) mask flags -> (B, N, 3)."""
        return self.head(self.spatial(corrupted, mask=mask)) + Tensor(self.base_pose)


class SequenceRefiner(Module):
    """Residual spatio-temporal correction of a (B, T, J+1, 3) stacked clip.

    The same network serves two roles: trained on noisy clips it is the
    denoising pretraining model; trained on linearly interpolated clips it is
    the motion infill refiner. The residual form makes "input already correct"
    an exact fixed point of the zero function.
    """

    KIND = "sequence-refiner"

    def __init__(self, n_tokens: int, config: AttentionConfig, seed: int):
        rng = np.random.default_rng(seed)
        d = config.d_model
        self.temporal = _TemporalCore(n_tokens, config, rng)
        self.head = Linear(d, 3, rng, zero_init=True)
        self.config = config
        self.n_tokens = n_tokens

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-2] != self.n_tokens:
            raise ShapeError(f"expected {self.n_tokens} tokens per frame, "
                             f"got {x.shape[-2]}")
        return x + self.head(self.temporal(x))


class _TemporalCore(Module):
    def __init__(self, n_tokens: int, config: AttentionConfig,
                 rng: np.random.Generator):
        d = config.d_model
        self.in_proj = Linear(3, d, rng)
        self.token_embed = Tensor(rng.standard_normal((n_tokens, d)) * _EMBED_SCALE,
                                  requires_grad=True)
        self.stack = SpatioTemporalTransformer(config, rng,
                                               temporal_positions=True)

    def __call__(self, x: Tensor) -> Tensor:
        return self.stack(self.in_proj(x) + self.token_embed)


class LiftUpModel(Module):
    """Per-frame joints-to-markers decoder.

    A learned static blend matrix (rows over the J+1 input rows) carries the
    coarse linear lift; learnable marker queries cross-attending to the
    encoded joint tokens add the pose-dependent correction. Operates strictly
    frame by frame.
    """

    KIND = "liftup"

    def __init__(self, n_joint_tokens: int, n_markers: int,
                 config: AttentionConfig, seed: int,
                 blend_init: np.ndarray | None = None):
        rng = np.random.default_rng(seed)
        d = config.d_model
        self.in_proj = Linear(3, d, rng)
        self.joint_embed = Tensor(
            rng.standard_normal((n_joint_tokens, d)) * _EMBED_SCALE,
            requires_grad=True)
        self.encoder = SpatialTransformer(config, rng, positional="none")
        self.queries = Tensor(rng.standard_normal((n_markers, d)) * _EMBED_SCALE,
                              requires_grad=True)
        self.decoder = CrossAttentionDecoder(config, rng)
        self.head = Linear(d, 3, rng, zero_init=True)
        if blend_init is None:
            blend_init = np.full((n_markers, n_joint_tokens), 1.0 / n_joint_tokens)
        if blend_init.shape != (n_markers, n_joint_tokens):
            raise ShapeError(f"blend_init {blend_init.shape} must be "
                             f"({n_markers}, {n_joint_tokens})")
        self.blend = Tensor(blend_init.copy(), requires_grad=True)
        self.bias = Tensor(np.zeros((n_markers, 3)), requires_grad=True)
        self.config = config
        self.n_joint_tokens = n_joint_tokens
        self.n_markers = n_markers

    def __call__(self, x: Tensor) -> Tensor:
        """(B, J+1, 3) stacked joint rows -> (B, N, 3) markers.

        Works in pelvis-relative coordinates: row sums of the markers-to-
        joints regressor are 1, so the joints-to-markers inverse is the same
        linear map in relative space, and the translation rides on the pelvis
        row directly.
        """
        if x.shape[-2] != self.n_joint_tokens:
            raise ShapeError(f"expected {self.n_joint_tokens} joint rows, "
                             f"got {x.shape[-2]}")
        pelvis = x[:, :1, :]
        rel = x - pelvis
        feats = self.encoder(self.in_proj(rel) + self.joint_embed)
        B = x.shape[0]
        q = self.queries.reshape(1, self.n_markers, -1) \
                        .broadcast_to(B, self.n_markers, self.queries.shape[-1])
        h = self.decoder(q, feats)
        # 0.1 keeps early attention-branch churn from swamping the blend.
        return pelvis + self.blend @ rel + self.bias + self.head(h) * 0.1


class GraspPoseModel(Module):
    """Transformer-VAE for whole-body grasp poses conditioned on an object.

    The encoder reuses the spatial trunk (transferable from masked-marker
    pretraining) over marker tokens plus one object token; the decoder expands
    a latent draw through marker queries, takes a preliminary position guess,
    then cross-attends to per-point object features with a proximity bias
    e^(-w*d) computed from the current predicted positions (recomputed once
    per forward pass). Heads emit marker positions and sigmoid contact
    probabilities for both sides.
    """

    KIND = "grasp-vae"

    def __init__(self, n_markers: int, config: AttentionConfig, seed: int,
                 z_dim: int = 16, base_pose: np.ndarray | None = None):
        if z_dim < 1:
            raise ContractError("latent dimension must be positive")
        rng = np.random.default_rng(seed)
        d = config.d_model
        self.base_pose = (np.zeros((n_markers, 3)) if base_pose is None
                          else np.asarray(base_pose, dtype=np.float64).copy())
        self.pc_encoder = PointCloudEncoder(config, rng)
        self.spatial = SpatialCore(n_markers, config, rng)
        self.obj_token_proj = Linear(d, d, rng)
        self.mu_head = Linear(d, z_dim, rng)
        self.logvar_head = Linear(d, z_dim, rng)
        self.z_proj = Linear(z_dim, d, rng)
        self.obj_cond_proj = Linear(d, d, rng)
        self.queries = Tensor(rng.standard_normal((n_markers, d)) * _EMBED_SCALE,
                              requires_grad=True)
        self.pre_head = Linear(d, 3, rng)
        # The decoder refines the coarse latent-decoded pose by running a
        # second spatial core directly on marker positions - the same
        # function the masked-marker pretext trains, so its weights (and
        # reconstruction head) transfer into the generative path.
        self.spatial_dec = SpatialCore(n_markers, config, rng)
        self.refine_head = Linear(config.d_model, 3, rng)
        self.log_w = Tensor(_INIT_LOG_W, requires_grad=True)
        self.dec_cross = CrossAttentionDecoder(config, rng)
        self.out_head = Linear(d, 3, rng, zero_init=True)
        self.contact_head = Linear(d, 1, rng)
        self.obj_contact_head = Linear(2 * d, 1, rng)
        self.config = config
        self.n_markers = n_markers
        self.z_dim = z_dim

    def encode(self, markers: Tensor, cloud_feats: Tensor):
        """-> (mu, logvar, per-point features, global object feature)."""
        pp, gobj = self.pc_encoder(cloud_feats)
        B = markers.shape[0]
        obj_tok = self.obj_token_proj(gobj).reshape(B, 1, -1)
        h = self.spatial(markers, extra_tokens=obj_tok)
        pooled = h[:, 0]
        return self.mu_head(pooled), self.logvar_head(pooled), pp, gobj

    def decode(self, z: Tensor, pp: Tensor, gobj: Tensor, points: np.ndarray,
               want_prelim: bool = False):
        """-> (markers (B,N,3), marker contact (B,N), object contact (B,P)).

        The preliminary estimate (the body-prior refinement of the coarse
        latent decode, before object cross-attention) is returned as a fourth
        element when requested.
        """
        B = z.shape[0]
        d = self.queries.shape[-1]
        q = (self.queries.reshape(1, self.n_markers, d)
             + self.z_proj(z).reshape(B, 1, d)
             + self.obj_cond_proj(gobj).reshape(B, 1, d))
        base = Tensor(self.base_pose)
        m_coarse = self.pre_head(q) + base
        feats = self.spatial_dec(m_coarse)
        m0 = self.refine_head(feats) + base
        diff = m0.data[:, :, None, :] - points[:, None, :, :]
        distances = np.sqrt((diff * diff).sum(axis=-1))
        bias = DistanceBias(self.log_w, distances)
        h = self.dec_cross(feats, pp, bias=bias)
        markers = m0 + self.out_head(h)
        contact_m = self.contact_head(h).sigmoid().reshape(B, self.n_markers)
        body = h.mean(axis=1).reshape(B, 1, d).broadcast_to(B, pp.shape[1], d)
        contact_o = self.obj_contact_head(concat([pp, body], axis=-1)) \
            .sigmoid().reshape(B, pp.shape[1])
        if want_prelim:
            return markers, contact_m, contact_o, m0
        return markers, contact_m, contact_o

    def forward_train(self, markers: Tensor, cloud_feats: Tensor,
                      points: np.ndarray, eps: np.ndarray):
        mu, logvar, pp, gobj = self.encode(markers, cloud_feats)
        z = mu + Tensor(eps) * (logvar * 0.5).exp()
        out_markers, contact_m, contact_o, prelim = self.decode(
            z, pp, gobj, points, want_prelim=True)
        return {"mu": mu, "logvar": logvar, "markers": out_markers,
                "contact_markers": contact_m, "contact_points": contact_o,
                "prelim_markers": prelim}

    def decode_prior(self, cloud_feats: Tensor, points: np.ndarray,
                     z_values: np.ndarray):
        """Decode given latent draws (e.g. N(0, I) samples, or zeros for the
        prior mean) against one object replicated across the batch."""
        pp, gobj = self.pc_encoder(cloud_feats)
        return self.decode(Tensor(z_values), pp, gobj, points)


MODEL_KINDS = {
    SpatialMaskModel.KIND: SpatialMaskModel,
    SequenceRefiner.KIND: SequenceRefiner,
    LiftUpModel.KIND: LiftUpModel,
    GraspPoseModel.KIND: GraspPoseModel,
}
