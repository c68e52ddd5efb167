"""Conditional VQ-VAE that splits a gaze shift between eyes and head.

Given a context c (current eye pose, current head pose, 3D target point)
and a motion allocation y (eye yaw/pitch increments, head yaw/pitch/roll
increments), the model embeds the pair, snaps the latent onto one of K
codebook vectors, and decodes the code together with the context back
into a motion allocation.

Architecture (widths from :class:`VQVAEConfig`):

    recon encoder   y (5)  -> 64 -> 64          rectifier stack
    cond  encoder   c (8)  -> 64 -> 64          rectifier stack
    fusion in       [f_y, f_c] (128) -> z_e (8) single affine layer
    codebook        K x 8 nearest-neighbour lookup
    fusion out      [z_q, f_c] (72)  -> 64      single affine layer
    decoder         64 -> 64 -> 64 -> y_hat (5)

The training objective is

    total = rec + ||sg[z_e] - z_q||^2 + beta * ||z_e - sg[z_q]||^2

where ``rec`` compares predicted and ground-truth target poses with the
geodesic rotation distance (head term weighted by ``lambda_rc``), sg[.]
is stop-gradient, and the quantisation step backpropagates as identity
(straight-through). Consequences, relied on by tests: the codebook is
updated only by the middle term, the encoder only by the first and last,
and the reconstruction term is invariant to 2*pi shifts of any angle.

Codes are 0-based indices into the codebook array everywhere (files,
reports, APIs).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nets, so3
from .so3 import EyePose, HeadPose

# Column layout of the flattened condition input.
CONDITION_FIELDS = (
    "eye_yaw",
    "eye_pitch",
    "head_yaw",
    "head_pitch",
    "head_roll",
    "target_x",
    "target_y",
    "target_z",
)

# Column layout of a flattened motion allocation.
ALLOCATION_FIELDS = (
    "delta_eye_yaw",
    "delta_eye_pitch",
    "delta_head_yaw",
    "delta_head_pitch",
    "delta_head_roll",
)

_MIN_TARGET_NORM = 0.05


@dataclass(frozen=True)
class VQVAEConfig:
    codebook_size: int = 10
    latent_dim: int = 8
    hidden_width: int = 64
    beta: float = 0.25
    lambda_rc: float = 1.0
    # Target coordinates are divided by this scale before entering the
    # condition encoder, bringing metres in a ~3 m workspace to order one.
    target_scale: float = 2.0
    # Codebook entries start uniform in [-scale, scale]^D. The default spans
    # the untrained encoder's output range; entries the data never claims
    # stay where they started (plain VQ, no usage resets), so effective code
    # usage is data-driven.
    codebook_init_scale: float = 1.5

    def __post_init__(self):
        if self.codebook_size < 1:
            raise ValueError("codebook_size must be at least 1")
        if self.latent_dim < 1 or self.hidden_width < 1:
            raise ValueError("latent_dim and hidden_width must be positive")
        if self.beta < 0 or self.lambda_rc < 0:
            raise ValueError("beta and lambda_rc must be non-negative")
        if self.target_scale <= 0:
            raise ValueError("target_scale must be positive")
        if self.codebook_init_scale <= 0:
            raise ValueError("codebook_init_scale must be positive")


@dataclass(frozen=True)
class ConditionVector:
    """Gaze context: current poses plus the 3D target point (base frame, metres)."""

    eye: EyePose
    head: HeadPose
    target: np.ndarray

    def __post_init__(self):
        target = np.asarray(self.target, dtype=float)
        if target.shape != (3,):
            raise ValueError(f"target must be a 3-vector, got shape {target.shape}")
        if not np.all(np.isfinite(target)):
            raise ValueError("target coordinates must be finite")
        if float(np.linalg.norm(target)) <= _MIN_TARGET_NORM:
            raise ValueError(
                f"target norm must exceed {_MIN_TARGET_NORM} m (got {np.linalg.norm(target):.4f})"
            )
        object.__setattr__(self, "target", target)

    def as_input(self) -> np.ndarray:
        """Flatten to the 8 inputs listed in CONDITION_FIELDS (unnormalised)."""
        return np.concatenate([self.eye.as_array(), self.head.as_array(), self.target])

    @classmethod
    def from_input(cls, vec: np.ndarray) -> "ConditionVector":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (len(CONDITION_FIELDS),):
            raise ValueError(f"condition vector must have {len(CONDITION_FIELDS)} entries")
        return cls(EyePose(vec[0], vec[1]), HeadPose(vec[2], vec[3], vec[4]), vec[5:8])


@dataclass(frozen=True)
class MotionAllocation:
    """Eye and head rotation increments realising one gaze shift (radians)."""

    delta_eye: np.ndarray
    delta_head: np.ndarray

    def __post_init__(self):
        de = np.asarray(self.delta_eye, dtype=float)
        dh = np.asarray(self.delta_head, dtype=float)
        if de.shape != (2,) or dh.shape != (3,):
            raise ValueError("delta_eye must be (2,) and delta_head (3,)")
        if not (np.all(np.isfinite(de)) and np.all(np.isfinite(dh))):
            raise ValueError("motion increments must be finite")
        if np.abs(de).max() > math.pi or np.abs(dh).max() > math.pi:
            raise ValueError("motion increments must lie within [-pi, pi]")
        object.__setattr__(self, "delta_eye", de)
        object.__setattr__(self, "delta_head", dh)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.delta_eye, self.delta_head])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "MotionAllocation":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (len(ALLOCATION_FIELDS),):
            raise ValueError(f"allocation vector must have {len(ALLOCATION_FIELDS)} entries")
        return cls(vec[:2], vec[2:5])


@dataclass
class QuantizationResult:
    index: int
    z_e: np.ndarray
    z_q: np.ndarray


def quantize_rows(Z: np.ndarray, codebook: np.ndarray):
    """Nearest codebook entry per row; ties go to the smallest index."""
    codebook = np.asarray(codebook, dtype=float)
    if codebook.ndim != 2 or codebook.shape[0] == 0:
        raise ValueError("codebook must be a non-empty (K, D) array")
    Z = np.asarray(Z, dtype=float)
    if Z.shape[-1] != codebook.shape[1]:
        raise ValueError(
            f"latent width {Z.shape[-1]} does not match codebook width {codebook.shape[1]}"
        )
    d2 = ((Z[..., None, :] - codebook) ** 2).sum(axis=-1)
    idx = np.argmin(d2, axis=-1)  # argmin returns the first minimum on ties
    return idx, codebook[idx]


def quantize(z_e: np.ndarray, codebook: np.ndarray) -> QuantizationResult:
    """Quantise a single latent vector.

    During backpropagation the lookup is treated as identity
    (straight-through); see ConditionalVQVAE.loss_and_grads.
    """
    z_e = np.asarray(z_e, dtype=float)
    if z_e.ndim != 1:
        raise ValueError("quantize expects a single latent vector")
    if not np.all(np.isfinite(z_e)):
        raise ValueError("latent vector must be finite")
    idx, z_q = quantize_rows(z_e[None, :], codebook)
    return QuantizationResult(int(idx[0]), z_e.copy(), z_q[0].copy())


def reconstruction_terms(pred: np.ndarray, true: np.ndarray, cond: np.ndarray,
                         lambda_rc: float = 1.0, want_grad: bool = True):
    """Rotation-aware reconstruction loss per sample.

    Both allocations are composed with the current poses from ``cond`` and
    compared as rotations: loss_i = d(eye_hat, eye_true) + lambda_rc *
    d(head_hat, head_true). Because the comparison happens on SO(3) the
    value is invariant to 2*pi shifts in any predicted angle. Returns
    (values (n,), grad wrt pred (n, 5) or None).
    """
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    cond = np.asarray(cond, dtype=float)
    eye_true = cond[:, 0:2] + true[:, 0:2]
    head_true = cond[:, 2:5] + true[:, 2:5]
    eye_pred = cond[:, 0:2] + pred[:, 0:2]
    head_pred = cond[:, 2:5] + pred[:, 2:5]
    zeros = np.zeros((len(pred), 1))
    R_eye_true = so3.rotation_zyx(np.concatenate([eye_true, zeros], axis=1))
    R_head_true = so3.rotation_zyx(head_true)
    if want_grad:
        d_eye, g_eye = so3.geodesic_to_reference_with_grad(
            np.concatenate([eye_pred, zeros], axis=1), R_eye_true
        )
        d_head, g_head = so3.geodesic_to_reference_with_grad(head_pred, R_head_true)
        grad = np.concatenate([g_eye[:, :2], lambda_rc * g_head], axis=1)
    else:
        d_eye = so3.geodesic_rows(
            so3.rotation_zyx(np.concatenate([eye_pred, zeros], axis=1)), R_eye_true
        )
        d_head = so3.geodesic_rows(so3.rotation_zyx(head_pred), R_head_true)
        grad = None
    return d_eye + lambda_rc * d_head, grad


@dataclass
class VQLossTerms:
    """Batch-mean loss terms. ``total`` applies the term weights; the
    individual fields are unweighted."""

    total: float
    rec: float
    embed: float
    commit: float


class ConditionalVQVAE:
    """Conditional VQ-VAE over motion allocations. See module docstring."""

    def __init__(self, config: VQVAEConfig = VQVAEConfig(), seed: int = 0):
        self.config = config
        H, D, K = config.hidden_width, config.latent_dim, config.codebook_size
        seeds = np.random.SeedSequence(seed).spawn(6)
        rngs = [np.random.default_rng(s) for s in seeds]
        self.recon_encoder = nets.DenseNetwork.create([5, H, H], rngs[0], ["relu", "relu"])
        self.cond_encoder = nets.DenseNetwork.create([8, H, H], rngs[1], ["relu", "relu"])
        self.fusion_in = nets.DenseNetwork.create([2 * H, D], rngs[2], ["identity"])
        scale = config.codebook_init_scale
        self.codebook = rngs[3].uniform(-scale, scale, size=(K, D))
        self.fusion_out = nets.DenseNetwork.create([D + H, H], rngs[4], ["identity"])
        self.decoder = nets.DenseNetwork.create([H, H, H, 5], rngs[5], ["relu", "relu", "identity"])
        self._sections = {
            "recon_encoder": self.recon_encoder,
            "cond_encoder": self.cond_encoder,
            "fusion_in": self.fusion_in,
            "fusion_out": self.fusion_out,
            "decoder": self.decoder,
        }

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for section, net in self._sections.items():
            for name, p in net.params().items():
                out[f"{section}.{name}"] = p
        out["codebook"] = self.codebook
        return out

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        own = self.params()
        for name, value in params.items():
            own[name][...] = value

    def fingerprint(self) -> str:
        return nets.params_fingerprint(self.params())

    # -- forward pieces ------------------------------------------------------

    def condition_inputs(self, C: np.ndarray) -> np.ndarray:
        """Normalise raw condition rows for the condition encoder."""
        X = np.array(C, dtype=float)
        X[:, 5:8] /= self.config.target_scale
        return X

    def encode_rows(self, Y: np.ndarray, C: np.ndarray) -> np.ndarray:
        f_y = self.recon_encoder.forward(np.asarray(Y, dtype=float))
        f_c = self.cond_encoder.forward(self.condition_inputs(C))
        return self.fusion_in.forward(np.concatenate([f_y, f_c], axis=1))

    def decode_rows(self, Zq: np.ndarray, C: np.ndarray) -> np.ndarray:
        f_c = self.cond_encoder.forward(self.condition_inputs(C))
        h = self.fusion_out.forward(np.concatenate([Zq, f_c], axis=1))
        return self.decoder.forward(h)

    def encode(self, y: MotionAllocation, c: ConditionVector) -> np.ndarray:
        """Continuous latent for one (allocation, condition) pair."""
        return self.encode_rows(y.as_vector()[None, :], c.as_input()[None, :])[0]

    def decode(self, z_q: np.ndarray, c: ConditionVector) -> MotionAllocation:
        """Motion allocation for one latent (typically a codebook entry)."""
        z_q = np.asarray(z_q, dtype=float)
        if z_q.shape != (self.config.latent_dim,):
            raise ValueError(f"latent must have width {self.config.latent_dim}")
        pred = self.decode_rows(z_q[None, :], c.as_input()[None, :])[0]
        return MotionAllocation(pred[:2], pred[2:5])

    # -- loss ----------------------------------------------------------------

    def vq_loss(self, y: MotionAllocation, c: ConditionVector) -> VQLossTerms:
        terms, _ = self.loss_and_grads(
            y.as_vector()[None, :], c.as_input()[None, :], want_grads=False
        )
        return terms

    def loss_and_grads(self, Y: np.ndarray, C: np.ndarray, *, rec_weight: float = 1.0,
                       embed_weight: float = 1.0, commit_weight: float | None = None,
                       want_grads: bool = True):
        """Batch-mean loss terms and, optionally, parameter gradients.

        ``commit_weight`` defaults to config.beta; the tests zero individual
        weights to check that gradient routing honours the stop-gradients.
        Gradients follow the straight-through convention: the quantisation
        step is skipped (identity) on the reconstruction path, the codebook
        is driven only by the embed term, the encoder additionally by the
        commitment term.
        """
        if commit_weight is None:
            commit_weight = self.config.beta
        Y = np.asarray(Y, dtype=float)
        C = np.asarray(C, dtype=float)
        if Y.ndim != 2 or C.ndim != 2 or len(Y) != len(C):
            raise ValueError("Y and C must be matching row batches")
        if len(Y) == 0:
            raise ValueError("empty batch")
        n = len(Y)
        H = self.config.hidden_width
        D = self.config.latent_dim

        f_y = self.recon_encoder.forward(Y)
        f_c = self.cond_encoder.forward(self.condition_inputs(C))
        z_e = self.fusion_in.forward(np.concatenate([f_y, f_c], axis=1))
        idx, z_q = quantize_rows(z_e, self.codebook)
        h = self.fusion_out.forward(np.concatenate([z_q, f_c], axis=1))
        pred = self.decoder.forward(h)

        rec_vals, rec_grad = reconstruction_terms(
            pred, Y, C, self.config.lambda_rc, want_grad=want_grads
        )
        diff = z_e - z_q
        vq_vals = (diff * diff).sum(axis=1)

        rec = float(rec_vals.mean())
        embed = float(vq_vals.mean())
        commit = embed  # same value; the two terms differ only in gradient routing
        total = rec_weight * rec + embed_weight * embed + commit_weight * commit
        for name, value in (("rec", rec), ("embed", embed), ("total", total)):
            if not math.isfinite(value):
                raise ValueError(f"non-finite loss term {name!r}")
        terms = VQLossTerms(total, rec, embed, commit)
        if not want_grads:
            return terms, None

        grads = {}
        g_pred = rec_weight * rec_grad / n
        dec_grads, g_h = self.decoder.backward(g_pred)
        fo_grads, g_d = self.fusion_out.backward(g_h)
        g_zq = g_d[:, :D]
        g_fc_dec = g_d[:, D:]
        # Straight-through: the reconstruction gradient at z_q lands on z_e
        # unchanged; the commitment term pulls z_e toward the (frozen) code.
        g_ze = g_zq + commit_weight * (2.0 / n) * diff
        codebook_grad = np.zeros_like(self.codebook)
        np.add.at(codebook_grad, idx, embed_weight * (2.0 / n) * (-diff))
        fi_grads, g_u = self.fusion_in.backward(g_ze)
        g_fy = g_u[:, :H]
        g_fc = g_u[:, H:] + g_fc_dec
        re_grads, _ = self.recon_encoder.backward(g_fy)
        ce_grads, _ = self.cond_encoder.backward(g_fc)

        for section, section_grads in (
            ("recon_encoder", re_grads),
            ("cond_encoder", ce_grads),
            ("fusion_in", fi_grads),
            ("fusion_out", fo_grads),
            ("decoder", dec_grads),
        ):
            for name, g in section_grads.items():
                grads[f"{section}.{name}"] = g
        grads["codebook"] = codebook_grad
        return terms, grads

    # -- persistence -----------------------------------------------------------

    def save(self, path, optimizer=None, metadata: dict | None = None) -> None:
        meta = dict(metadata or {})
        meta["model"] = {"kind": "conditional-vqvae", **asdict(self.config)}
        nets.save_checkpoint(path, self.params(), optimizer=optimizer, metadata=meta)

    @classmethod
    def load(cls, path) -> tuple["ConditionalVQVAE", nets.Checkpoint]:
        ck = nets.load_checkpoint(path)
        spec = ck.metadata.get("model", {})
        if spec.get("kind") != "conditional-vqvae":
            raise ValueError(f"{path}: checkpoint does not hold a conditional VQ-VAE")
        fields = {k: v for k, v in spec.items() if k != "kind"}
        try:
            config = VQVAEConfig(**fields)
        except TypeError as exc:
            raise ValueError(f"{path}: unusable model config: {exc}") from exc
        model = cls(config)
        model.set_params(ck.params)
        return model, ck
