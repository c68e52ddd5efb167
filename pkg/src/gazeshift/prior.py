"""Conditional prior over the VQ-VAE's discrete codes.

After the VQ-VAE is trained and frozen, a second network learns which
codes are plausible for a given gaze context: g(c) produces K logits,
softmax turns them into a distribution pi, and training minimises

    focal(pi, z*) + eta * mc(argmax pi, c)

where z* is the code the frozen encoder assigned to the training sample,
``focal`` is the focal loss -(1 - pi[z*])**gamma * log(pi[z*]), and ``mc``
is a motion-consistency check: decode the currently most likely code with
the frozen decoder and measure the geodesic error of the resulting target
poses against ground truth. The argmax blocks any gradient, so mc shapes
checkpoint selection and reporting but contributes exactly zero gradient
wherever the argmax index is locally constant.

At inference time a code is sampled from pi (or the argmax is taken) and
decoded into a motion allocation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nets, so3
from .so3 import EyePose, HeadPose
from .vqvae import ConditionVector

PROB_FLOOR = 1e-12  # floor on pi[z*] before the log
_DIST_ATOL = 1e-9   # tolerated deviation of sum(pi) from 1


@dataclass(frozen=True)
class PriorConfig:
    codebook_size: int = 10
    hidden_width: int = 64
    gamma: float = 2.0
    eta: float = 1.0
    lambda_mc: float = 1.0
    # Gradient treatment of the motion-consistency term. Only "none" is
    # implemented: the argmax code lookup is non-differentiable and no
    # relaxation is applied. The knob exists so a relaxed variant can be
    # added without changing checkpoints.
    mc_gradient: str = "none"

    def __post_init__(self):
        if self.codebook_size < 1 or self.hidden_width < 1:
            raise ValueError("codebook_size and hidden_width must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.eta < 0 or self.lambda_mc < 0:
            raise ValueError("eta and lambda_mc must be non-negative")
        if self.mc_gradient != "none":
            raise ValueError(f"unsupported mc_gradient mode {self.mc_gradient!r}")


@dataclass(frozen=True)
class CodeLabel:
    """A code index recorded for one training sample by the frozen encoder."""

    index: int
    sample_index: int


def check_distribution(pi: np.ndarray, k: int | None = None) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 1 or (k is not None and pi.shape[0] != k):
        raise ValueError(f"distribution has wrong shape {pi.shape}")
    if not np.all(np.isfinite(pi)) or np.any(pi < 0):
        raise ValueError("distribution entries must be finite and non-negative")
    if abs(float(pi.sum()) - 1.0) > _DIST_ATOL:
        raise ValueError(f"distribution sums to {pi.sum()!r}, not 1")
    return pi


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max for stability."""
    logits = np.asarray(logits, dtype=float)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def focal_loss(pi: np.ndarray, index: int, gamma: float = 2.0) -> float:
    """-(1 - pi[index])**gamma * log(pi[index]), with the probability floored."""
    pi = check_distribution(pi)
    if not 0 <= index < len(pi):
        raise ValueError(f"code index {index} outside codebook of size {len(pi)}")
    p = float(pi[index])
    return -((1.0 - p) ** gamma) * math.log(max(p, PROB_FLOOR))


def focal_loss_rows(logits: np.ndarray, labels: np.ndarray, gamma: float = 2.0):
    """Batch-mean focal loss and its gradient in the logits.

    Returns (mean loss, per-probability values (n,), dlogits (n, K)).
    """
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n, K = logits.shape
    pi = softmax_rows(logits)
    rows = np.arange(n)
    p = pi[rows, labels]
    q = np.maximum(p, PROB_FLOOR)
    one_minus = 1.0 - p
    vals = -(one_minus**gamma) * np.log(q)
    # dL/dp, with the log frozen below the floor
    live = (p >= PROB_FLOOR).astype(float)
    if gamma == 0.0:
        dval_dp = -live / q
    else:
        dval_dp = gamma * (one_minus ** (gamma - 1.0)) * np.log(q) - (one_minus**gamma) * live / q
    # dp/dlogit_j = p * (delta_j - pi_j)
    dlogits = pi * (-(dval_dp * p))[:, None] / n
    dlogits[rows, labels] += dval_dp * p / n
    return float(vals.mean()), vals, dlogits


def motion_consistency_loss(model, code: int, c: ConditionVector,
                            target_eye: EyePose, target_head: HeadPose,
                            lambda_mc: float = 1.0) -> float:
    """Geodesic error of the decoded code against ground-truth target poses.

    ``model`` only needs ``decode(z_q, c)`` and a ``codebook`` array, so a
    frozen VQ-VAE or a lightweight stub both work.
    """
    codebook = np.asarray(model.codebook, dtype=float)
    if not 0 <= code < len(codebook):
        raise ValueError(f"code index {code} outside codebook of size {len(codebook)}")
    alloc = model.decode(codebook[code], c)
    eye_hat = so3.compose_target_pose(c.eye, EyePose(*alloc.delta_eye))
    head_hat = so3.compose_target_pose(c.head, HeadPose(*alloc.delta_head))
    d_eye = so3.geodesic_distance(so3.euler_to_matrix(eye_hat), so3.euler_to_matrix(target_eye))
    d_head = so3.geodesic_distance(so3.euler_to_matrix(head_hat), so3.euler_to_matrix(target_head))
    return d_eye + lambda_mc * d_head


def prior_loss(model, pi: np.ndarray, label: int, c: ConditionVector,
               target_eye: EyePose, target_head: HeadPose, *,
               gamma: float = 2.0, eta: float = 1.0, lambda_mc: float = 1.0,
               code_hat: int | None = None) -> float:
    """Focal + eta * motion-consistency for one sample.

    ``code_hat`` defaults to argmax(pi). The value is differentiable in pi
    only through the focal term; the consistency term rides on the frozen
    decoder output of a discrete code.
    """
    pi = check_distribution(pi)
    if code_hat is None:
        code_hat = int(np.argmax(pi))
    return focal_loss(pi, label, gamma) + eta * motion_consistency_loss(
        model, code_hat, c, target_eye, target_head, lambda_mc
    )


def sample_code(pi: np.ndarray, rng: np.random.Generator) -> int:
    """Draw a code index from the distribution pi."""
    pi = check_distribution(pi)
    return int(rng.choice(len(pi), p=pi / pi.sum()))


class ConditionalPrior:
    """Logit network over codes, conditioned on the 8 context inputs."""

    def __init__(self, config: PriorConfig = PriorConfig(), seed: int = 0,
                 target_scale: float = 2.0):
        self.config = config
        self.target_scale = target_scale
        H, K = config.hidden_width, config.codebook_size
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        self.net = nets.DenseNetwork.create([8, H, H, K], rng, ["relu", "relu", "identity"])

    def params(self) -> dict[str, np.ndarray]:
        return self.net.params()

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        self.net.set_params(params)

    def fingerprint(self) -> str:
        return nets.params_fingerprint(self.params())

    def _inputs(self, C: np.ndarray) -> np.ndarray:
        X = np.array(C, dtype=float)
        X[:, 5:8] /= self.target_scale
        return X

    def logits_rows(self, C: np.ndarray) -> np.ndarray:
        return self.net.forward(self._inputs(np.asarray(C, dtype=float)))

    def forward_rows(self, C: np.ndarray) -> np.ndarray:
        return softmax_rows(self.logits_rows(C))

    def forward(self, c: ConditionVector) -> np.ndarray:
        """Code distribution pi for one condition."""
        return self.forward_rows(c.as_input()[None, :])[0]

    def save(self, path, optimizer=None, metadata: dict | None = None,
             stage1_fingerprint: str | None = None) -> None:
        meta = dict(metadata or {})
        meta["model"] = {
            "kind": "conditional-prior",
            "codebook_size": self.config.codebook_size,
            "hidden_width": self.config.hidden_width,
            "gamma": self.config.gamma,
            "eta": self.config.eta,
            "lambda_mc": self.config.lambda_mc,
            "mc_gradient": self.config.mc_gradient,
            "target_scale": self.target_scale,
            "stage1_fingerprint": stage1_fingerprint,
        }
        nets.save_checkpoint(path, self.params(), optimizer=optimizer, metadata=meta)

    @classmethod
    def load(cls, path, expect_stage1_fingerprint: str | None = None):
        ck = nets.load_checkpoint(path)
        spec = ck.metadata.get("model", {})
        if spec.get("kind") != "conditional-prior":
            raise ValueError(f"{path}: checkpoint does not hold a conditional prior")
        stored = spec.get("stage1_fingerprint")
        if expect_stage1_fingerprint is not None and stored != expect_stage1_fingerprint:
            raise ValueError(
                "prior checkpoint was trained against a different first-stage model "
                f"(stored fingerprint {stored!r})"
            )
        config = PriorConfig(
            codebook_size=spec["codebook_size"],
            hidden_width=spec["hidden_width"],
            gamma=spec["gamma"],
            eta=spec["eta"],
            lambda_mc=spec["lambda_mc"],
            mc_gradient=spec.get("mc_gradient", "none"),
        )
        prior = cls(config, target_scale=spec.get("target_scale", 2.0))
        prior.set_params(ck.params)
        return prior, ck
