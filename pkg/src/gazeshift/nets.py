"""Dense networks with explicit reverse-mode gradients.

Deliberately minimal: affine layers with rectifier or identity
activations, a hand-written backward pass, Adam with decoupled weight
decay, a multi-step learning-rate schedule, and versioned JSON
checkpoints. Everything is plain float64 numpy so that a fixed seed
reproduces training bit for bit and checkpoints round-trip exactly.

Parameters live in string-keyed dicts of arrays (``"0.W"``, ``"0.b"``, ...).
The optimizer mutates those arrays in place, so a network and its
optimizer state share storage by construction.
"""

from __future__ import annotations

import hashlib
import json
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_FORMAT = "gazeshift-checkpoint"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("relu", "identity")


class NonFiniteGradient(ValueError):
    """A gradient contained NaN or inf; carries the offending parameter name."""

    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class DenseNetwork:
    """Fully connected network: y = act(x @ W + b) per layer.

    Inputs may be a single vector (d,) or a row batch (n, d). ``forward``
    caches layer inputs and pre-activations; ``backward`` consumes the most
    recent cache and returns parameter gradients summed over the batch rows
    together with the gradient at the input.
    """

    def __init__(self, weights, biases, activations):
        if not (len(weights) == len(biases) == len(activations)):
            raise ValueError("layer lists must have equal length")
        if not weights:
            raise ValueError("network needs at least one layer")
        for act in activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.weights = [np.asarray(W, dtype=float) for W in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.activations = list(activations)
        self._cache = None

    @classmethod
    def create(cls, sizes, rng, activations=None):
        """He-style uniform fan-in initialisation, biases at zero.

        ``sizes`` is the width sequence [in, h1, ..., out]. Hidden layers
        default to rectifiers with an identity output layer.
        """
        if len(sizes) < 2:
            raise ValueError("sizes must list at least input and output widths")
        n_layers = len(sizes) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["identity"]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, activations)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def n_params(self) -> int:
        return sum(W.size for W in self.weights) + sum(b.size for b in self.biases)

    def params(self) -> dict[str, np.ndarray]:
        """Live references, keyed '0.W', '0.b', '1.W', ..."""
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{i}.W"] = W
            out[f"{i}.b"] = b
        return out

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i][...] = params[f"{i}.W"]
            self.biases[i][...] = params[f"{i}.b"]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("network input contains non-finite values")
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[1] != self.weights[0].shape[0]:
            raise ValueError(
                f"input width {h.shape[1]} does not match layer width "
                f"{self.weights[0].shape[0]}"
            )
        inputs, preacts = [], []
        for W, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            z = h @ W + b
            preacts.append(z)
            h = np.maximum(z, 0.0) if act == "relu" else z
        self._cache = (inputs, preacts, single)
        return h[0] if single else h

    def preactivations(self, x: np.ndarray) -> list[np.ndarray]:
        """Pre-activation values per layer for ``x``.

        Finite-difference tests use this to confirm a fixture keeps clear of
        rectifier kinks, where two-sided differences are meaningless.
        """
        self.forward(x)
        return [z.copy() for z in self._cache[1]]

    def backward(self, grad_out: np.ndarray):
        """Backprop the cached forward pass.

        Returns (param_grads, grad_in). ``param_grads`` are summed over the
        batch rows; scale the upstream gradient when a mean is wanted.
        """
        if self._cache is None:
            raise RuntimeError("backward called before any forward pass")
        inputs, preacts, single = self._cache
        g = np.asarray(grad_out, dtype=float)
        g = g[None, :] if single else g
        if g.shape != (inputs[-1].shape[0], self.weights[-1].shape[1]):
            raise ValueError(f"upstream gradient has wrong shape {g.shape}")
        grads = {}
        for i in range(len(self.weights) - 1, -1, -1):
            if self.activations[i] == "relu":
                g = g * (preacts[i] > 0.0)
            grads[f"{i}.W"] = inputs[i].T @ g
            grads[f"{i}.b"] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, (g[0] if single else g)


@dataclass
class AdamState:
    """Adam moments plus the hyperparameters that drive the update."""

    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], lr: float, weight_decay: float = 0.0):
        state = cls(lr=lr, weight_decay=weight_decay)
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
        return state


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
    """One Adam update with decoupled weight decay, mutating params in place.

    The whole step is rejected (no parameter touched) if any gradient is
    non-finite, so a bad batch cannot corrupt the model.
    """
    for name in params:
        if name not in grads:
            raise KeyError(f"missing gradient for parameter {name!r}")
        if grads[name].shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for parameter {name!r}")
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteGradient(name)
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


@dataclass(frozen=True)
class LrSchedule:
    """Multi-step decay: base * factor ** (number of milestones <= epoch)."""

    base: float
    milestones: tuple = ()
    factor: float = 0.5

    def __post_init__(self):
        if self.base <= 0:
            raise ValueError("base learning rate must be positive")
        if not 0 < self.factor <= 1:
            raise ValueError("decay factor must be in (0, 1]")
        if list(self.milestones) != sorted(set(self.milestones)):
            raise ValueError("milestones must be strictly increasing")

    def lr_at(self, epoch: int) -> float:
        if epoch < 0:
            raise ValueError("epoch must be non-negative")
        return self.base * self.factor ** bisect_right(list(self.milestones), epoch)


def encode_params(params: dict[str, np.ndarray]) -> dict:
    """JSON-safe encoding; float64 via repr round-trips bit-exactly."""
    return {
        name: {"shape": list(p.shape), "data": np.asarray(p, dtype=float).ravel().tolist()}
        for name, p in params.items()
    }


def decode_params(doc: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, entry in doc.items():
        arr = np.array(entry["data"], dtype=float).reshape(entry["shape"])
        out[name] = arr
    return out


def params_fingerprint(params: dict[str, np.ndarray]) -> str:
    """SHA-256 over the canonical parameter encoding."""
    blob = json.dumps(encode_params(params), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    params: dict
    optimizer: AdamState | None
    metadata: dict


def save_checkpoint(path, params, optimizer: AdamState | None = None, metadata: dict | None = None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "params": encode_params(params),
        "optimizer": None,
        "metadata": metadata or {},
    }
    if optimizer is not None:
        doc["optimizer"] = {
            "lr": optimizer.lr,
            "weight_decay": optimizer.weight_decay,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "step_count": optimizer.step_count,
            "m": encode_params(optimizer.m),
            "v": encode_params(optimizer.v),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    optimizer = None
    if doc.get("optimizer"):
        opt = doc["optimizer"]
        optimizer = AdamState(
            lr=opt["lr"],
            weight_decay=opt["weight_decay"],
            beta1=opt["beta1"],
            beta2=opt["beta2"],
            eps=opt["eps"],
            step_count=opt["step_count"],
            m=decode_params(opt["m"]),
            v=decode_params(opt["v"]),
        )
    return Checkpoint(decode_params(doc["params"]), optimizer, doc.get("metadata", {}))
