"""Small feedforward classifier with a shared representation and two heads.

All parameters live in flat float64 vectors: ``theta`` holds every
representation layer (hidden weights and biases, in layer order), while
``phi_s`` and ``phi_t`` each hold one linear classification head (weights,
then bias).  Flat storage makes the weighted-descent algebra in the trainer
a plain matrix-vector product, and makes gradient checking exact.

Gradients are computed by explicit backpropagation, one example at a time,
so per-example gradients are first-class rather than recovered from a batch
aggregate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import softmax

from .errors import ConfigError, NumericalError, ShapeError

ACTIVATIONS = ("tanh", "relu")
HEADS = ("source", "target")


@dataclass(frozen=True)
class ArchDescriptor:
    """Shape of the network: input width, hidden widths, activation, heads.

    ``hidden_sizes`` may be empty, in which case the model is linear and the
    representation parameter vector ``theta`` has length zero.
    """

    input_dim: int
    hidden_sizes: tuple[int, ...] = ()
    activation: str = "tanh"
    n_classes_source: int = 2
    n_classes_target: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigError(f"hidden sizes must be >= 1, got {self.hidden_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.n_classes_source < 1 or self.n_classes_target < 1:
            raise ConfigError("class counts must be >= 1")

    @property
    def rep_dim(self) -> int:
        """Width of the representation fed to the heads."""
        return self.hidden_sizes[-1] if self.hidden_sizes else self.input_dim

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(out, in) shapes of the hidden layers, in order."""
        dims = (self.input_dim, *self.hidden_sizes)
        return [(dims[i + 1], dims[i]) for i in range(len(self.hidden_sizes))]

    @property
    def theta_size(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes())

    def n_classes(self, head: str) -> int:
        _check_head(head)
        return self.n_classes_source if head == "source" else self.n_classes_target

    def head_size(self, head: str) -> int:
        return self.n_classes(head) * self.rep_dim + self.n_classes(head)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "activation": self.activation,
            "n_classes_source": self.n_classes_source,
            "n_classes_target": self.n_classes_target,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchDescriptor":
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_sizes=tuple(d["hidden_sizes"]),
            activation=str(d["activation"]),
            n_classes_source=int(d["n_classes_source"]),
            n_classes_target=int(d["n_classes_target"]),
        )


def _check_head(head: str) -> None:
    if head not in HEADS:
        raise ValueError(f"head must be one of {HEADS}, got {head!r}")


@dataclass(frozen=True)
class PerExampleGradient:
    """Gradient of one example's loss: d_theta for the representation,
    d_phi for the head the example went through.  Unscaled (no 1/n factor)."""

    d_theta: np.ndarray
    d_phi: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.d_theta).all() and np.isfinite(self.d_phi).all()):
            raise NumericalError("per-example gradient contains NaN/Inf")


@dataclass
class ModelParams:
    """Flat parameter vectors plus the architecture that fixes their layout.

    In shared-classifier training ``phi_s`` and ``phi_t`` are the *same*
    ndarray object; ``heads_shared`` reports that aliasing.
    """

    arch: ArchDescriptor
    theta: np.ndarray
    phi_s: np.ndarray
    phi_t: np.ndarray

    def __post_init__(self):
        shared = self.phi_t is self.phi_s
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        self.phi_s = np.ascontiguousarray(self.phi_s, dtype=np.float64)
        self.phi_t = self.phi_s if shared else np.ascontiguousarray(self.phi_t, dtype=np.float64)
        a = self.arch
        if self.theta.shape != (a.theta_size,):
            raise ShapeError(f"theta has length {self.theta.size}, arch requires {a.theta_size}")
        if self.phi_s.shape != (a.head_size("source"),):
            raise ShapeError(f"phi_s has length {self.phi_s.size}, arch requires {a.head_size('source')}")
        if self.phi_t.shape != (a.head_size("target"),):
            raise ShapeError(f"phi_t has length {self.phi_t.size}, arch requires {a.head_size('target')}")
        if shared and a.n_classes_source != a.n_classes_target:
            raise ConfigError("shared heads require equal source/target class counts")

    @property
    def heads_shared(self) -> bool:
        return self.phi_t is self.phi_s

    @classmethod
    def init(cls, arch: ArchDescriptor, rng: np.random.Generator | int, shared_head: bool = False) -> "ModelParams":
        """Seeded uniform init in [-s, s] with s = 1/sqrt(fan_in), per layer."""
        if shared_head and arch.n_classes_source != arch.n_classes_target:
            raise ConfigError("shared heads require equal source/target class counts")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        chunks = []
        for out, inp in arch.layer_shapes():
            s = 1.0 / np.sqrt(inp)
            chunks.append(rng.uniform(-s, s, size=out * inp + out))
        theta = np.concatenate(chunks) if chunks else np.zeros(0)
        s_head = 1.0 / np.sqrt(arch.rep_dim)
        phi_s = rng.uniform(-s_head, s_head, size=arch.head_size("source"))
        phi_t = phi_s if shared_head else rng.uniform(-s_head, s_head, size=arch.head_size("target"))
        return cls(arch, theta, phi_s, phi_t)

    def copy(self) -> "ModelParams":
        phi_s = self.phi_s.copy()
        phi_t = phi_s if self.heads_shared else self.phi_t.copy()
        return ModelParams(self.arch, self.theta.copy(), phi_s, phi_t)

    def head(self, head: str) -> np.ndarray:
        _check_head(head)
        return self.phi_s if head == "source" else self.phi_t

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.to_dict(),
            "theta": self.theta.tolist(),
            "phi_s": self.phi_s.tolist(),
            "phi_t": self.phi_t.tolist(),
            "heads_shared": self.heads_shared,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        arch = ArchDescriptor.from_dict(d["arch"])
        phi_s = np.asarray(d["phi_s"], dtype=np.float64)
        phi_t = phi_s if d.get("heads_shared", False) else np.asarray(d["phi_t"], dtype=np.float64)
        return cls(arch, np.asarray(d["theta"], dtype=np.float64), phi_s, phi_t)

    def save(self, path: str | Path) -> None:
        """Write a JSON checkpoint.  float64 -> decimal text is lossless."""
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ModelParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _theta_views(arch: ArchDescriptor, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """(W, b) views into the flat theta vector, one pair per hidden layer."""
    views = []
    pos = 0
    for out, inp in arch.layer_shapes():
        w = theta[pos:pos + out * inp].reshape(out, inp)
        pos += out * inp
        b = theta[pos:pos + out]
        pos += out
        views.append((w, b))
    return views


def _head_views(arch: ArchDescriptor, phi: np.ndarray, head: str) -> tuple[np.ndarray, np.ndarray]:
    c = arch.n_classes(head)
    r = arch.rep_dim
    return phi[:c * r].reshape(c, r), phi[c * r:]


def _activate(a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(a)
    return np.maximum(a, 0.0)


def _activation_grad_from_output(h: np.ndarray, activation: str) -> np.ndarray:
    # relu subgradient at exactly 0 is taken as 0 (output 0 -> grad 0).
    if activation == "tanh":
        return 1.0 - h * h
    return (h > 0.0).astype(np.float64)


def _forward_cached(params: ModelParams, head: str, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits plus the list of layer inputs [x, h_1, ..., h_k]."""
    acts = [x]
    h = x
    for w, b in _theta_views(params.arch, params.theta):
        h = _activate(w @ h + b, params.arch.activation)
        acts.append(h)
    w, b = _head_views(params.arch, params.head(head), head)
    return w @ h + b, acts


def _check_input(params: ModelParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.arch.input_dim,):
        raise ShapeError(f"input has shape {x.shape}, arch requires ({params.arch.input_dim},)")
    return x


def forward(params: ModelParams, head: str, x) -> np.ndarray:
    """Logits of a single example through the selected head."""
    _check_head(head)
    logits, _ = _forward_cached(params, head, _check_input(params, x))
    return logits


def forward_batch(params: ModelParams, head: str, xs) -> np.ndarray:
    """Vectorized logits for a (n, input_dim) feature matrix."""
    _check_head(head)
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != params.arch.input_dim:
        raise ShapeError(f"batch has shape {xs.shape}, arch requires (n, {params.arch.input_dim})")
    h = xs
    for w, b in _theta_views(params.arch, params.theta):
        h = _activate(h @ w.T + b, params.arch.activation)
    w, b = _head_views(params.arch, params.head(head), head)
    return h @ w.T + b


def per_example_grad(params: ModelParams, head: str, x, y: int, loss=None) -> PerExampleGradient:
    """Backpropagate one example's classification loss.

    Returns the unscaled gradients with respect to theta and the selected
    head's phi.  ``loss`` may supply a custom ``logit_grad(logits, y)``; the
    default is cross-entropy, whose logit gradient is softmax(logits) minus
    the one-hot label.
    """
    _check_head(head)
    x = _check_input(params, x)
    arch = params.arch
    n_cls = arch.n_classes(head)
    if not 0 <= y < n_cls:
        raise ValueError(f"label {y} out of range for {n_cls}-class {head} head")
    logits, acts = _forward_cached(params, head, x)
    if loss is None:
        dlogits = softmax(logits)
        dlogits[y] -= 1.0
    else:
        dlogits = np.asarray(loss.logit_grad(logits, int(y)), dtype=np.float64)

    w_head, _ = _head_views(arch, params.head(head), head)
    d_phi = np.concatenate([np.outer(dlogits, acts[-1]).ravel(), dlogits])
    dh = w_head.T @ dlogits

    layers = _theta_views(arch, params.theta)
    pieces: list[np.ndarray] = []
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        da = dh * _activation_grad_from_output(acts[i + 1], arch.activation)
        pieces.append(np.concatenate([np.outer(da, acts[i]).ravel(), da]))
        dh = w.T @ da
    pieces.reverse()
    d_theta = np.concatenate(pieces) if pieces else np.zeros(0)
    return PerExampleGradient(d_theta, d_phi)


def batch_grads(params: ModelParams, head: str, xs, ys, loss=None) -> list[PerExampleGradient]:
    """Per-example gradients for a batch, in batch order."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys)
    if xs.ndim != 2 or xs.shape[0] != ys.shape[0]:
        raise ShapeError(f"batch shapes disagree: features {xs.shape}, labels {ys.shape}")
    if xs.shape[0] < 1:
        raise ShapeError("batch must contain at least one example")
    out = []
    for i in range(xs.shape[0]):
        try:
            out.append(per_example_grad(params, head, xs[i], int(ys[i]), loss))
        except (NumericalError, ValueError) as e:
            raise type(e)(f"example {i}: {e}") from e
    return out
