"""Two-layer fully connected classifier with manual backprop.

Architecture: input -> hidden (ReLU) -> logits. Weights stored as
(out_dim, in_dim) matrices; a batch X of shape (B, in_dim) produces
logits X @ W1.T + b1 -> relu -> @ W2.T + b2 of shape (B, classes).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .linalg import matmul, relu, relu_grad
from .rng import Rng

TENSOR_NAMES = ("w1", "b1", "w2", "b2")

CHECKPOINT_MAGIC = b"SOMLP1"


@dataclass
class Mlp:
    w1: np.ndarray  # (hidden, in_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (classes, hidden)
    b2: np.ndarray  # (classes,)

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def class_count(self) -> int:
        return self.w2.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def copy(self) -> "Mlp":
        return Mlp(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


@dataclass
class BatchGrad:
    """Per-tensor gradients of the mean cross-entropy over a batch."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    loss: float

    def tensors(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def init_mlp(rng: Rng, class_count: int, in_dim: int = 784, hidden_dim: int = 128) -> Mlp:
    """Seeded init: weights uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero.

    Draw order is fixed (w1 row-major, then w2 row-major) so a seed pins
    the full parameter vector.
    """
    if class_count < 2:
        raise ValueError(f"class_count must be >= 2, got {class_count}")

    def uniform_matrix(rows: int, cols: int, bound: float) -> np.ndarray:
        out = np.empty(rows * cols, dtype=np.float64)
        for i in range(out.size):
            out[i] = (2.0 * rng.uniform() - 1.0) * bound
        return out.reshape(rows, cols)

    w1 = uniform_matrix(hidden_dim, in_dim, 1.0 / np.sqrt(in_dim))
    w2 = uniform_matrix(class_count, hidden_dim, 1.0 / np.sqrt(hidden_dim))
    return Mlp(w1, np.zeros(hidden_dim), w2, np.zeros(class_count))


def forward(model: Mlp, x: np.ndarray) -> np.ndarray:
    """Logits for a batch; deterministic, no softmax applied."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise ValueError(f"input shape {x.shape} incompatible with in_dim {model.in_dim}")
    h = relu(matmul(x, model.w1.T) + model.b1)
    return matmul(h, model.w2.T) + model.b2


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood, stabilized by max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ValueError(f"labels shape {labels.shape} incompatible with logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label id out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(labels.shape[0]), labels].mean())


def backward(model: Mlp, x: np.ndarray, labels: np.ndarray) -> BatchGrad:
    """Analytic gradients of cross_entropy(forward(x), labels) for all tensors."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    batch = x.shape[0]
    z1 = matmul(x, model.w1.T) + model.b1
    h = relu(z1)
    logits = matmul(h, model.w2.T) + model.b2
    loss = cross_entropy(logits, labels)

    dlogits = softmax(logits)
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch

    gw2 = matmul(dlogits.T, h)
    gb2 = dlogits.sum(axis=0)
    dh = matmul(dlogits, model.w2)
    dz1 = dh * relu_grad(z1)
    gw1 = matmul(dz1.T, x)
    gb1 = dz1.sum(axis=0)
    return BatchGrad(gw1, gb1, gw2, gb2, loss)


def predict(model: Mlp, x: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Argmax class ids, evaluated in chunks to bound memory."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(x.shape[0], dtype=np.int64)
    for start in range(0, x.shape[0], chunk):
        out[start:start + chunk] = forward(model, x[start:start + chunk]).argmax(axis=1)
    return out


def accuracy(model: Mlp, x: np.ndarray, labels: np.ndarray) -> float:
    return float((predict(model, x) == np.asarray(labels)).mean())


# --- flat parameter view -------------------------------------------------

def param_layout(model: Mlp) -> list[tuple[str, int, tuple[int, ...]]]:
    """(tensor name, flat offset, shape) triples; offsets partition range(d)."""
    layout = []
    offset = 0
    for name in TENSOR_NAMES:
        arr = model.tensors()[name]
        layout.append((name, offset, arr.shape))
        offset += arr.size
    return layout


def param_count(model: Mlp) -> int:
    return sum(arr.size for arr in model.tensors().values())


def flatten_params(model: Mlp) -> np.ndarray:
    return np.concatenate([model.tensors()[n].ravel() for n in TENSOR_NAMES])


def unflatten_params(model: Mlp, flat: np.ndarray) -> Mlp:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (param_count(model),):
        raise ValueError(f"flat vector length {flat.shape} != parameter count {param_count(model)}")
    out = {}
    for name, offset, shape in param_layout(model):
        size = int(np.prod(shape))
        out[name] = flat[offset:offset + size].reshape(shape).copy()
    return Mlp(out["w1"], out["b1"], out["w2"], out["b2"])


# --- checkpoint io --------------------------------------------------------

CANONICAL_IN_DIM = 784
CANONICAL_HIDDEN = 128


def save_checkpoint(model: Mlp, path: str) -> None:
    """Binary checkpoint: magic "SOMLP1", class count as little-endian u32,
    then w1, b1, w2, b2 as little-endian float64 in row-major order.

    The layout carries no shape fields; it is defined for the canonical
    784 -> 128 -> C architecture only.
    """
    if model.in_dim != CANONICAL_IN_DIM or model.hidden_dim != CANONICAL_HIDDEN:
        raise ValueError(
            f"checkpoint format is defined for {CANONICAL_HIDDEN}x{CANONICAL_IN_DIM} models, "
            f"got {model.hidden_dim}x{model.in_dim}"
        )
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", model.class_count))
        for name in TENSOR_NAMES:
            arr = np.ascontiguousarray(model.tensors()[name], dtype="<f8")
            f.write(arr.tobytes())


def load_checkpoint(path: str) -> Mlp:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (class_count,) = struct.unpack("<I", f.read(4))
        shapes = {
            "w1": (CANONICAL_HIDDEN, CANONICAL_IN_DIM),
            "b1": (CANONICAL_HIDDEN,),
            "w2": (class_count, CANONICAL_HIDDEN),
            "b2": (class_count,),
        }
        tensors = {}
        for name in TENSOR_NAMES:
            size = int(np.prod(shapes[name]))
            buf = f.read(8 * size)
            if len(buf) != 8 * size:
                raise ValueError(f"checkpoint truncated while reading {name}")
            tensors[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shapes[name])
        if f.read(1):
            raise ValueError("trailing bytes after checkpoint payload")
    return Mlp(tensors["w1"], tensors["b1"], tensors["w2"], tensors["b2"])
