"""Sparse-moment optimizer and its dense Adam baseline.

The sparse optimizer keeps, per tensor, a support set of at most M flat
indices plus first/second moment buffers restricted to that scale. Each
step:

  1. On refresh steps (every ``refresh_every`` iterations, or only the
     first step when the support is static) the gradient support is
     reselected: uniformly at random, by gradient magnitude, or all
     indices. Between refreshes the previous support is reused.
  2. Moments are decayed and accumulated over the union of the previous
     moment support and the current gradient support (at most 2M entries
     in the sparse modes).
  3. On refresh steps the union is pruned back to M entries, by first
     moment magnitude (second moment kept at the same indices, so the two
     buffers stay aligned), or uniformly at random, or not at all in the
     dense-moments ablation. Between refreshes the buffers are restricted
     to the gradient support.
  4. Bias-corrected moments update only the surviving indices; every
     other parameter is left bit-identical.

With a density ratio of 1 and refresh interval of 1 the whole procedure
degenerates to dense Adam, which `AdamOptimizer` implements directly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericalError
from .mlp import TENSOR_NAMES, Mlp
from .rng import Rng
from .selection import random_m, top_m_indices

GRAD_MODES = ("random", "importance", "dense")
MOMENT_MODES = ("topm", "random", "dense", "none")
SUPPORT_MODES = ("dynamic", "static")

STATE_MAGIC = b"SOSTATE1"


@dataclass
class SparseHyper:
    """Hyperparameters of the sparse optimizer.

    ``tau`` (the convergence loss threshold) is consumed by the training
    loop, not by the step itself; it lives here so one object carries the
    full optimizer configuration.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kappa: float = 0.01
    refresh_every: int = 30
    tau: float = 1e-4
    grad_mode: str = "random"
    moment_mode: str = "topm"
    support_mode: str = "dynamic"
    # Alternative reading of the between-refresh moment restriction: keep the
    # pruned moment support instead of the gradient support. Off by default.
    keep_moment_support: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.kappa <= 1.0:
            raise ValueError(f"kappa must be in (0, 1], got {self.kappa}")
        if self.lr <= 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.eps <= 0.0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must be in [0, 1)")
        if self.refresh_every < 1:
            raise ValueError(f"refresh_every must be >= 1, got {self.refresh_every}")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}, got {self.grad_mode!r}")
        if self.moment_mode not in MOMENT_MODES:
            raise ValueError(f"moment_mode must be one of {MOMENT_MODES}, got {self.moment_mode!r}")
        if self.support_mode not in SUPPORT_MODES:
            raise ValueError(f"support_mode must be one of {SUPPORT_MODES}, got {self.support_mode!r}")


@dataclass
class SparseBuffer:
    """Aligned (index, value) pairs with a hard capacity.

    Indices are strictly increasing flat positions into one tensor.
    Length may reach 2 * capacity transiently while the union of old and
    new supports is being accumulated; pruning brings it back to capacity.
    """

    idx: np.ndarray
    val: np.ndarray
    capacity: int

    @classmethod
    def empty(cls, capacity: int) -> "SparseBuffer":
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64), capacity)


def _require_contiguous(model: Mlp) -> None:
    # updates go through flat views; a non-contiguous tensor would silently
    # receive them on a copy instead
    for name, arr in model.tensors().items():
        if not arr.flags.c_contiguous:
            raise ValueError(f"tensor {name} must be C-contiguous")


@dataclass
class _TensorState:
    size: int
    m: int
    support: np.ndarray | None = None
    mu: SparseBuffer = None  # type: ignore[assignment]
    nu: SparseBuffer = None  # type: ignore[assignment]
    last_touched: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    last_union_len: int = 0


class SparseAdam:
    """Owns the model it updates plus per-tensor sparse state."""

    def __init__(self, model: Mlp, hyper: SparseHyper, rng: Rng):
        _require_contiguous(model)
        self.model = model
        self.hyper = hyper
        self.rng = rng
        self.t = 0
        self.lr_scale = 1.0
        self.states: dict[str, _TensorState] = {}
        for name, arr in model.tensors().items():
            m = max(1, int(np.floor(hyper.kappa * arr.size)))
            st = _TensorState(size=arr.size, m=m)
            st.mu = SparseBuffer.empty(m)
            st.nu = SparseBuffer.empty(m)
            self.states[name] = st

    # -- harness interface -------------------------------------------------

    def eval_model(self) -> Mlp:
        return self.model

    def step(self, grads) -> None:
        self.t += 1
        lr_t = self.hyper.lr * self.lr_scale
        for name in TENSOR_NAMES:
            g = grads.tensors()[name]
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in tensor {name}")
            self._step_tensor(name, g.ravel(), lr_t)

    def touch_count(self) -> int:
        """Number of parameter entries written by the last step."""
        return sum(st.last_touched.size for st in self.states.values())

    def touched_indices(self) -> dict[str, np.ndarray]:
        return {name: st.last_touched for name, st in self.states.items()}

    def gradient_masks(self) -> dict[str, np.ndarray | None]:
        """Flat gradient-support indices per tensor used by the last step;
        None means the full tensor (dense)."""
        out: dict[str, np.ndarray | None] = {}
        for name, st in self.states.items():
            if self.hyper.grad_mode == "dense":
                out[name] = None
            else:
                out[name] = st.support
        return out

    # -- core --------------------------------------------------------------

    def _is_refresh(self) -> bool:
        if self.hyper.support_mode == "static":
            return self.t == 1
        return (self.t - 1) % self.hyper.refresh_every == 0

    def _step_tensor(self, name: str, g: np.ndarray, lr_t: float) -> None:
        hp = self.hyper
        st = self.states[name]
        theta = self.model.tensors()[name].reshape(-1)
        refresh = self._is_refresh()

        if refresh:
            if hp.grad_mode == "random":
                support = random_m(self.rng, st.size, st.m)
            elif hp.grad_mode == "importance":
                support = top_m_indices(g, st.m)
            else:
                support = np.arange(st.size, dtype=np.int64)
            st.support = support
        else:
            support = st.support
        g_val = g[support]

        if hp.moment_mode == "none":
            theta[support] -= lr_t * g_val
            st.last_touched = support
            st.last_union_len = support.size
            return

        prev_mu, prev_nu = st.mu, st.nu
        union = np.union1d(prev_mu.idx, support)
        pos_prev = np.searchsorted(union, prev_mu.idx)
        pos_g = np.searchsorted(union, support)
        mu_u = np.zeros(union.size, dtype=np.float64)
        mu_u[pos_prev] = hp.beta1 * prev_mu.val
        mu_u[pos_g] += (1.0 - hp.beta1) * g_val
        nu_u = np.zeros(union.size, dtype=np.float64)
        nu_u[pos_prev] = hp.beta2 * prev_nu.val
        nu_u[pos_g] += (1.0 - hp.beta2) * (g_val * g_val)
        st.last_union_len = union.size

        if refresh:
            if hp.moment_mode == "topm":
                keep = min(st.m, union.size)
                sel = top_m_indices(mu_u, keep)
            elif hp.moment_mode == "random":
                keep = min(st.m, union.size)
                sel = random_m(self.rng, union.size, keep)
            else:  # dense: moments are never pruned
                sel = np.arange(union.size, dtype=np.int64)
        else:
            if hp.moment_mode == "dense":
                sel = np.arange(union.size, dtype=np.int64)
            elif hp.keep_moment_support and prev_mu.idx.size:
                sel = pos_prev
            else:
                sel = pos_g

        new_idx = union[sel]
        mu_val = mu_u[sel]
        nu_val = nu_u[sel]
        st.mu = SparseBuffer(new_idx, mu_val, st.m)
        st.nu = SparseBuffer(new_idx.copy(), nu_val, st.m)

        mu_hat = mu_val / (1.0 - hp.beta1 ** self.t)
        nu_hat = nu_val / (1.0 - hp.beta2 ** self.t)
        theta[new_idx] -= lr_t * mu_hat / (np.sqrt(nu_hat) + hp.eps)
        st.last_touched = new_idx


class AdamOptimizer:
    """Standard dense Adam with bias correction."""

    def __init__(self, model: Mlp, hyper: SparseHyper):
        _require_contiguous(model)
        self.model = model
        self.hyper = hyper
        self.t = 0
        self.lr_scale = 1.0
        self.mu = {n: np.zeros_like(a).reshape(-1) for n, a in model.tensors().items()}
        self.nu = {n: np.zeros_like(a).reshape(-1) for n, a in model.tensors().items()}

    def eval_model(self) -> Mlp:
        return self.model

    def step(self, grads) -> None:
        self.t += 1
        hp = self.hyper
        lr_t = hp.lr * self.lr_scale
        for name in TENSOR_NAMES:
            g = grads.tensors()[name]
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in tensor {name}")
            g = g.reshape(-1)
            theta = self.model.tensors()[name].reshape(-1)
            mu = hp.beta1 * self.mu[name]
            mu += (1.0 - hp.beta1) * g
            nu = hp.beta2 * self.nu[name]
            nu += (1.0 - hp.beta2) * (g * g)
            self.mu[name] = mu
            self.nu[name] = nu
            mu_hat = mu / (1.0 - hp.beta1 ** self.t)
            nu_hat = nu / (1.0 - hp.beta2 ** self.t)
            theta -= lr_t * mu_hat / (np.sqrt(nu_hat) + hp.eps)

    def touch_count(self) -> int:
        return sum(a.size for a in self.model.tensors().values()) if self.t else 0

    def gradient_masks(self) -> dict[str, np.ndarray | None]:
        return {name: None for name in TENSOR_NAMES}


# --- state snapshot io -----------------------------------------------------

def save_state(opt: SparseAdam, path: str) -> None:
    """Snapshot for resume/testing: magic "SOSTATE1", u32 tensor count, then
    per tensor (in fixed order): u32 tensor id, u64 global step, the support
    as u32 length + u64 indices, and the aligned moment buffers as u32
    length + (u64 index, f64 mu, f64 nu) triples sorted by index.

    The PRNG position is not part of the snapshot; resuming reproduces the
    original trajectory exactly until the next support reselection.
    """
    with open(path, "wb") as f:
        f.write(STATE_MAGIC)
        f.write(struct.pack("<I", len(TENSOR_NAMES)))
        for tid, name in enumerate(TENSOR_NAMES):
            st = opt.states[name]
            f.write(struct.pack("<IQ", tid, opt.t))
            support = st.support if st.support is not None else np.empty(0, dtype=np.int64)
            f.write(struct.pack("<I", support.size))
            f.write(np.ascontiguousarray(support, dtype="<u8").tobytes())
            f.write(struct.pack("<I", st.mu.idx.size))
            for i in range(st.mu.idx.size):
                f.write(struct.pack("<Qdd", int(st.mu.idx[i]), float(st.mu.val[i]), float(st.nu.val[i])))


def load_state(opt: SparseAdam, path: str) -> None:
    """Restore a snapshot written by `save_state` into a compatible optimizer."""
    with open(path, "rb") as f:
        magic = f.read(len(STATE_MAGIC))
        if magic != STATE_MAGIC:
            raise FormatError(f"bad state magic {magic!r}")
        (count,) = struct.unpack("<I", f.read(4))
        if count != len(TENSOR_NAMES):
            raise FormatError(f"tensor count {count} != expected {len(TENSOR_NAMES)}")
        steps = []
        for expected_tid, name in enumerate(TENSOR_NAMES):
            tid, t = struct.unpack("<IQ", f.read(12))
            if tid != expected_tid:
                raise FormatError(f"tensor id {tid} out of order (expected {expected_tid})")
            steps.append(t)
            st = opt.states[name]
            (slen,) = struct.unpack("<I", f.read(4))
            buf = f.read(8 * slen)
            if len(buf) != 8 * slen:
                raise FormatError(f"state truncated in support of tensor {name}")
            support = np.frombuffer(buf, dtype="<u8").astype(np.int64)
            st.support = support if slen else None
            (mlen,) = struct.unpack("<I", f.read(4))
            idx = np.empty(mlen, dtype=np.int64)
            mu = np.empty(mlen, dtype=np.float64)
            nu = np.empty(mlen, dtype=np.float64)
            for i in range(mlen):
                rec = f.read(24)
                if len(rec) != 24:
                    raise FormatError(f"state truncated in moments of tensor {name}")
                idx[i], mu[i], nu[i] = struct.unpack("<Qdd", rec)
            st.mu = SparseBuffer(idx, mu, st.m)
            st.nu = SparseBuffer(idx.copy(), nu, st.m)
        if len(set(steps)) != 1:
            raise FormatError(f"inconsistent step counters across tensors: {steps}")
        opt.t = steps[0]
