"""Low-rank baselines: additive adapters (LoRA / ReLoRA) and gradient
projection (GaLore), applied to the two weight matrices of the MLP.

Bias vectors are always trained densely with Adam; reparameterizing a
1-D tensor with rank factors is not meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .mlp import Mlp
from .optim import SparseHyper, _require_contiguous
from .rng import Rng

WEIGHT_NAMES = ("w1", "w2")
BIAS_NAMES = ("b1", "b2")


class _DenseAdam:
    """Adam moments over a fixed dict of arrays; step count owned by caller."""

    def __init__(self, params: dict[str, np.ndarray], hyper: SparseHyper):
        self.params = params
        self.hyper = hyper
        self.mu = {k: np.zeros_like(v) for k, v in params.items()}
        self.nu = {k: np.zeros_like(v) for k, v in params.items()}

    def reset(self, name: str) -> None:
        self.mu[name][:] = 0.0
        self.nu[name][:] = 0.0

    def update(self, name: str, grad: np.ndarray, t: int, lr_t: float) -> None:
        hp = self.hyper
        mu = hp.beta1 * self.mu[name]
        mu += (1.0 - hp.beta1) * grad
        nu = hp.beta2 * self.nu[name]
        nu += (1.0 - hp.beta2) * (grad * grad)
        self.mu[name] = mu
        self.nu[name] = nu
        mu_hat = mu / (1.0 - hp.beta1 ** t)
        nu_hat = nu / (1.0 - hp.beta2 ** t)
        self.params[name] -= lr_t * mu_hat / (np.sqrt(nu_hat) + hp.eps)


@dataclass
class LoraAdapter:
    """Additive factors for one weight matrix: effective W = base + a @ b."""

    base: np.ndarray  # frozen (m, n)
    a: np.ndarray     # (m, r)
    b: np.ndarray     # (r, n)

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    def delta(self) -> np.ndarray:
        return self.a @ self.b


def _gaussian_matrix(rng: Rng, rows: int, cols: int, std: float) -> np.ndarray:
    out = np.empty(rows * cols, dtype=np.float64)
    for i in range(out.size):
        out[i] = rng.normal() * std
    return out.reshape(rows, cols)


class LoraOptimizer:
    """Adam on low-rank adapters; base weights frozen, biases trained densely.

    With ``merge_every`` set, `merge` folds the adapters into the base
    weights every that many steps and reinitializes them, which is the
    ReLoRA variant. `merge` may also be driven externally.
    """

    def __init__(self, model: Mlp, hyper: SparseHyper, rank: int, rng: Rng,
                 merge_every: int | None = None):
        _require_contiguous(model)
        self.model = model
        self.hyper = hyper
        self.rng = rng
        self.merge_every = merge_every
        self.t = 0
        self.lr_scale = 1.0
        self.adapters: dict[str, LoraAdapter] = {}
        trainable: dict[str, np.ndarray] = {}
        for name in WEIGHT_NAMES:
            w = model.tensors()[name]
            m, n = w.shape
            if rank < 1 or rank >= min(m, n):
                raise ValueError(
                    f"adapter rank must satisfy 1 <= rank < min(m, n) = {min(m, n)} "
                    f"for tensor {name}, got {rank}"
                )
            # a @ b == 0 at init, so the effective weight (and every forward
            # pass) is exactly the base model's
            adapter = LoraAdapter(
                base=w.copy(),
                a=_gaussian_matrix(rng, m, rank, 1.0 / np.sqrt(rank)),
                b=np.zeros((rank, n), dtype=np.float64),
            )
            self.adapters[name] = adapter
            trainable[name + ".a"] = adapter.a
            trainable[name + ".b"] = adapter.b
        for name in BIAS_NAMES:
            trainable[name] = model.tensors()[name]
        self._adam = _DenseAdam(trainable, hyper)

    def eval_model(self) -> Mlp:
        return self.model

    def step(self, grads) -> None:
        self.t += 1
        lr_t = self.hyper.lr * self.lr_scale
        for name in WEIGHT_NAMES:
            g = grads.tensors()[name]
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in tensor {name}")
            ad = self.adapters[name]
            # chain rule through W_eff = base + a @ b
            ga = g @ ad.b.T
            gb = ad.a.T @ g
            self._adam.update(name + ".a", ga, self.t, lr_t)
            self._adam.update(name + ".b", gb, self.t, lr_t)
            self.model.tensors()[name][:] = ad.base + ad.a @ ad.b
        for name in BIAS_NAMES:
            g = grads.tensors()[name]
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in tensor {name}")
            self._adam.update(name, g, self.t, lr_t)
        if self.merge_every is not None and self.t % self.merge_every == 0:
            self.merge()

    def merge(self) -> None:
        """Fold a @ b into the base weight and reinitialize the factors.

        The effective weight is unchanged at the merge instant; only A/B
        optimizer state is reset.
        """
        for name in WEIGHT_NAMES:
            ad = self.adapters[name]
            ad.base = ad.base + ad.a @ ad.b
            ad.a = _gaussian_matrix(self.rng, ad.a.shape[0], ad.rank, 1.0 / np.sqrt(ad.rank))
            ad.b = np.zeros_like(ad.b)
            self._adam.params[name + ".a"] = ad.a
            self._adam.params[name + ".b"] = ad.b
            self._adam.reset(name + ".a")
            self._adam.reset(name + ".b")
            self.model.tensors()[name][:] = ad.base

    def touch_count(self) -> int:
        if self.t == 0:
            return 0
        total = 0
        for name in WEIGHT_NAMES:
            ad = self.adapters[name]
            total += ad.a.size + ad.b.size + ad.base.size  # effective weight rewritten
        for name in BIAS_NAMES:
            total += self.model.tensors()[name].size
        return total

    def gradient_masks(self) -> dict[str, np.ndarray | None]:
        return {name: None for name in ("w1", "b1", "w2", "b2")}


class GaloreOptimizer:
    """Adam in a low-rank gradient subspace with full-parameter updates.

    Every ``refresh_every`` steps the projector P for each weight matrix is
    recomputed as the top-r left singular vectors of the current gradient
    (via the eigendecomposition of G G^T). Between refreshes P is reused.
    Moments live on the projected gradient R = P^T G and are kept across
    refreshes; the weight update P @ adamized(R) touches the full matrix.
    """

    def __init__(self, model: Mlp, hyper: SparseHyper, rank: int, rng: Rng | None = None,
                 refresh_every: int | None = None):
        _require_contiguous(model)
        self.model = model
        self.hyper = hyper
        self.refresh_every = refresh_every if refresh_every is not None else hyper.refresh_every
        self.t = 0
        self.lr_scale = 1.0
        self.rank = rank
        self.projectors: dict[str, np.ndarray | None] = {}
        self.mu_r: dict[str, np.ndarray] = {}
        self.nu_r: dict[str, np.ndarray] = {}
        for name in WEIGHT_NAMES:
            m, n = model.tensors()[name].shape
            if rank < 1 or rank > min(m, n):
                raise ValueError(
                    f"projection rank must satisfy 1 <= rank <= min(m, n) = {min(m, n)} "
                    f"for tensor {name}, got {rank}"
                )
            self.projectors[name] = None
            self.mu_r[name] = np.zeros((rank, n), dtype=np.float64)
            self.nu_r[name] = np.zeros((rank, n), dtype=np.float64)
        self._adam = _DenseAdam({name: model.tensors()[name] for name in BIAS_NAMES}, hyper)

    def eval_model(self) -> Mlp:
        return self.model

    def _projector(self, g: np.ndarray) -> np.ndarray:
        try:
            _, vecs = np.linalg.eigh(g @ g.T)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"projector eigendecomposition failed: {exc}") from exc
        return np.ascontiguousarray(vecs[:, ::-1][:, :self.rank])

    def step(self, grads) -> None:
        self.t += 1
        lr_t = self.hyper.lr * self.lr_scale
        refresh = (self.t - 1) % self.refresh_every == 0
        for name in WEIGHT_NAMES:
            g = grads.tensors()[name]
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in tensor {name}")
            if refresh or self.projectors[name] is None:
                self.projectors[name] = self._projector(g)
            p = self.projectors[name]
            r = p.T @ g
            hp = self.hyper
            mu = hp.beta1 * self.mu_r[name]
            mu += (1.0 - hp.beta1) * r
            nu = hp.beta2 * self.nu_r[name]
            nu += (1.0 - hp.beta2) * (r * r)
            self.mu_r[name] = mu
            self.nu_r[name] = nu
            mu_hat = mu / (1.0 - hp.beta1 ** self.t)
            nu_hat = nu / (1.0 - hp.beta2 ** self.t)
            self.model.tensors()[name] -= lr_t * (p @ (mu_hat / (np.sqrt(nu_hat) + hp.eps)))
        for name in BIAS_NAMES:
            g = grads.tensors()[name]
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in tensor {name}")
            self._adam.update(name, g, self.t, lr_t)

    def touch_count(self) -> int:
        return sum(a.size for a in self.model.tensors().values()) if self.t else 0

    def gradient_masks(self) -> dict[str, np.ndarray | None]:
        return {name: None for name in ("w1", "b1", "w2", "b2")}
