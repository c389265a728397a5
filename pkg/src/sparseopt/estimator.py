"""scikit-learn estimator facade over the MLP trainer.

Wraps model construction, optimizer choice, and the early-stopping
training loop behind the usual fit/predict/predict_proba surface so the
optimizer composes with pipelines, grid search, and cross-validation.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import batch_stream
from .harness import ExperimentConfig, make_optimizer
from .mlp import backward, forward, init_mlp, softmax
from .rng import Rng

_KEY_INIT = 0x696E6974
_KEY_OPT = 0x6F707469


class SparseMlpClassifier(ClassifierMixin, BaseEstimator):
    """Two-layer ReLU network trained with the sparse optimizer or a baseline.

    Parameters mirror the experiment harness: `method` picks the update
    rule ("sparse", "adam", "lora", "relora", "galore"), `kappa` the
    density ratio of the sparse method, `rank` the factor rank of the
    low-rank baselines. Training stops when the batch loss drops below
    `tau` or after `max_iters` iterations.
    """

    def __init__(self, method="sparse", kappa=0.01, rank=2, grad_mode="random",
                 moment_mode="topm", support_mode="dynamic", learning_rate=1e-3,
                 beta1=0.9, beta2=0.999, eps=1e-8, refresh_every=30, tau=1e-4,
                 max_iters=3000, batch_size=64, hidden_dim=128,
                 lr_schedule="constant", random_state=0):
        self.method = method
        self.kappa = kappa
        self.rank = rank
        self.grad_mode = grad_mode
        self.moment_mode = moment_mode
        self.support_mode = support_mode
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.refresh_every = refresh_every
        self.tau = tau
        self.max_iters = max_iters
        self.batch_size = batch_size
        self.hidden_dim = hidden_dim
        self.lr_schedule = lr_schedule
        self.random_state = random_state

    def _loop_config(self) -> ExperimentConfig:
        # reuse the harness validation/construction; dummy data paths since
        # the estimator trains on in-memory arrays
        return ExperimentConfig(
            train_flat="-", test_flat="-",
            method=self.method, kappa=self.kappa, rank=self.rank,
            grad_mode=self.grad_mode, moment_mode=self.moment_mode,
            support_mode=self.support_mode, lr=self.learning_rate,
            beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            refresh_every=self.refresh_every, tau=self.tau,
            lr_schedule=self.lr_schedule, batch_size=self.batch_size,
            max_iters=self.max_iters, seeds=[int(self.random_state)],
            eval_every=0,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("classifier needs at least two classes")
        cfg = self._loop_config()
        labels = np.searchsorted(self.classes_, y)

        seed = int(self.random_state)
        root = Rng(seed)
        model = init_mlp(root.spawn(_KEY_INIT), len(self.classes_),
                         in_dim=X.shape[1], hidden_dim=self.hidden_dim)
        opt = make_optimizer(cfg, model, root.spawn(_KEY_OPT))

        batch = min(self.batch_size or X.shape[0], X.shape[0])
        batches = batch_stream(X.shape[0], batch, seed)
        loss = float("inf")
        it = 0
        for it in range(1, self.max_iters + 1):
            if self.lr_schedule == "cosine":
                opt.lr_scale = 0.5 * (1.0 + math.cos(math.pi * (it - 1) / self.max_iters))
            idx = next(batches)
            grads = backward(opt.eval_model(), X[idx], labels[idx])
            loss = grads.loss
            if not math.isfinite(loss) or loss < self.tau:
                break
            opt.step(grads)
        self.model_ = opt.eval_model()
        self.n_iter_ = it
        self.final_loss_ = loss
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return forward(self.model_, X)

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=1)]
