"""Experiment orchestration: config, training loop, metrics, aggregation.

A run is a pure function of (config, seed): model init, support/batch
selection, and every optimizer draw come from child streams of the seed,
so repeating a run reproduces its metrics file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field, asdict
from typing import Iterable

import numpy as np

from . import data as datamod
from .errors import AggregationError, NumericalError
from .linalg import numerical_rank
from .lowrank import GaloreOptimizer, LoraOptimizer
from .mlp import Mlp, accuracy, backward, init_mlp, load_checkpoint, save_checkpoint
from .optim import AdamOptimizer, SparseAdam, SparseHyper
from .rng import Rng

_KEY_INIT = 0x696E6974  # "init"
_KEY_OPT = 0x6F707469   # "opti"

METRICS_HEADER = "iteration,train_loss,test_accuracy,touched_params,rank_w1,rank_w2"

METHODS = ("sparse", "adam", "lora", "relora", "galore")
LR_SCHEDULES = ("constant", "cosine")
MODES = ("full", "fewshot", "adapt")

#: Default hyperparameters of the two-layer experiments.
MLP_DEFAULTS = dict(
    lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, kappa=0.01, refresh_every=30,
    tau=1e-4, max_iters=3000, batch_size=64, lr_schedule="constant",
)

#: Named preset mirroring the large-model fine-tuning settings; useful for
#: sensitivity sweeps even though that scale is out of reproduction reach.
CLIP_STYLE = dict(
    lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8, kappa=0.0005, refresh_every=10,
    tau=0.01, max_iters=2000, batch_size=32, lr_schedule="cosine",
)

PROFILES = {"mlp-default": MLP_DEFAULTS, "clip-style": CLIP_STYLE}

_CONFIG_KEYS = {
    "profile",
    "train_images", "train_labels", "test_images", "test_labels",
    "train_flat", "test_flat",
    "mode", "shots", "pretrained_ckpt",
    "method", "kappa", "rank",
    "grad_mode", "moment_mode", "support_mode", "keep_moment_support",
    "lr", "beta1", "beta2", "eps", "refresh_every", "tau",
    "lr_schedule", "batch_size", "max_iters",
    "seeds", "track_rank", "rank_every", "eval_every", "out_dir",
}


@dataclass
class ExperimentConfig:
    # data sources: either an IDX pair per split or a flat file per split
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_flat: str | None = None
    test_flat: str | None = None
    mode: str = "full"
    shots: int | None = None
    pretrained_ckpt: str | None = None

    method: str = "sparse"
    kappa: float = 0.01
    rank: int = 2
    grad_mode: str = "random"
    moment_mode: str = "topm"
    support_mode: str = "dynamic"
    keep_moment_support: bool = False

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    refresh_every: int = 30
    tau: float = 1e-4
    lr_schedule: str = "constant"
    batch_size: int | None = 64
    max_iters: int = 3000

    seeds: list[int] = field(default_factory=lambda: [0])
    track_rank: bool = False
    rank_every: int = 1
    eval_every: int = 10
    out_dir: str = "runs"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.mode == "fewshot" and (self.shots is None or self.shots < 1):
            raise ValueError("fewshot mode needs shots >= 1")
        if self.mode == "adapt" and not self.pretrained_ckpt:
            raise ValueError("adapt mode needs pretrained_ckpt")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1 or null, got {self.batch_size}")
        if self.rank_every < 1 or self.eval_every < 0:
            raise ValueError("rank_every must be >= 1 and eval_every >= 0")
        has_idx = all((self.train_images, self.train_labels, self.test_images, self.test_labels))
        has_flat = all((self.train_flat, self.test_flat))
        if not (has_idx or has_flat):
            raise ValueError("config needs either the four IDX paths or the two flat paths")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        unknown = set(raw) - _CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        raw = dict(raw)
        profile = raw.pop("profile", None)
        if profile is not None:
            if profile not in PROFILES:
                raise ValueError(f"unknown profile {profile!r}; available: {sorted(PROFILES)}")
            merged = dict(PROFILES[profile])
            merged.update(raw)
            raw = merged
        return cls(**raw)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def fingerprint(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()[:16]


def load_split(cfg: ExperimentConfig, split: str) -> datamod.Dataset:
    if getattr(cfg, f"{split}_flat"):
        return datamod.load_flat(getattr(cfg, f"{split}_flat"))
    return datamod.load_idx(getattr(cfg, f"{split}_images"), getattr(cfg, f"{split}_labels"))


def _sparse_hyper(cfg: ExperimentConfig) -> SparseHyper:
    return SparseHyper(
        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
        kappa=cfg.kappa, refresh_every=cfg.refresh_every, tau=cfg.tau,
        grad_mode=cfg.grad_mode, moment_mode=cfg.moment_mode,
        support_mode=cfg.support_mode, keep_moment_support=cfg.keep_moment_support,
    )


def make_optimizer(cfg: ExperimentConfig, model: Mlp, rng: Rng):
    hyper = _sparse_hyper(cfg)
    if cfg.method == "sparse":
        return SparseAdam(model, hyper, rng)
    if cfg.method == "adam":
        return AdamOptimizer(model, hyper)
    if cfg.method == "lora":
        return LoraOptimizer(model, hyper, cfg.rank, rng)
    if cfg.method == "relora":
        return LoraOptimizer(model, hyper, cfg.rank, rng, merge_every=cfg.refresh_every)
    return GaloreOptimizer(model, hyper, cfg.rank, refresh_every=cfg.refresh_every)


def _build_model(cfg: ExperimentConfig, train: datamod.Dataset, rng: Rng) -> Mlp:
    # a checkpoint may seed any mode; "adapt" merely makes it mandatory
    if cfg.pretrained_ckpt:
        model = load_checkpoint(cfg.pretrained_ckpt)
        if model.class_count != train.class_count:
            # keep the pretrained backbone, reinitialize the head for the
            # target label space
            fresh = init_mlp(rng, train.class_count, in_dim=model.in_dim,
                             hidden_dim=model.hidden_dim)
            model = Mlp(model.w1, model.b1, fresh.w2, fresh.b2)
        return model
    return init_mlp(rng, train.class_count)


def _masked(grad: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return grad
    out = np.zeros(grad.size, dtype=np.float64)
    out[mask] = grad.reshape(-1)[mask]
    return out.reshape(grad.shape)


@dataclass
class MetricsRow:
    iteration: int
    train_loss: float
    test_accuracy: float | None
    touched_params: int
    rank_w1: int | None
    rank_w2: int | None

    def as_csv(self) -> str:
        cells = [
            str(self.iteration),
            repr(float(self.train_loss)),
            "" if self.test_accuracy is None else repr(float(self.test_accuracy)),
            str(self.touched_params),
            "" if self.rank_w1 is None else str(self.rank_w1),
            "" if self.rank_w2 is None else str(self.rank_w2),
        ]
        return ",".join(cells)


@dataclass
class RunResult:
    seed: int
    status: str                 # "converged" | "max_iters" | "failed"
    iterations: int
    final_loss: float
    final_test_accuracy: float | None
    failure_reason: str | None = None


def run_seed(cfg: ExperimentConfig, train: datamod.Dataset, test: datamod.Dataset,
             seed: int) -> tuple[list[MetricsRow], RunResult]:
    """Train one seed to convergence/max_iters; never raises on numerical
    blowup, recording a failed RunResult instead."""
    root = Rng(seed)
    model = _build_model(cfg, train, root.spawn(_KEY_INIT))
    opt = make_optimizer(cfg, model, root.spawn(_KEY_OPT))

    if cfg.mode == "fewshot":
        task = datamod.sample_few_shot(train, cfg.shots, seed)
        pool = datamod.subset(train, task.support_indices)
    else:
        pool = train
    batch_size = cfg.batch_size if cfg.batch_size is not None else pool.size
    batch_size = min(batch_size, pool.size)
    batches = datamod.batch_stream(pool.size, batch_size, seed)

    rows: list[MetricsRow] = []
    status, reason = "max_iters", None
    for it in range(1, cfg.max_iters + 1):
        if cfg.lr_schedule == "cosine":
            opt.lr_scale = 0.5 * (1.0 + math.cos(math.pi * (it - 1) / cfg.max_iters))
        idx = next(batches)
        grads = backward(opt.eval_model(), pool.images[idx], pool.labels[idx])
        loss = grads.loss
        if not math.isfinite(loss):
            rows.append(MetricsRow(it, loss, None, 0, None, None))
            status, reason = "failed", f"non-finite loss at iteration {it}"
            break
        if loss < cfg.tau:
            rows.append(MetricsRow(it, loss, None, 0, None, None))
            status = "converged"
            break
        try:
            opt.step(grads)
        except NumericalError as exc:
            rows.append(MetricsRow(it, loss, None, 0, None, None))
            status, reason = "failed", str(exc)
            break
        rank_w1 = rank_w2 = None
        if cfg.track_rank and (it - 1) % cfg.rank_every == 0:
            masks = opt.gradient_masks()
            rank_w1 = numerical_rank(_masked(grads.w1, masks["w1"]))
            rank_w2 = numerical_rank(_masked(grads.w2, masks["w2"]))
        acc = None
        if cfg.eval_every and it % cfg.eval_every == 0:
            acc = accuracy(opt.eval_model(), test.images, test.labels)
        rows.append(MetricsRow(it, loss, acc, opt.touch_count(), rank_w1, rank_w2))

    final_acc = None
    if status != "failed":
        final_acc = accuracy(opt.eval_model(), test.images, test.labels)
        rows[-1].test_accuracy = final_acc
    return rows, RunResult(seed, status, rows[-1].iteration, rows[-1].train_loss,
                           final_acc, reason)


def write_metrics_csv(rows: Iterable[MetricsRow], path: str) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(METRICS_HEADER + "\n")
        for row in rows:
            f.write(row.as_csv() + "\n")


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None,
                   seed_offset: int = 0, verbose: bool = False) -> dict:
    """Run every seed, write metrics/run files plus an aggregate summary."""
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    train = load_split(cfg, "train")
    test = load_split(cfg, "test")
    fingerprint = cfg.fingerprint()

    results = []
    for seed in (s + seed_offset for s in cfg.seeds):
        rows, result = run_seed(cfg, train, test, seed)
        write_metrics_csv(rows, os.path.join(out_dir, f"metrics_seed{seed}.csv"))
        record = {
            "config_fingerprint": fingerprint,
            "config": asdict(cfg),
            **asdict(result),
        }
        with open(os.path.join(out_dir, f"run_seed{seed}.json"), "w") as f:
            json.dump(record, f, indent=2, sort_keys=True)
        results.append(record)
        if verbose:
            acc = result.final_test_accuracy
            print(f"seed {seed}: {result.status} at iteration {result.iterations}, "
                  f"loss {result.final_loss:.6g}"
                  + (f", test accuracy {acc:.4f}" if acc is not None else ""))

    summary = aggregate(results)
    with open(os.path.join(out_dir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "summary.md"), "w") as f:
        f.write(render_summary_markdown(summary))
    return summary


def aggregate(records: list[dict]) -> dict:
    """Mean and sample standard deviation of final test accuracy across runs.

    All records must come from the same config. Failed seeds are reported,
    not dropped silently; the mean is over successful seeds only.
    """
    if not records:
        raise AggregationError("no run records to aggregate")
    fingerprints = {r["config_fingerprint"] for r in records}
    if len(fingerprints) != 1:
        raise AggregationError(f"mixed config fingerprints: {sorted(fingerprints)}")
    ok = [r for r in records if r["status"] != "failed"]
    accs = [r["final_test_accuracy"] for r in ok]
    mean = sum(accs) / len(accs) if accs else float("nan")
    if len(accs) > 1:
        var = sum((a - mean) ** 2 for a in accs) / (len(accs) - 1)
        std = math.sqrt(var)
    else:
        std = 0.0
    return {
        "config_fingerprint": records[0]["config_fingerprint"],
        "n_seeds": len(records),
        "n_success": len(ok),
        "mean_test_accuracy": mean,
        "std_test_accuracy": std,
        "per_seed": [
            {"seed": r["seed"], "status": r["status"],
             "final_test_accuracy": r["final_test_accuracy"],
             "iterations": r["iterations"]}
            for r in records
        ],
        "failures": [
            {"seed": r["seed"], "reason": r["failure_reason"]}
            for r in records if r["status"] == "failed"
        ],
    }


def aggregate_dir(path: str) -> dict:
    records = []
    for name in sorted(os.listdir(path)):
        if name.startswith("run_seed") and name.endswith(".json"):
            with open(os.path.join(path, name)) as f:
                records.append(json.load(f))
    return aggregate(records)


def render_summary_markdown(summary: dict) -> str:
    lines = [
        "| seeds | successes | mean accuracy | std |",
        "|-------|-----------|---------------|-----|",
        f"| {summary['n_seeds']} | {summary['n_success']} "
        f"| {summary['mean_test_accuracy']:.2f} | {summary['std_test_accuracy']:.2f} |",
        "",
    ]
    if summary["failures"]:
        lines.append("Failed seeds:")
        for rec in summary["failures"]:
            lines.append(f"- seed {rec['seed']}: {rec['reason']}")
        lines.append("")
    return "\n".join(lines)


def pretrain(train: datamod.Dataset, ckpt_path: str, seed: int = 0,
             lr: float = 1e-3, tau: float = 1e-4, max_iters: int = 3000,
             batch_size: int = 64, verbose: bool = False) -> RunResult:
    """Train a fresh model with dense Adam and write an SOMLP1 checkpoint.

    A sidecar `<ckpt>.json` records how the checkpoint was produced; the
    checkpoint format itself carries no metadata.
    """
    root = Rng(seed)
    model = init_mlp(root.spawn(_KEY_INIT), train.class_count)
    hyper = SparseHyper(lr=lr, tau=tau, kappa=1.0, grad_mode="dense")
    opt = AdamOptimizer(model, hyper)
    batches = datamod.batch_stream(train.size, min(batch_size, train.size), seed)
    status = "max_iters"
    loss = float("inf")
    it = 0
    for it in range(1, max_iters + 1):
        idx = next(batches)
        grads = backward(model, train.images[idx], train.labels[idx])
        loss = grads.loss
        if not math.isfinite(loss):
            status = "failed"
            break
        if loss < tau:
            status = "converged"
            break
        opt.step(grads)
    save_checkpoint(model, ckpt_path)
    with open(ckpt_path + ".json", "w") as f:
        json.dump({"optimizer": "adam", "seed": seed, "lr": lr, "tau": tau,
                   "iterations": it, "final_loss": loss, "status": status},
                  f, indent=2, sort_keys=True)
    if verbose:
        print(f"pretrain: {status} at iteration {it}, loss {loss:.6g}")
    return RunResult(seed, status, it, loss, None)
