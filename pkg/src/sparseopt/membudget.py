"""Closed-form memory accounting for a fully connected layer W in R^{m x n}.

Counts are in 32-bit variables (4 bytes each); megabytes are binary
(1 MB = 2^20 bytes) rounded to two decimals. Where a count is a fraction
of m*n (the sparse method), the floor is taken of the full product, and
for multi-layer aggregates the floor is taken once over the summed
product rather than per layer.

Per method, the (weight, gradient, optimizer state, trainable) variable
counts are:

  sparse   mn, 2*mn*kappa, 3*mn*kappa, mn*kappa
  adam     mn, mn, 2mn, mn
  lora     mn+mr+nr, mr+nr, 2(mr+nr), mr+nr       (pissa, relora identical)
  dora     lora plus m / m / 2m / m
  vera     mn+mr+nr+m+r, m+r, 2(m+r), m+r
  galore   mn, mn, mr+2nr, mn
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

BYTES_PER_VAR = 4
MB = 2 ** 20

METHODS = ("sparse", "adam", "lora", "pissa", "dora", "relora", "vera", "galore")
_RANK_METHODS = ("lora", "pissa", "dora", "relora", "vera", "galore")


@dataclass(frozen=True)
class LayerShape:
    m: int  # output dim
    n: int  # input dim

    def __post_init__(self) -> None:
        if self.m < 1 or self.n < 1:
            raise ValueError(f"layer dims must be >= 1, got ({self.m}, {self.n})")


@dataclass(frozen=True)
class MethodSpec:
    method: str
    kappa: float | None = None
    rank: int | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == "sparse":
            if self.kappa is None or not 0.0 < self.kappa <= 1.0:
                raise ValueError(f"sparse method needs kappa in (0, 1], got {self.kappa}")
            if self.rank is not None:
                raise ValueError("sparse method takes no rank")
        elif self.method == "adam":
            if self.kappa is not None or self.rank is not None:
                raise ValueError("adam takes neither kappa nor rank")
        else:
            if self.rank is None or self.rank < 1:
                raise ValueError(f"{self.method} needs rank >= 1, got {self.rank}")
            if self.kappa is not None:
                raise ValueError(f"{self.method} takes no kappa")

    def label(self) -> str:
        if self.method == "sparse":
            return f"sparse (kappa={_format_kappa(self.kappa)})"
        if self.method == "adam":
            return "adam"
        return f"{self.method} (r={self.rank})"


def _format_kappa(kappa: float) -> str:
    pct = kappa * 100.0
    return f"{pct:g}%"


@dataclass(frozen=True)
class MemoryRow:
    label: str
    weight_vars: int
    grad_vars: int
    state_vars: int
    trainable_vars: int

    @property
    def weight_mb(self) -> float:
        return _mb(self.weight_vars)

    @property
    def grad_mb(self) -> float:
        return _mb(self.grad_vars)

    @property
    def state_mb(self) -> float:
        return _mb(self.state_vars)

    @property
    def total_mb(self) -> float:
        return _mb(self.weight_vars + self.grad_vars + self.state_vars)


def _mb(vars_count: int) -> float:
    return round(vars_count * BYTES_PER_VAR / MB, 2)


def _floor_guarded(x: float) -> int:
    # guard against float dust on products that are exact in decimal
    return int(math.floor(round(x, 6)))


def _raw_counts(layer: LayerShape, spec: MethodSpec) -> tuple[float, float, float, float]:
    """Unfloored (weight, grad, state, trainable) counts for one layer."""
    m, n = layer.m, layer.n
    mn = m * n
    if spec.method == "sparse":
        k = spec.kappa
        return (mn, 2.0 * mn * k, 3.0 * mn * k, mn * k)
    if spec.method == "adam":
        return (mn, mn, 2 * mn, mn)
    r = spec.rank
    if spec.method in ("lora", "pissa", "relora"):
        lr_vars = m * r + n * r
        return (mn + lr_vars, lr_vars, 2 * lr_vars, lr_vars)
    if spec.method == "dora":
        lr_vars = m * r + n * r
        return (mn + lr_vars + m, lr_vars + m, 2 * lr_vars + 2 * m, lr_vars + m)
    if spec.method == "vera":
        return (mn + m * r + n * r + m + r, m + r, 2 * m + 2 * r, m + r)
    # galore
    return (mn, mn, m * r + 2 * n * r, mn)


def _check_rank(layer: LayerShape, spec: MethodSpec) -> None:
    if spec.method in _RANK_METHODS and spec.rank >= min(layer.m, layer.n):
        raise ValueError(
            f"rank {spec.rank} must be < min(m, n) = {min(layer.m, layer.n)} "
            f"for layer ({layer.m}, {layer.n})"
        )


def budget_model(layers: list[LayerShape], spec: MethodSpec, label: str | None = None) -> MemoryRow:
    """Aggregate memory row over a list of layers.

    Fractional counts are floored once over the aggregate, which is why a
    single-layer aggregate equals `budget` exactly.
    """
    if not layers:
        raise ValueError("layer list must be nonempty")
    totals = [0.0, 0.0, 0.0, 0.0]
    for layer in layers:
        _check_rank(layer, spec)
        for i, v in enumerate(_raw_counts(layer, spec)):
            totals[i] += v
    weight, grad, state, trainable = (_floor_guarded(v) for v in totals)
    return MemoryRow(label or spec.label(), weight, grad, state, trainable)


def budget(layer: LayerShape, spec: MethodSpec) -> MemoryRow:
    """Memory row for a single layer."""
    return budget_model([layer], spec)


# --- stock layer lists -----------------------------------------------------

def mlp_layers(class_count: int = 10, hidden: int = 128, in_dim: int = 784) -> list[LayerShape]:
    """Weight matrices of the two-layer MLP (biases excluded by convention)."""
    return [LayerShape(hidden, in_dim), LayerShape(class_count, hidden)]


def clip_vit_b16_layers() -> list[LayerShape]:
    """All linear layers of the 12 vision (width 768) and 12 text (width 512)
    transformer blocks of CLIP ViT-B/16: four attention projections plus the
    two MLP matrices per block. Biases excluded."""
    layers: list[LayerShape] = []
    for width, mlp_width, blocks in ((768, 3072, 12), (512, 2048, 12)):
        for _ in range(blocks):
            layers.extend(LayerShape(width, width) for _ in range(4))
            layers.append(LayerShape(mlp_width, width))
            layers.append(LayerShape(width, mlp_width))
    return layers


def read_layers_csv(path: str) -> list[LayerShape]:
    """CSV of one `m,n` pair per row; a leading `m,n` header row is allowed."""
    layers = []
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row or row[0].strip().lower() == "m":
                continue
            if len(row) < 2:
                raise ValueError(f"layer row needs two fields, got {row!r}")
            layers.append(LayerShape(int(row[0]), int(row[1])))
    if not layers:
        raise ValueError(f"no layers found in {path}")
    return layers


# --- rendering -------------------------------------------------------------

_COLUMNS = (
    "method", "weight_vars", "weight_mb", "grad_vars", "grad_mb",
    "state_vars", "state_mb", "trainable_vars", "total_mb",
)


def _row_cells(row: MemoryRow) -> list[str]:
    return [
        row.label,
        str(row.weight_vars), f"{row.weight_mb:.2f}",
        str(row.grad_vars), f"{row.grad_mb:.2f}",
        str(row.state_vars), f"{row.state_mb:.2f}",
        str(row.trainable_vars), f"{row.total_mb:.2f}",
    ]


def render_csv(rows: list[MemoryRow]) -> str:
    lines = [",".join(_COLUMNS)]
    lines.extend(",".join(_row_cells(r)) for r in rows)
    return "\n".join(lines) + "\n"


def render_markdown(rows: list[MemoryRow]) -> str:
    cells = [list(_COLUMNS)] + [_row_cells(r) for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(_COLUMNS))]
    out = []
    for k, row in enumerate(cells):
        out.append("| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |")
        if k == 0:
            out.append("|" + "|".join("-" * (w + 2) for w in widths) + "|")
    return "\n".join(out) + "\n"
