"""Gradient and hessian providers for the training losses.

Boosting only ever sees a loss through its per-sample gradient g and
hessian h at the current estimates. Two analytic providers are shipped,
plain MSE and the hierarchical weighted MSE that couples samples through
group sums, plus a central finite-difference provider for user-supplied
separable losses.

Conventions: the MSE is defined without a 1/2 factor, so g = 2(yhat - y)
and h = 2. The hierarchical loss is

    L = sum over levels a, groups G of level a:
            w_a * (sum_{i in G} y_i - sum_{i in G} yhat_i)^2

whose exact derivatives are g_i = -2 * sum_a w_a * r(a, group of i) with
r the group residual sum, and h_i = 2 * sum_a w_a.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import IndexOutOfRange, LengthMismatch, NonFiniteLoss, ParseError

DEFAULT_FD_STEP = 1e-5


@dataclass(frozen=True)
class GradHess:
    """Per-sample gradient and hessian vectors for one iteration."""

    g: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        g = np.ascontiguousarray(self.g, dtype=np.float64)
        h = np.ascontiguousarray(self.h, dtype=np.float64)
        if g.shape != h.shape or g.ndim != 1:
            raise LengthMismatch("gradient and hessian must be equal-length vectors")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "h", h)


@dataclass(frozen=True)
class HierarchyLevel:
    """One aggregation level: a weight and a partition of the sample rows.

    ``identity=True`` marks the level where every sample is its own
    group; its groups are generated on the fly and ``groups`` stays None.
    """

    weight: float
    groups: dict[str, np.ndarray] | None = None
    identity: bool = False


@dataclass(frozen=True)
class HierarchySpec:
    """Ordered aggregation levels; each level partitions the samples."""

    levels: list[HierarchyLevel]

    def __post_init__(self):
        if not self.levels:
            raise ValueError("a hierarchy needs at least one level")
        if any(level.weight < 0 for level in self.levels):
            raise ValueError("level weights must be nonnegative")
        if all(level.weight == 0 for level in self.levels):
            raise ValueError("level weights must not all be zero")

    def group_ids(self, level: int, n: int) -> tuple[np.ndarray, list[str]]:
        """Return (group id per sample, group keys) for one level.

        Verifies that the level's groups partition range(n): indices must
        be in range, and each sample must appear in exactly one group.
        """
        spec = self.levels[level]
        if spec.identity or spec.groups is None:
            return np.arange(n), [str(i) for i in range(n)]
        ids = np.full(n, -1, dtype=np.int64)
        keys = list(spec.groups)
        for gid, key in enumerate(keys):
            members = np.asarray(spec.groups[key], dtype=np.int64)
            if members.size and (members.min() < 0 or members.max() >= n):
                raise IndexOutOfRange(
                    f"level {level} group {key!r} refers to a row outside 0..{n - 1}"
                )
            if np.any(ids[members] != -1):
                raise ValueError(
                    f"level {level} group {key!r} overlaps another group"
                )
            ids[members] = gid
        if np.any(ids == -1):
            missing = int(np.argwhere(ids == -1)[0][0])
            raise ValueError(f"row {missing} belongs to no group of level {level}")
        return ids, keys


def mse_gradhess(y: np.ndarray, yhat: np.ndarray) -> GradHess:
    """Gradient and hessian of sum (y_i - yhat_i)^2: g = 2(yhat - y), h = 2."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise LengthMismatch(f"y has shape {y.shape}, yhat has shape {yhat.shape}")
    return GradHess(g=2.0 * (yhat - y), h=np.full(y.shape, 2.0))


def hier_wmse_loss(y: np.ndarray, yhat: np.ndarray, spec: HierarchySpec) -> float:
    """Weighted squared error of group sums, summed over all levels."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise LengthMismatch(f"y has shape {y.shape}, yhat has shape {yhat.shape}")
    n = y.size
    residual = y - yhat
    total = 0.0
    for a, level in enumerate(spec.levels):
        ids, keys = spec.group_ids(a, n)
        group_residual = np.bincount(ids, weights=residual, minlength=len(keys))
        total += level.weight * float(np.sum(group_residual**2))
    return total


def hier_wmse_gradhess(
    y: np.ndarray, yhat: np.ndarray, spec: HierarchySpec
) -> GradHess:
    """Exact derivatives of hier_wmse_loss with respect to each yhat_i."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise LengthMismatch(f"y has shape {y.shape}, yhat has shape {yhat.shape}")
    n = y.size
    residual = y - yhat
    g = np.zeros(n)
    weight_sum = 0.0
    for a, level in enumerate(spec.levels):
        ids, keys = spec.group_ids(a, n)
        group_residual = np.bincount(ids, weights=residual, minlength=len(keys))
        g -= 2.0 * level.weight * group_residual[ids]
        weight_sum += level.weight
    return GradHess(g=g, h=np.full(n, 2.0 * weight_sum))


def numeric_gradhess(
    loss_fn: Callable[[float, float], float],
    y: np.ndarray,
    yhat: np.ndarray,
    step: float = DEFAULT_FD_STEP,
) -> GradHess:
    """Central finite differences of a per-sample-separable loss.

    ``loss_fn(y_i, v)`` evaluates the loss of one sample at estimate v.
    The step is relative: delta_i = step * max(1, |yhat_i|). Coupled
    losses cannot go through this path since each sample is probed
    independently; they need an analytic provider.
    """
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise LengthMismatch(f"y has shape {y.shape}, yhat has shape {yhat.shape}")
    if step <= 0:
        raise ValueError("step must be positive")
    g = np.empty(y.size)
    h = np.empty(y.size)
    for i in range(y.size):
        delta = step * max(1.0, abs(yhat[i]))
        lo = loss_fn(y[i], yhat[i] - delta)
        mid = loss_fn(y[i], yhat[i])
        hi = loss_fn(y[i], yhat[i] + delta)
        if not (np.isfinite(lo) and np.isfinite(mid) and np.isfinite(hi)):
            raise NonFiniteLoss(f"loss not finite near yhat[{i}]={yhat[i]!r}")
        g[i] = (hi - lo) / (2.0 * delta)
        h[i] = (hi - 2.0 * mid + lo) / (delta * delta)
    return GradHess(g=g, h=h)


def parse_hierarchy(text: str) -> HierarchySpec:
    """Parse the hierarchy text format.

    Line 1 is ``levels=<k>``; each level opens with
    ``level <a> weight=<w>`` (append ``identity`` for the
    one-sample-per-group level) and is followed by
    ``group <key>: i1,i2,...`` lines holding 0-based sample rows.
    Blank lines and ``#`` comments are ignored.
    """
    declared: int | None = None
    levels: list[HierarchyLevel] = []
    current_groups: dict[str, np.ndarray] | None = None

    def finish_level():
        nonlocal current_groups
        if current_groups is not None and not levels[-1].identity:
            levels[-1] = HierarchyLevel(
                weight=levels[-1].weight, groups=current_groups
            )
        current_groups = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if declared is None:
            if not line.startswith("levels="):
                raise ParseError(lineno, 0, "expected levels=<k> on the first line")
            try:
                declared = int(line.split("=", 1)[1])
            except ValueError:
                raise ParseError(lineno, 0, "bad level count") from None
            continue
        if line.startswith("level "):
            if levels:
                finish_level()
            parts = line.split()
            identity = "identity" in parts[2:]
            weight_part = next((p for p in parts if p.startswith("weight=")), None)
            if len(parts) < 3 or weight_part is None:
                raise ParseError(lineno, 0, "expected level <a> weight=<w>")
            try:
                index = int(parts[1])
                weight = float(weight_part.split("=", 1)[1])
            except ValueError:
                raise ParseError(lineno, 0, "bad level index or weight") from None
            if index != len(levels):
                raise ParseError(lineno, 0, f"expected level {len(levels)}")
            levels.append(HierarchyLevel(weight=weight, identity=identity))
            current_groups = None if identity else {}
        elif line.startswith("group "):
            if not levels or current_groups is None:
                raise ParseError(lineno, 0, "group line outside a non-identity level")
            head, _, tail = line[len("group ") :].partition(":")
            key = head.strip()
            if not key or key in current_groups:
                raise ParseError(lineno, 0, f"bad or duplicate group key {key!r}")
            try:
                members = [int(tok) for tok in tail.split(",") if tok.strip()]
            except ValueError:
                raise ParseError(lineno, 0, "bad member index") from None
            current_groups[key] = np.asarray(members, dtype=np.int64)
        else:
            raise ParseError(lineno, 0, f"unrecognized line {line!r}")
    if declared is None:
        raise ParseError(1, 0, "empty hierarchy file")
    if levels:
        finish_level()
    if len(levels) != declared:
        raise ParseError(1, 0, f"declared {declared} levels, found {len(levels)}")
    try:
        return HierarchySpec(levels=levels)
    except ValueError as exc:
        raise ParseError(1, 0, str(exc)) from None


def load_hierarchy(path: str | Path) -> HierarchySpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_hierarchy(fh.read())
