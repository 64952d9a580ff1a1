"""Histogram decision trees with stochastic leaf weights.

One tree is grown per boosting iteration over binned features. Split
candidates are scanned per (feature, bin) from gradient and hessian
histograms, and the tree expands best-first (the open leaf with the
largest qualifying gain splits next) until ``max_leaves`` is reached or
no leaf can improve.

A terminal node does not store a single weight. It stores the first two
moments of the ratio of the mean gradient to the mean hessian over its
instance set,

    mu  ~= gbar/d - cov_gh/d^2 + gbar*var_h/d^3
    var ~= var_g/d^2 + gbar^2*var_h/d^4 - 2*gbar*cov_gh/d^3

with d = hbar + lambda/n and all second moments Bessel-corrected. Both
corrections vanish for constant-hessian losses, where mu reduces exactly
to sum(g)/(sum(h) + lambda), the classic regularized leaf weight
magnitude. The minus sign of the classic weight lives in the boosting
update, which subtracts alpha*mu.

Child references inside a tree use nonnegative ids for split nodes and
the bitwise complement ~leaf_id for leaves, so a single integer routes
to either table.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .data import BinnedDataset
from .errors import (
    DegenerateHessian,
    EmptyMask,
    NonPositiveHessianDenominator,
)
from .loss import GradHess

EPS_HESSIAN = 1e-9


@dataclass(frozen=True)
class TreeConfig:
    max_leaves: int = 16
    max_bins: int = 64
    lam: float = 1.0
    min_split_gain: float = 0.0
    min_data_in_leaf: int = 1
    feature_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.max_leaves < 1:
            raise ValueError("max_leaves must be at least 1")
        if self.max_bins < 2:
            raise ValueError("max_bins must be at least 2")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.min_split_gain < 0:
            raise ValueError("min_split_gain must be nonnegative")
        if self.min_data_in_leaf < 1:
            raise ValueError("min_data_in_leaf must be at least 1")
        if not 0 < self.feature_fraction <= 1:
            raise ValueError("feature_fraction must be in (0, 1]")


@dataclass(frozen=True)
class SplitNode:
    """Internal node: go left when sample bin[feature] <= bin_threshold."""

    feature: int
    bin_threshold: int
    left: int
    right: int
    gain: float


@dataclass(frozen=True)
class LeafStats:
    """Moments of a leaf's stochastic weight and its instance count."""

    mu: float
    var: float
    n_leaf: int


@dataclass(frozen=True)
class Tree:
    """Split nodes, leaf moments and the root reference of one tree."""

    nodes: tuple[SplitNode, ...]
    leaves: tuple[LeafStats, ...]
    root: int

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "leaves", tuple(self.leaves))

    def n_leaves(self) -> int:
        return len(self.leaves)


def split_gain(
    sum_gl: float,
    sum_hl: float,
    sum_gr: float,
    sum_hr: float,
    lam: float,
) -> float:
    """Objective reduction of a candidate split.

    G = 1/2 * [gl^2/(hl+lam) + gr^2/(hr+lam) - (gl+gr)^2/(hl+hr+lam)]
    over the gradient and hessian sums of the two children.
    """
    dl = sum_hl + lam
    dr = sum_hr + lam
    dp = sum_hl + sum_hr + lam
    if dl <= 0 or dr <= 0 or dp <= 0:
        raise NonPositiveHessianDenominator(
            f"denominators ({dl}, {dr}, {dp}) must all be positive"
        )
    total_g = sum_gl + sum_gr
    return 0.5 * (sum_gl**2 / dl + sum_gr**2 / dr - total_g**2 / dp)


@dataclass(frozen=True)
class NodeHistogram:
    """Per-(feature, bin) sums of gradient, hessian and count for one node.

    ``features`` holds the actual feature indices of the rows; the bin
    axis is padded to the widest feature, with empty bins contributing
    zeros everywhere.
    """

    features: np.ndarray
    g: np.ndarray
    h: np.ndarray
    count: np.ndarray


def build_histogram(
    bins: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    indices: np.ndarray,
    features: np.ndarray,
    n_bins: int,
) -> NodeHistogram:
    """Accumulate the (feature, bin) sums for one node's instance set."""
    rows = len(features)
    hg = np.zeros((rows, n_bins))
    hh = np.zeros((rows, n_bins))
    hc = np.zeros((rows, n_bins), dtype=np.int64)
    g_slice = g[indices]
    h_slice = h[indices]
    for row, feature in enumerate(features):
        fbins = bins[indices, feature]
        hg[row] = np.bincount(fbins, weights=g_slice, minlength=n_bins)
        hh[row] = np.bincount(fbins, weights=h_slice, minlength=n_bins)
        hc[row] = np.bincount(fbins, minlength=n_bins)
    return NodeHistogram(features=features, g=hg, h=hh, count=hc)


def subtract_histogram(parent: NodeHistogram, left: NodeHistogram) -> NodeHistogram:
    """Sibling histogram by subtraction, with empty bins forced to zero.

    Counts subtract exactly, but the float sums keep rounding residue in
    bins whose rows all went left when the parent histogram is itself a
    subtraction result. Left uncleaned, that residue breaks the exact
    gain ties between thresholds that span empty bins, and the tie then
    resolves to an arbitrary bin instead of the lowest one.
    """
    count = parent.count - left.count
    g = parent.g - left.g
    h = parent.h - left.h
    empty = count == 0
    g[empty] = 0.0
    h[empty] = 0.0
    return NodeHistogram(features=parent.features, g=g, h=h, count=count)


def find_best_split(
    hist: NodeHistogram,
    config: TreeConfig,
    node_totals: tuple[float, float, int],
) -> tuple[int, int, float] | None:
    """Scan all (feature, bin) candidates and return the best qualifying one.

    A candidate qualifies when its gain strictly exceeds min_split_gain,
    both children hold at least min_data_in_leaf samples, and both child
    hessian sums plus lam stay above the positivity guard. Ties break to
    the lowest feature index, then the lowest bin.
    """
    total_g, total_h, total_n = node_totals
    parent_denom = total_h + config.lam
    if parent_denom <= EPS_HESSIAN:
        return None
    parent_term = total_g**2 / parent_denom

    best: tuple[int, int, float] | None = None
    for row, feature in enumerate(hist.features):
        gl = np.cumsum(hist.g[row])[:-1]
        hl = np.cumsum(hist.h[row])[:-1]
        nl = np.cumsum(hist.count[row])[:-1]
        gr = total_g - gl
        hr = total_h - hl
        nr = total_n - nl
        dl = hl + config.lam
        dr = hr + config.lam
        ok = (
            (nl >= config.min_data_in_leaf)
            & (nr >= config.min_data_in_leaf)
            & (dl > EPS_HESSIAN)
            & (dr > EPS_HESSIAN)
        )
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gains = 0.5 * (gl**2 / dl + gr**2 / dr - parent_term)
        gains = np.where(ok, gains, -np.inf)
        bin_idx = int(np.argmax(gains))
        gain = float(gains[bin_idx])
        if gain > config.min_split_gain and (best is None or gain > best[2]):
            best = (int(feature), bin_idx, gain)
    return best


def leaf_stats(g_slice: np.ndarray, h_slice: np.ndarray, lam: float) -> LeafStats:
    """Moments of the ratio of mean gradient to regularized mean hessian.

    Uses Bessel-corrected sample variances and the sample covariance of
    (g, h); with a single sample all three are zero and the leaf is
    deterministic.
    """
    g_slice = np.asarray(g_slice, dtype=np.float64)
    h_slice = np.asarray(h_slice, dtype=np.float64)
    n = g_slice.size
    if n == 0:
        raise EmptyMask("leaf statistics need at least one sample")
    lam_bar = lam / n
    g_bar = float(np.mean(g_slice))
    h_bar = float(np.mean(h_slice))
    denom = h_bar + lam_bar
    if denom <= EPS_HESSIAN:
        raise DegenerateHessian(
            f"mean hessian plus lambda/n is {denom}, not positive"
        )
    if n > 1:
        dg = g_slice - g_bar
        dh = h_slice - h_bar
        var_g = float(np.sum(dg * dg) / (n - 1))
        var_h = float(np.sum(dh * dh) / (n - 1))
        cov_gh = float(np.sum(dg * dh) / (n - 1))
    else:
        var_g = var_h = cov_gh = 0.0
    mu = g_bar / denom - cov_gh / denom**2 + g_bar * var_h / denom**3
    var = (
        var_g / denom**2
        + g_bar**2 * var_h / denom**4
        - 2.0 * g_bar * cov_gh / denom**3
    )
    return LeafStats(mu=mu, var=max(0.0, var), n_leaf=n)


class _Region:
    """A node under construction: its rows, histogram and best candidate."""

    __slots__ = ("indices", "hist", "total_g", "total_h", "total_n", "best", "order")

    def __init__(self, indices, hist, total_g, total_h, total_n, best, order):
        self.indices = indices
        self.hist = hist
        self.total_g = total_g
        self.total_h = total_h
        self.total_n = total_n
        self.best = best
        self.order = order


def grow_tree(
    data: BinnedDataset,
    gh: GradHess,
    sample_mask: np.ndarray,
    config: TreeConfig,
    rng: np.random.Generator | None = None,
) -> Tree:
    """Grow one tree over the masked rows, best-first, up to max_leaves.

    ``sample_mask`` is an array of row indices (a boolean mask is also
    accepted). When feature_fraction < 1 a random subset of
    ceil(fraction * f) features is drawn once for the whole tree from
    ``rng``. The right child's histogram is obtained by subtracting the
    left child's from the parent's.
    """
    indices = np.asarray(sample_mask)
    if indices.dtype == bool:
        indices = np.nonzero(indices)[0]
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise EmptyMask("cannot grow a tree over an empty sample mask")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    n_features = data.f
    if config.feature_fraction < 1.0:
        k = max(1, int(np.ceil(config.feature_fraction * n_features)))
        features = np.sort(rng.choice(n_features, size=k, replace=False))
    else:
        features = np.arange(n_features)
    n_bins = data.max_n_bins

    g = gh.g
    h = gh.h

    def make_region(idx, hist, tg, th, tn, order):
        best = find_best_split(hist, config, (tg, th, tn))
        return _Region(idx, hist, tg, th, tn, best, order)

    root_hist = build_histogram(data.bins, g, h, indices, features, n_bins)
    root = make_region(
        indices,
        root_hist,
        float(np.sum(g[indices])),
        float(np.sum(h[indices])),
        int(indices.size),
        order=0,
    )

    regions = [root]
    heap: list[tuple[float, int, _Region]] = []
    if root.best is not None:
        heapq.heappush(heap, (-root.best[2], root.order, root))
    splits: list[tuple[_Region, int, int, float, _Region, _Region]] = []
    n_leaves = 1

    while n_leaves < config.max_leaves and heap:
        _, _, region = heapq.heappop(heap)
        feature, threshold, gain = region.best
        row = int(np.searchsorted(features, feature))

        cum_g = np.cumsum(region.hist.g[row])
        cum_h = np.cumsum(region.hist.h[row])
        cum_n = np.cumsum(region.hist.count[row])
        left_g, left_h = float(cum_g[threshold]), float(cum_h[threshold])
        left_n = int(cum_n[threshold])

        go_left = data.bins[region.indices, feature] <= threshold
        left_idx = region.indices[go_left]
        right_idx = region.indices[~go_left]

        left_hist = build_histogram(data.bins, g, h, left_idx, features, n_bins)
        right_hist = subtract_histogram(region.hist, left_hist)

        left = make_region(left_idx, left_hist, left_g, left_h, left_n, len(regions))
        regions.append(left)
        right = make_region(
            right_idx,
            right_hist,
            region.total_g - left_g,
            region.total_h - left_h,
            region.total_n - left_n,
            len(regions),
        )
        regions.append(right)
        for child in (left, right):
            if child.best is not None:
                heapq.heappush(heap, (-child.best[2], child.order, child))
        splits.append((region, feature, threshold, gain, left, right))
        n_leaves += 1

    split_ids = {id(entry[0]): node_id for node_id, entry in enumerate(splits)}
    leaf_regions = [r for r in regions if id(r) not in split_ids]
    leaf_ids = {id(r): leaf_id for leaf_id, r in enumerate(leaf_regions)}

    def ref(region: _Region) -> int:
        node_id = split_ids.get(id(region))
        return node_id if node_id is not None else ~leaf_ids[id(region)]

    nodes = [
        SplitNode(
            feature=feature,
            bin_threshold=threshold,
            left=ref(left),
            right=ref(right),
            gain=gain,
        )
        for _, feature, threshold, gain, left, right in splits
    ]
    leaves = [
        leaf_stats(g[r.indices], h[r.indices], config.lam) for r in leaf_regions
    ]
    return Tree(nodes=nodes, leaves=leaves, root=ref(regions[0]))


def route(tree: Tree, binned_row: np.ndarray) -> int:
    """Route one binned row to its leaf id; bin <= threshold goes left."""
    ref = tree.root
    while ref >= 0:
        node = tree.nodes[ref]
        if binned_row[node.feature] <= node.bin_threshold:
            ref = node.left
        else:
            ref = node.right
    return ~ref


def route_many(tree: Tree, bins: np.ndarray) -> np.ndarray:
    """Route every row of a binned matrix; returns a vector of leaf ids."""
    n = bins.shape[0]
    if not tree.nodes:
        return np.zeros(n, dtype=np.int64)
    feature = np.array([node.feature for node in tree.nodes], dtype=np.int64)
    threshold = np.array([node.bin_threshold for node in tree.nodes], dtype=np.int64)
    left = np.array([node.left for node in tree.nodes], dtype=np.int64)
    right = np.array([node.right for node in tree.nodes], dtype=np.int64)

    position = np.full(n, tree.root, dtype=np.int64)
    active = position >= 0
    while active.any():
        rows = np.nonzero(active)[0]
        at = position[rows]
        values = bins[rows, feature[at]]
        position[rows] = np.where(values <= threshold[at], left[at], right[at])
        active = position >= 0
    return ~position
