"""Training loop and moment prediction for the boosted ensemble.

Training fits one tree per iteration on the gradient and hessian of the
loss at the current point estimates. Only the mean path advances during
training; the per-leaf variances are stored and consumed at prediction
time, where the accumulated moments follow

    mu_k  = mu_{k-1} - alpha * leaf.mu
    var_k = max(0, var_{k-1} + alpha^2 * leaf.var
                   - 2 * alpha * rho * sqrt(var_{k-1}) * sqrt(leaf.var))

with a single constant correlation rho between consecutive trees. Since
rho only enters prediction, it can be retuned after training without
refitting anything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import BinEdges, RawDataset, apply_bins, compute_bin_edges
from .errors import FeatureCountMismatch, NonFiniteEstimate
from .loss import GradHess
from .tree import LeafStats, Tree, TreeConfig, grow_tree, route_many

LossProvider = Callable[[np.ndarray, np.ndarray], GradHess]

# Validation metrics see (y, mu, var) so that variance-aware scores such
# as closed-form normal CRPS can drive early stopping; point metrics
# simply ignore the last argument.
ValidMetric = Callable[[np.ndarray, np.ndarray, np.ndarray], float]


@dataclass(frozen=True)
class BoostConfig:
    n_estimators: int = 100
    learning_rate: float = 0.1
    bagging_fraction: float = 1.0
    feature_fraction: float = 1.0
    tree: TreeConfig = field(default_factory=TreeConfig)
    rho: float | str = "auto"
    early_stopping_rounds: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.bagging_fraction <= 1:
            raise ValueError("bagging_fraction must be in (0, 1]")
        if not 0 < self.feature_fraction <= 1:
            raise ValueError("feature_fraction must be in (0, 1]")
        if isinstance(self.rho, str):
            if self.rho != "auto":
                raise ValueError("rho must be a number in [-1, 1] or 'auto'")
        elif not -1.0 <= float(self.rho) <= 1.0:
            raise ValueError("rho must be a number in [-1, 1] or 'auto'")
        if self.early_stopping_rounds is not None and self.early_stopping_rounds < 1:
            raise ValueError("early_stopping_rounds must be at least 1")


@dataclass(frozen=True)
class PredictiveMoments:
    """Accumulated per-sample mean and variance of the prediction."""

    mu: np.ndarray
    var: np.ndarray


@dataclass
class Ensemble:
    """A trained model: trees in boosting order plus everything needed
    to bin new data and accumulate moments."""

    trees: list[Tree]
    y0: float
    alpha: float
    rho_default: float
    edges: BinEdges
    config: BoostConfig
    n_train: int
    feature_names: list[str]
    target_name: str | None = None


def default_rho(n_train: int) -> float:
    """Data-size heuristic for the tree correlation: log10(n)/100."""
    if n_train < 1:
        raise ValueError("n_train must be at least 1")
    return math.log10(n_train) / 100.0


def update_moments(
    mu_prev,
    var_prev,
    alpha: float,
    rho: float,
    leaf: LeafStats,
):
    """One accumulation step of the mean/variance recursion.

    Works elementwise on arrays as well as on scalars. The variance is
    clamped at zero after the correlation cross-term, which can push it
    slightly negative.
    """
    scalar = np.isscalar(mu_prev) and np.isscalar(var_prev)
    mu = np.asarray(mu_prev, dtype=np.float64) - alpha * leaf.mu
    var = (
        np.asarray(var_prev, dtype=np.float64)
        + alpha * alpha * leaf.var
        - 2.0 * alpha * rho * np.sqrt(var_prev) * math.sqrt(leaf.var)
    )
    var = np.maximum(var, 0.0)
    if scalar:
        return float(mu), float(var)
    return mu, var


def _update_vectors(mu, var, alpha, rho, leaf_mu, leaf_var):
    """Vectorized recursion step with per-sample leaf moments."""
    new_mu = mu - alpha * leaf_mu
    new_var = var + alpha * alpha * leaf_var - 2.0 * alpha * rho * np.sqrt(
        var
    ) * np.sqrt(leaf_var)
    np.maximum(new_var, 0.0, out=new_var)
    return new_mu, new_var


def _leaf_arrays(tree: Tree) -> tuple[np.ndarray, np.ndarray]:
    mu = np.array([leaf.mu for leaf in tree.leaves])
    var = np.array([leaf.var for leaf in tree.leaves])
    return mu, var


def train(
    data: RawDataset,
    loss: LossProvider,
    config: BoostConfig,
    valid: tuple[RawDataset, ValidMetric] | None = None,
    progress: Callable[[int, float | None], None] | None = None,
) -> Ensemble:
    """Fit an ensemble by sequential tree construction.

    ``loss(y, yhat)`` must return the per-sample GradHess at the current
    estimates; gradients are always evaluated on the full training set
    and bagging only restricts which rows the tree is built from. When
    ``valid`` is given as (dataset, metric), the metric (lower is
    better) is scored every iteration on the validation moments,
    reported through ``progress``, and the returned ensemble is
    truncated at the best iteration; ``early_stopping_rounds``
    additionally stops scanning after that many non-improving rounds.

    The boost-level feature_fraction and seed override whatever the
    nested TreeConfig carries, so one config object fully determines a
    run.
    """
    if valid is None and config.early_stopping_rounds is not None:
        raise ValueError("early stopping needs a validation set")

    edges = compute_bin_edges(data, config.tree.max_bins)
    binned = apply_bins(data, edges)
    n = data.n
    y = data.target
    y0 = float(np.mean(y))
    alpha = config.learning_rate
    rho_default = (
        default_rho(n) if config.rho == "auto" else float(config.rho)
    )
    tree_config = replace(
        config.tree, feature_fraction=config.feature_fraction, seed=config.seed
    )

    valid_binned = None
    valid_mu = None
    valid_var = None
    metric = None
    if valid is not None:
        valid_data, metric = valid
        if valid_data.f != data.f:
            raise FeatureCountMismatch(
                f"validation data has {valid_data.f} features, train has {data.f}"
            )
        valid_binned = apply_bins(valid_data, edges)
        valid_mu = np.full(valid_data.n, y0)
        valid_var = np.zeros(valid_data.n)

    mu = np.full(n, y0)
    bag_size = int(np.ceil(config.bagging_fraction * n))
    trees: list[Tree] = []
    best_value = np.inf
    best_iteration = -1

    for k in range(config.n_estimators):
        gh = loss(y, mu)
        if bag_size < n:
            bag_rng = np.random.default_rng([config.seed, k, 0])
            mask = np.sort(bag_rng.choice(n, size=bag_size, replace=False))
        else:
            mask = np.arange(n)
        tree_rng = np.random.default_rng([config.seed, k, 1])
        tree = grow_tree(binned, gh, mask, tree_config, tree_rng)
        trees.append(tree)

        leaf_mu, leaf_var = _leaf_arrays(tree)
        mu = mu - alpha * leaf_mu[route_many(tree, binned.bins)]
        if not np.all(np.isfinite(mu)):
            raise NonFiniteEstimate(
                f"point estimates became non-finite at iteration {k}"
            )

        value = None
        if valid_binned is not None:
            valid_ids = route_many(tree, valid_binned.bins)
            valid_mu, valid_var = _update_vectors(
                valid_mu,
                valid_var,
                alpha,
                rho_default,
                leaf_mu[valid_ids],
                leaf_var[valid_ids],
            )
            value = float(metric(valid_binned.target, valid_mu, valid_var))
            if value < best_value:
                best_value = value
                best_iteration = k
        if progress is not None:
            progress(k, value)
        if (
            config.early_stopping_rounds is not None
            and k - best_iteration >= config.early_stopping_rounds
        ):
            break

    if valid is not None and best_iteration >= 0:
        trees = trees[: best_iteration + 1]

    return Ensemble(
        trees=trees,
        y0=y0,
        alpha=alpha,
        rho_default=rho_default,
        edges=edges,
        config=config,
        n_train=n,
        feature_names=list(data.feature_names),
        target_name=data.target_name,
    )


def predict_moments(
    model: Ensemble,
    data: RawDataset,
    rho: float | None = None,
) -> PredictiveMoments:
    """Accumulate (mu, var) over all trees for every row of ``data``.

    ``rho`` overrides the stored default, which is how the correlation
    is swept after training.
    """
    if data.f != len(model.feature_names):
        raise FeatureCountMismatch(
            f"data has {data.f} features, model expects {len(model.feature_names)}"
        )
    if rho is None:
        rho = model.rho_default
    binned = apply_bins(data, model.edges)
    mu = np.full(data.n, model.y0)
    var = np.zeros(data.n)
    for tree in model.trees:
        leaf_mu, leaf_var = _leaf_arrays(tree)
        leaf_ids = route_many(tree, binned.bins)
        mu, var = _update_vectors(
            mu, var, model.alpha, rho, leaf_mu[leaf_ids], leaf_var[leaf_ids]
        )
    return PredictiveMoments(mu=mu, var=var)


def tree_contributions(
    model: Ensemble, data: RawDataset
) -> tuple[np.ndarray, np.ndarray]:
    """Per-tree leaf moments for every row, shaped (n_trees, n_rows).

    Routing is the expensive part of prediction and is independent of
    rho, so sweeping rho should route once through this function and
    replay the recursion per value with ``accumulate_moments``.
    """
    if data.f != len(model.feature_names):
        raise FeatureCountMismatch(
            f"data has {data.f} features, model expects {len(model.feature_names)}"
        )
    binned = apply_bins(data, model.edges)
    contrib_mu = np.empty((len(model.trees), data.n))
    contrib_var = np.empty((len(model.trees), data.n))
    for k, tree in enumerate(model.trees):
        leaf_mu, leaf_var = _leaf_arrays(tree)
        leaf_ids = route_many(tree, binned.bins)
        contrib_mu[k] = leaf_mu[leaf_ids]
        contrib_var[k] = leaf_var[leaf_ids]
    return contrib_mu, contrib_var


def accumulate_moments(
    y0: float,
    alpha: float,
    rho: float,
    contrib_mu: np.ndarray,
    contrib_var: np.ndarray,
) -> PredictiveMoments:
    """Replay the moment recursion over precomputed tree contributions."""
    n = contrib_mu.shape[1] if contrib_mu.ndim == 2 else 0
    mu = np.full(n, y0)
    var = np.zeros(n)
    for k in range(contrib_mu.shape[0]):
        mu, var = _update_vectors(mu, var, alpha, rho, contrib_mu[k], contrib_var[k])
    return PredictiveMoments(mu=mu, var=var)
