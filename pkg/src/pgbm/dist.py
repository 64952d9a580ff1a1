"""Moment-matched output distributions.

The model learns only (mu, var) per row; turning that into samples
means choosing a family and solving its parameters so the analytic mean
and variance equal the learned moments. Nine families are supported,
each under its standard two-moment parameterization (Poisson has a
single parameter, so only the mean is matched). Rows whose moments are
infeasible for the requested family fall back to a normal draw instead
of aborting the batch; the fallback count is reported on the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boost import PredictiveMoments
from .errors import InfeasibleMoments

FAMILIES = (
    "normal",
    "studentt3",
    "logistic",
    "laplace",
    "lognormal",
    "gumbel",
    "weibull",
    "poisson",
    "negativebinomial",
)

_WEIBULL_K_LO = 0.1
_WEIBULL_K_HI = 50.0
_WEIBULL_TOL = 1e-10
_WEIBULL_MAX_ITER = 200


@dataclass(frozen=True)
class DistSpec:
    family: str = "normal"
    clamp_nonneg: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(
                f"unknown family {self.family!r}; choose from {', '.join(FAMILIES)}"
            )


@dataclass(frozen=True)
class SampleMatrix:
    """Draws shaped (n_samples, n_rows); column i holds row i's draws."""

    samples: np.ndarray
    seed: int
    fallback_rows: int = 0


def _weibull_moment_ratio(k: float) -> float:
    return math.gamma(1.0 + 2.0 / k) / math.gamma(1.0 + 1.0 / k) ** 2


def _weibull_shape(mu: float, var: float) -> float:
    """Solve Gamma(1+2/k)/Gamma(1+1/k)^2 = 1 + var/mu^2 for the shape k.

    The ratio is strictly decreasing in k, so bisection on a fixed
    bracket suffices; moments outside the bracket's reachable range are
    infeasible (this includes var = 0, which needs k = infinity).
    """
    target = 1.0 + var / (mu * mu)
    lo, hi = _WEIBULL_K_LO, _WEIBULL_K_HI
    f_lo = _weibull_moment_ratio(lo) - target
    f_hi = _weibull_moment_ratio(hi) - target
    if f_lo < 0 or f_hi > 0:
        raise InfeasibleMoments("weibull", mu, var)
    for _ in range(_WEIBULL_MAX_ITER):
        mid = 0.5 * (lo + hi)
        f_mid = _weibull_moment_ratio(mid) - target
        if abs(f_mid) <= _WEIBULL_TOL:
            return mid
        if f_mid > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def match_params(family: str, mu: float, var: float) -> dict[str, float]:
    """Parameters whose analytic mean/variance equal (mu, var).

    Feasibility: lognormal, weibull and poisson need mu > 0;
    negativebinomial needs mu > 0 and var > mu (overdispersion); the
    weibull bracket additionally bounds var/mu^2. Poisson ignores var
    entirely. Violations raise InfeasibleMoments.
    """
    if var < 0:
        raise ValueError("var must be nonnegative")
    if family == "normal":
        return {"loc": mu, "scale": math.sqrt(var)}
    if family == "studentt3":
        return {"loc": mu, "scale": math.sqrt(var / 3.0)}
    if family == "logistic":
        return {"loc": mu, "scale": math.sqrt(3.0 * var) / math.pi}
    if family == "laplace":
        return {"loc": mu, "scale": math.sqrt(var / 2.0)}
    if family == "gumbel":
        beta = math.sqrt(6.0 * var) / math.pi
        return {"loc": mu - beta * np.euler_gamma, "scale": beta}
    if family == "lognormal":
        if mu <= 0:
            raise InfeasibleMoments("lognormal", mu, var)
        sigma2 = math.log1p(var / (mu * mu))
        return {"mean": math.log(mu) - 0.5 * sigma2, "sigma": math.sqrt(sigma2)}
    if family == "weibull":
        if mu <= 0:
            raise InfeasibleMoments("weibull", mu, var)
        k = _weibull_shape(mu, var)
        return {"shape": k, "scale": mu / math.gamma(1.0 + 1.0 / k)}
    if family == "poisson":
        if mu <= 0:
            raise InfeasibleMoments("poisson", mu, var)
        return {"rate": mu}
    if family == "negativebinomial":
        if mu <= 0 or var <= mu:
            raise InfeasibleMoments("negativebinomial", mu, var)
        return {"r": mu * mu / (var - mu), "p": mu / var}
    raise ValueError(f"unknown family {family!r}")


def _draw(rng: np.random.Generator, family: str, params: dict[str, float], m: int):
    if family == "normal":
        return rng.normal(params["loc"], params["scale"], m)
    if family == "studentt3":
        return params["loc"] + params["scale"] * rng.standard_t(3, m)
    if family == "logistic":
        return rng.logistic(params["loc"], params["scale"], m)
    if family == "laplace":
        return rng.laplace(params["loc"], params["scale"], m)
    if family == "gumbel":
        return rng.gumbel(params["loc"], params["scale"], m)
    if family == "lognormal":
        return rng.lognormal(params["mean"], params["sigma"], m)
    if family == "weibull":
        return params["scale"] * rng.weibull(params["shape"], m)
    if family == "poisson":
        return rng.poisson(params["rate"], m).astype(np.float64)
    if family == "negativebinomial":
        return rng.negative_binomial(params["r"], params["p"], m).astype(np.float64)
    raise ValueError(f"unknown family {family!r}")


def sample(
    moments: PredictiveMoments,
    spec: DistSpec,
    n_samples_out: int,
    seed: int = 0,
) -> SampleMatrix:
    """Draw n_samples_out values per row from the matched distribution.

    Each row uses its own generator stream seeded by (seed, row index),
    so the output is deterministic and independent of any batching or
    scheduling of rows.
    """
    if n_samples_out < 1:
        raise ValueError("n_samples_out must be at least 1")
    n = len(moments.mu)
    out = np.empty((n_samples_out, n))
    fallback = 0
    for i in range(n):
        mu_i = float(moments.mu[i])
        var_i = float(moments.var[i])
        family = spec.family
        try:
            params = match_params(family, mu_i, var_i)
        except InfeasibleMoments:
            family = "normal"
            params = match_params(family, mu_i, var_i)
            fallback += 1
        rng = np.random.default_rng([seed, i])
        out[:, i] = _draw(rng, family, params, n_samples_out)
    if spec.clamp_nonneg:
        np.maximum(out, 0.0, out=out)
    return SampleMatrix(samples=out, seed=seed, fallback_rows=fallback)
