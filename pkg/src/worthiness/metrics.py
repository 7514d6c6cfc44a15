"""Scalar statistical primitives shared by all modules.

Gaussian CDF, fidelity loss, pairwise comparison probability, Spearman rank
correlation with fractional ties, and per-image squared error.
"""

import math
from collections.abc import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateVariance,
    InvalidValue,
    ShapeError,
    UndefinedCorrelation,
    UnknownImage,
)

SQRT2 = math.sqrt(2.0)


def std_normal_cdf(z: float) -> float:
    """Standard Gaussian CDF via the complementary error function.

    math.erfc is a correctly rounded libm call, far inside the 1e-12
    absolute-error budget.
    """
    z = float(z)
    if not math.isfinite(z):
        raise InvalidValue(f"std_normal_cdf requires finite z, got {z}")
    return 0.5 * math.erfc(-z / SQRT2)


def fidelity_loss(p: float, p_hat: float) -> float:
    """Bounded divergence 1 - sqrt(p*p_hat) - sqrt((1-p)(1-p_hat)).

    Zero iff the two Bernoulli distributions coincide; one iff they have
    disjoint support. Symmetric in its arguments.
    """
    p = float(p)
    p_hat = float(p_hat)
    for name, v in (("p", p), ("p_hat", p_hat)):
        if not (0.0 <= v <= 1.0):
            raise InvalidValue(f"fidelity_loss requires {name} in [0,1], got {v}")
    return 1.0 - math.sqrt(p * p_hat) - math.sqrt((1.0 - p) * (1.0 - p_hat))


def comparison_probability(
    mu_x: float, sigma_x: float, mu_y: float, sigma_y: float
) -> float:
    """Probability that x outranks y under independent Gaussian quality."""
    vals = (float(mu_x), float(sigma_x), float(mu_y), float(sigma_y))
    if not all(math.isfinite(v) for v in vals):
        raise InvalidValue(f"comparison_probability requires finite inputs, got {vals}")
    mu_x, sigma_x, mu_y, sigma_y = vals
    if sigma_x < 0.0 or sigma_y < 0.0:
        raise InvalidValue("standard deviations must be nonnegative")
    denom_sq = sigma_x * sigma_x + sigma_y * sigma_y
    if denom_sq == 0.0:
        raise DegenerateVariance("both variances are zero")
    return std_normal_cdf((mu_x - mu_y) / math.sqrt(denom_sq))


def fractional_ranks(values: Sequence[float]) -> np.ndarray:
    """Average-tie (fractional) ranks, 1-based."""
    arr = np.asarray(values, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.size, dtype=np.float64)
    i = 0
    while i < arr.size:
        j = i
        while j + 1 < arr.size and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        # positions i..j share the same value; assign the mean rank
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srcc(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman rank correlation with fractional (average) tie ranks."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"srcc requires equal-length 1-d inputs, got {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ShapeError(f"srcc requires at least 2 observations, got {x.size}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise InvalidValue("srcc requires finite inputs")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelation("srcc is undefined for a constant sequence")
    rx = fractional_ranks(x)
    ry = fractional_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    return float(np.dot(rx, ry) / math.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))


def squared_error_table(
    f_scores: Mapping[str, float], mos: Mapping[str, float]
) -> dict[str, float]:
    """Per-image squared prediction error (f(x) - mos(x))^2."""
    out: dict[str, float] = {}
    for image_id in sorted(f_scores):
        if image_id not in mos:
            raise UnknownImage(f"no MOS for scored image {image_id!r}")
        d = float(f_scores[image_id]) - float(mos[image_id])
        out[image_id] = d * d
    return out
