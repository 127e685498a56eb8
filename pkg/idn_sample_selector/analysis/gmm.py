"""
Module for two-component 1D Gaussian mixtures fitted by EM
"""
import logging
from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from idn_sample_selector.utils.errors import (
    ConfigError,
    DegenerateDataError,
    InsufficientDataError,
)

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
MIN_VALUES = 4
LARGER_MEAN = "larger-mean"
SMALLER_MEAN = "smaller-mean"


@dataclass(frozen=True)
class Gmm1DFit:
    """
    Fitted mixture; component a always has the smaller (or equal) mean.

    `history` holds the log-likelihood after initialization followed by the value
    after every EM iteration.
    """

    weight_a: float
    weight_b: float
    mean_a: float
    mean_b: float
    var_a: float
    var_b: float
    log_likelihood: float
    iterations: int
    history: Tuple[float, ...] = ()

    @property
    def weights(self):
        return np.array([self.weight_a, self.weight_b])

    @property
    def means(self):
        return np.array([self.mean_a, self.mean_b])

    @property
    def variances(self):
        return np.array([self.var_a, self.var_b])

    def to_dict(self, with_history=False):
        data = asdict(self)
        if with_history:
            data["history"] = list(self.history)
        else:
            data.pop("history")
        return data


@dataclass(frozen=True)
class PosteriorRow:
    p_component_a: float
    p_component_b: float


def _log_joint(values, weights, means, variances):
    """log(weight_k) + log N(value; mean_k, var_k), one column per component"""
    return np.log(weights)[None, :] + norm.logpdf(
        values[:, None], loc=means[None, :], scale=np.sqrt(variances)[None, :]
    )


def fit_gmm1d(values, max_iter=100, tol=1e-6, variance_floor=VARIANCE_FLOOR, min_values=MIN_VALUES):
    """
    Fit a two-component Gaussian mixture by expectation-maximization

    EM runs on the standardized values (zero mean, unit variance) and the result is
    mapped back, so fitting a*values+b gives means a*mu+b and variances a^2*sigma^2.
    Initialization is deterministic: means at the 10th and 90th percentiles (min and
    max if those coincide), both variances at the overall variance, equal weights.

    Args:
        values: 1-D array of finite floats
        max_iter: Maximum EM iterations
        tol: Stop once the log-likelihood gain of an iteration is below this
        variance_floor: Lower bound for both component variances, relative to the
            variance of `values`
        min_values: Smallest number of values worth fitting

    Returns:
        Gmm1DFit with mean_a <= mean_b

    Raises:
        InsufficientDataError: fewer than `min_values` values
        DegenerateDataError: all values equal within 1e-12, or non-finite values
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < max(min_values, MIN_VALUES):
        raise InsufficientDataError(f"need at least {max(min_values, MIN_VALUES)} values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DegenerateDataError("values contain non-finite entries")
    if np.ptp(x) <= 1e-12:
        raise DegenerateDataError(f"all {x.size} values are equal ({x[0]!r})")

    center = float(np.mean(x))
    scale = float(np.std(x))
    z = (x - center) / scale
    # Jacobian of the standardization, so likelihoods are reported in the units of `values`
    log_jacobian = x.size * np.log(scale)

    means = np.percentile(z, [10.0, 90.0])
    if means[1] - means[0] <= 1e-12:
        means = np.array([z.min(), z.max()])
    variances = np.full(2, max(float(np.var(z)), variance_floor))
    weights = np.array([0.5, 0.5])

    log_joint = _log_joint(z, weights, means, variances)
    log_norm = logsumexp(log_joint, axis=1)
    log_likelihood = float(np.sum(log_norm))
    history = [log_likelihood - log_jacobian]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        resp = np.exp(log_joint - log_norm[:, None])
        counts = np.maximum(resp.sum(axis=0), 1e-300)
        weights = np.maximum(counts / z.size, 1e-12)
        weights = weights / weights.sum()
        means = resp.T @ z / counts
        variances = np.maximum((resp * (z[:, None] - means[None, :]) ** 2).sum(axis=0) / counts,
                               variance_floor)

        log_joint = _log_joint(z, weights, means, variances)
        log_norm = logsumexp(log_joint, axis=1)
        new_ll = float(np.sum(log_norm))
        history.append(new_ll - log_jacobian)
        gain = new_ll - log_likelihood
        log_likelihood = new_ll
        if abs(gain) < tol:
            break

    order = np.argsort(means, kind="stable")
    weights, means, variances = weights[order], means[order], variances[order]
    means = center + scale * means
    variances = scale ** 2 * variances
    fit = Gmm1DFit(
        weight_a=float(weights[0]),
        weight_b=float(1.0 - weights[0]),
        mean_a=float(means[0]),
        mean_b=float(means[1]),
        var_a=float(variances[0]),
        var_b=float(variances[1]),
        log_likelihood=history[-1],
        iterations=iterations,
        history=tuple(history),
    )
    logger.debug("gmm fit n=%d means=(%.4f, %.4f) weights=(%.3f, %.3f) iters=%d",
                 x.size, fit.mean_a, fit.mean_b, fit.weight_a, fit.weight_b, iterations)
    return fit


def tail_bounds(fit):
    """
    Interval outside which the posterior is held at its value on the boundary

    With unequal variances the wider component's tail eventually dominates on both
    sides, so far below mean_a (or far above mean_b) the raw posterior flips to the
    wrong component. The log posterior ratio is quadratic in the value; its turning
    point lies below mean_a when var_b > var_a and above mean_b when var_a > var_b.

    Returns:
        (low, high); one of them is infinite, both are when the variances match
    """
    precision_a = 1.0 / fit.var_a
    precision_b = 1.0 / fit.var_b
    curvature = precision_a - precision_b
    if curvature == 0.0:
        return -np.inf, np.inf
    turning_point = (fit.mean_a * precision_a - fit.mean_b * precision_b) / curvature
    if curvature > 0.0:
        return turning_point, np.inf
    return -np.inf, turning_point


def posteriors(fit, values):
    """
    Component responsibilities for many values, monotone in the value

    Values beyond the turning point of the log posterior ratio get the posterior of
    the turning point, so p_b never decreases as the value increases.

    Returns:
        (n, 2) array, columns = (component a, component b), rows sum to 1
    """
    low, high = tail_bounds(fit)
    x = np.clip(np.asarray(values, dtype=np.float64).ravel(), low, high)
    log_joint = _log_joint(x, fit.weights, fit.means, fit.variances)
    resp = np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))
    # renormalize so each row sums to 1 to machine precision
    return resp / resp.sum(axis=1, keepdims=True)


def posterior(fit, value):
    """Responsibilities of both components for a single value"""
    p = posteriors(fit, [value])[0]
    return PosteriorRow(float(p[0]), float(p[1]))


def clean_posterior(fit, values, clean_component=LARGER_MEAN):
    """Posterior of the designated clean component for each value"""
    if clean_component == LARGER_MEAN:
        column = 1
    elif clean_component == SMALLER_MEAN:
        column = 0
    else:
        raise ConfigError(f"unknown clean component {clean_component!r}", field="clean_component")
    return posteriors(fit, values)[:, column]


def partition_by_posterior(values, fit, threshold=0.5, clean_component=LARGER_MEAN):
    """
    Mark values whose clean-component posterior exceeds the threshold

    Args:
        values: 1-D array of scores
        fit: Gmm1DFit, or None to fit one on `values` (fit errors propagate)
        threshold: theta in (0, 1)
        clean_component: LARGER_MEAN for similarities, SMALLER_MEAN for discrepancies

    Returns:
        Boolean array, True = clean
    """
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}", field="theta")
    if fit is None:
        fit = fit_gmm1d(values)
    return clean_posterior(fit, values, clean_component) > threshold
