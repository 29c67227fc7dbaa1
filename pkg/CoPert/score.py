"""Module that estimates the conditional score ``rho(l, w) = d/dl log p(l|w)``
under a location-scale model.

The model assumes ``L = m(W) + v(W)^(1/2) Z`` with a noise ``Z`` independent of
``W``. The conditional score then reduces to a univariate score of the
standardized residuals:

.. math::

    \\rho(l, w) = \\rho_1\\left(\\frac{l - m(w)}{v(w)^{1/2}}\\right) / v(w)^{1/2}

:func:`fit_location_scale_score` fits ``m`` and ``v`` on one half of the data
and the univariate score on the standardized residuals of the other half.

"""
import logging
from logging import NullHandler

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline
from scipy.stats import gaussian_kde

from CoPert.default_config import (DEFAULT_SEED, DENSITY_FLOOR,
                                   MAX_FLOORED_FRACTION, MIN_SCORE_SAMPLES,
                                   SCORE_METHODS, VARIANCE_FLOOR,
                                   spline_defaults)
from CoPert.exceptions import DegenerateVariance, InsufficientData
from CoPert.learners import make_learner
from CoPert.utils import make_rng, split_in_two

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

_SQRT_2PI = np.sqrt(2 * np.pi)
# Rows evaluated at once by the kernel score
_CHUNK = 2048


class KernelScore:
    """Univariate score ``p'(x) / p(x)`` of a Gaussian kernel density
    estimate.

    The bandwidth follows Silverman's rule as implemented by
    :class:`scipy.stats.gaussian_kde`, and the density in the denominator is
    floored at ``1e-4`` times its largest value over the sample.

    Parameters
    ----------
    residuals : array_like
        The sample, at least 2 distinct values.

    """
    def __init__(self, residuals, floor=DENSITY_FLOOR):
        self.data = np.asarray(residuals, dtype=float).ravel()
        kde = gaussian_kde(self.data, bw_method="silverman")
        self.bandwidth = float(np.sqrt(kde.covariance[0, 0]))
        self.floor = floor * float(np.max(self._density(self.data)[0]))

    def _density(self, x):
        values = np.empty(x.size)
        slopes = np.empty(x.size)
        h = self.bandwidth
        for start in range(0, x.size, _CHUNK):
            u = (x[start:start + _CHUNK, None] - self.data[None, :]) / h
            kernel = np.exp(-0.5 * u ** 2)
            values[start:start + _CHUNK] = kernel.mean(axis=1) / (h * _SQRT_2PI)
            slopes[start:start + _CHUNK] = \
                (-u * kernel).mean(axis=1) / (h ** 2 * _SQRT_2PI)
        return values, slopes

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        values, slopes = self._density(x.ravel())
        return (slopes / np.maximum(values, self.floor)).reshape(x.shape)


class SplineScore:
    """Univariate score fitted by penalized score matching on a B-spline
    basis.

    The score ``rho = B c`` minimizes the empirical score-matching risk
    ``mean(rho(x_i)^2 + 2 rho'(x_i))`` plus a second-difference penalty on
    ``c``. Outside the range of the sample the score is held constant.

    Parameters
    ----------
    residuals : array_like
    n_knots : int
        Number of interior knot intervals over the range of the sample.
    degree : int
    penalty : float

    """
    def __init__(self, residuals, n_knots=spline_defaults["n_knots"],
                 degree=spline_defaults["degree"],
                 penalty=spline_defaults["penalty"]):
        x = np.asarray(residuals, dtype=float).ravel()
        self.lower, self.upper = float(x.min()), float(x.max())
        inner = np.linspace(self.lower, self.upper, n_knots + 1)
        knots = np.concatenate([np.repeat(self.lower, degree), inner,
                                np.repeat(self.upper, degree)])
        n_basis = knots.size - degree - 1
        self._basis = BSpline(knots, np.eye(n_basis), degree)
        self._basis_derivative = self._basis.derivative()
        B = self._basis(x)
        dB = self._basis_derivative(x)
        gram = B.T @ B / x.size
        linear = dB.sum(axis=0) / x.size
        D = np.diff(np.eye(n_basis), n=2, axis=0)
        self.coef = -linalg.solve(gram + penalty * D.T @ D, linear,
                                  assume_a="sym")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        clipped = np.clip(x.ravel(), self.lower, self.upper)
        return (self._basis(clipped) @ self.coef).reshape(x.shape)


def fit_univariate_score(residuals, method="gaussian_kernel",
                         min_samples=MIN_SCORE_SAMPLES):
    """Fit the score of a univariate sample.

    Parameters
    ----------
    residuals : array_like
        At least 20 values.
    method : str
        ``'gaussian_kernel'`` (default) or ``'penalized_spline'``.
    min_samples : int
        Smallest accepted sample size.

    Returns
    -------
    score : callable
        Vectorized function ``x -> rho_1(x)``.

    Raises
    ------
    InsufficientData
        Raised with fewer than ``min_samples`` residuals.
    ValueError
        Raised for an unknown method.

    """
    residuals = np.asarray(residuals, dtype=float).ravel()
    if residuals.size < min_samples:
        raise InsufficientData(
            "The univariate score needs at least {} residuals, got {}".format(
                min_samples, residuals.size))
    if method == "gaussian_kernel":
        return KernelScore(residuals)
    if method == "penalized_spline":
        return SplineScore(residuals)
    raise ValueError("Unknown score method '{}': choose from {}".format(
        method, ", ".join(SCORE_METHODS)))


class ScoreModel:
    """Fitted location-scale score.

    Parameters
    ----------
    mean_fit : Learner
        Regression ``m`` of ``l`` on ``w``.
    variance_fit : Learner
        Regression ``v`` of the squared residuals on ``w``; its predictions are
        floored at ``var_floor``.
    univariate_score : callable
        Score of the standardized residuals.
    var_floor : float

    """
    def __init__(self, mean_fit, variance_fit, univariate_score,
                 var_floor=VARIANCE_FLOOR):
        self.mean_fit = mean_fit
        self.variance_fit = variance_fit
        self.univariate_score = univariate_score
        self.var_floor = var_floor

    def standardize(self, l_values, w_features):
        """Return the standardized residuals and the scales ``v(w)^(1/2)``."""
        scale = np.sqrt(np.maximum(self.variance_fit.predict(w_features),
                                   self.var_floor))
        l_values = np.asarray(l_values, dtype=float).ravel()
        return (l_values - self.mean_fit.predict(w_features)) / scale, scale

    def evaluate(self, l_values, w_features):
        """Return ``rho(l, w)`` at each row."""
        xi, scale = self.standardize(l_values, w_features)
        return self.univariate_score(xi) / scale


def fit_location_scale_nuisance(l_values, w_features, mean_learner="cv",
                                var_learner="cv", seed=DEFAULT_SEED):
    """Fit the mean ``m`` and the variance ``v`` of ``l`` given ``w``.

    Returns
    -------
    mean_fit, variance_fit : Learner

    """
    l_values = np.asarray(l_values, dtype=float).ravel()
    mean_fit = make_learner(mean_learner, seed).fit(w_features, l_values)
    squared = (l_values - mean_fit.predict(w_features)) ** 2
    variance_fit = make_learner(var_learner, seed).fit(w_features, squared)
    return mean_fit, variance_fit


def _check_floor(variance_fit, w_features):
    floored = np.mean(variance_fit.predict(w_features) <= VARIANCE_FLOOR)
    if floored > MAX_FLOORED_FRACTION:
        raise DegenerateVariance(
            "{:.0%} of the variance predictions hit the floor {}: the "
            "location-scale model does not fit".format(floored,
                                                       VARIANCE_FLOOR))


def fit_location_scale_score(l_values, w_features, mean_learner="cv",
                             var_learner="cv", uni_method="gaussian_kernel",
                             seed=DEFAULT_SEED, nuisance=None):
    """Fit a :class:`ScoreModel` on a sample of ``(l, w)``.

    The sample is split by a seeded shuffle: ``m`` and ``v`` are fitted on the
    first ``ceil(n/2)`` rows and the univariate score on the standardized
    residuals of the others. If ``nuisance`` is given, ``m`` and ``v`` are
    taken from it and every row is used for the univariate score.

    Parameters
    ----------
    l_values : array_like
        The ``n >= 20`` values of ``l``.
    w_features : array_like
        ``n x p`` array of ``w``.
    mean_learner, var_learner : str or Learner
        Menu name or learner instance for ``m`` and ``v``.
    uni_method : str
        Univariate score method, see :func:`fit_univariate_score`.
    seed : int
    nuisance : tuple of Learner, optional
        Already fitted ``(mean_fit, variance_fit)``.

    Returns
    -------
    model : ScoreModel

    Raises
    ------
    InsufficientData
        Raised with fewer than 20 rows.
    DegenerateVariance
        Raised if more than half of the variance predictions hit the floor.

    """
    l_values = np.asarray(l_values, dtype=float).ravel()
    w_features = np.asarray(w_features, dtype=float)
    if w_features.ndim == 1:
        w_features = w_features[:, None]
    n = l_values.size
    if n < MIN_SCORE_SAMPLES:
        raise InsufficientData(
            "The location-scale score needs at least {} samples, got "
            "{}".format(MIN_SCORE_SAMPLES, n))
    if nuisance is None:
        first, second = split_in_two(np.arange(n), make_rng(seed))
        mean_fit, variance_fit = fit_location_scale_nuisance(
            l_values[first], w_features[first], mean_learner, var_learner,
            seed)
    else:
        mean_fit, variance_fit = nuisance
        second = np.arange(n)
    _check_floor(variance_fit, w_features[second])
    model = ScoreModel(mean_fit, variance_fit, None)
    xi, _ = model.standardize(l_values[second], w_features[second])
    model.univariate_score = fit_univariate_score(
        xi, uni_method, min_samples=MIN_SCORE_SAMPLES // 2)
    return model
