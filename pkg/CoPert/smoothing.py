"""Module that turns an arbitrary regression fit into smoothed values and
partial derivatives with respect to ``l``.

Forest fits are piecewise constant in ``l`` and can't be differentiated
directly. The fitted values are instead regressed on ``(l, w)`` with a random
forest whose weights define, for every sample ``i``, a neighbourhood in which
a degree-2 polynomial in ``l - l_i`` is fitted by weighted least squares. The
intercept of that polynomial is the smoothed value and its slope the
derivative at sample ``i``.

"""
import logging
from logging import NullHandler

import numpy as np

from CoPert.default_config import (DEFAULT_SEED, LOCPOL_MAX_COND, LOCPOL_RIDGE,
                                   forest_defaults)
from CoPert.exceptions import DegenerateDesign, NotFitted
from CoPert.learners import ForestLearner, make_learner

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())


class SmoothedFit:
    """Smoothed values and ``l``-derivatives at each sample."""
    __slots__ = ("smoothed_values", "derivatives", "n_fallback")

    def __init__(self, smoothed_values, derivatives, n_fallback=0):
        self.smoothed_values = smoothed_values
        self.derivatives = derivatives
        # Number of rows solved through the ridge fallback
        self.n_fallback = n_fallback

    def __len__(self):
        return len(self.smoothed_values)


def smooth_local_poly(l_values, fitted_values, weights):
    """Fit a weighted degree-2 local polynomial in ``l`` around each sample.

    For every row ``i`` of ``weights`` the function solves

    .. math::

        \\min_\\beta \\sum_k K_{ik} (f_k - \\beta_1 - \\beta_2 (l_k - l_i)
        - \\beta_3 (l_k - l_i)^2)^2

    and returns :math:`\\beta_1` as the smoothed value and :math:`\\beta_2` as
    the derivative.

    Parameters
    ----------
    l_values : array_like
        The ``n`` values of ``l``.
    fitted_values : array_like
        The ``n`` values to smooth.
    weights : array_like
        ``n x n`` nonnegative weight matrix.

    Returns
    -------
    fit : SmoothedFit

    Raises
    ------
    DegenerateDesign
        Raised only if a design stays singular after the ridge fallback.


    .. note::

        Rows whose 3x3 weighted design has a condition number above ``1e12``
        (e.g. all their weight sits on a single value of ``l``) are solved
        with ``1e-8 * diag(0, 1, 1)`` added to the normal equations.

    """
    l_values = np.asarray(l_values, dtype=float).ravel()
    fitted_values = np.asarray(fitted_values, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float)
    n = l_values.size
    if fitted_values.size != n or weights.shape != (n, n):
        raise ValueError(
            "Expected n values, n fitted values and an n x n weight matrix, "
            "got {}, {} and {}".format(n, fitted_values.size, weights.shape))
    delta = l_values[None, :] - l_values[:, None]
    powers = [np.ones_like(delta), delta, delta ** 2, delta ** 3, delta ** 4]
    moments = [np.sum(weights * p, axis=1) for p in powers]
    design = np.empty((n, 3, 3))
    for a in range(3):
        for b in range(3):
            design[:, a, b] = moments[a + b]
    rhs = np.stack([np.sum(weights * powers[a] * fitted_values[None, :],
                           axis=1) for a in range(3)], axis=1)
    cond = np.linalg.cond(design)
    degenerate = ~np.isfinite(cond) | (cond > LOCPOL_MAX_COND)
    n_fallback = int(degenerate.sum())
    if n_fallback:
        logger.warning("{} of {} local polynomial designs are degenerate: "
                       "using the ridge fallback".format(n_fallback, n))
        design[degenerate] += LOCPOL_RIDGE * np.diag([0.0, 1.0, 1.0])
    try:
        beta = np.linalg.solve(design, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        beta = np.empty((n, 3))
        for i in range(n):
            try:
                beta[i] = np.linalg.solve(design[i], rhs[i])
            except np.linalg.LinAlgError as e:
                raise DegenerateDesign(i) from e
    bad = np.flatnonzero(~np.all(np.isfinite(beta), axis=1))
    if bad.size:
        raise DegenerateDesign(int(bad[0]))
    return SmoothedFit(beta[:, 0], beta[:, 1], n_fallback)


def smooth_with_forest(features, fitted_values, forest_params=None,
                       seed=DEFAULT_SEED):
    """Smooth fitted values with weights from a forest fitted on them.

    Parameters
    ----------
    features : array_like
        ``n x p`` array whose first column is ``l`` and the rest ``w``.
    fitted_values : array_like
        Values of the regression to differentiate at the ``n`` rows.
    forest_params : dict, optional
        Overrides of the forest defaults.
    seed : int

    Returns
    -------
    fit : SmoothedFit

    """
    features = np.asarray(features, dtype=float)
    params = dict(forest_defaults)
    params.update(forest_params or {})
    forest = ForestLearner(seed=seed, **params).fit(features, fitted_values)
    weights = forest.weights(features, features)
    return smooth_local_poly(features[:, 0], fitted_values, weights)


class SmoothedRegression:
    """Differentiable regression of ``y`` on ``(l, w)``.

    A base learner is fitted on the training rows; at evaluation rows its
    predictions are smoothed by :func:`smooth_with_forest`, which gives both
    the smoothed regression and its derivative in ``l``.

    Parameters
    ----------
    learner : str or Learner
        Base learner or its menu name.
    forest_params : dict, optional
        Overrides of the forest defaults. They apply to the smoothing forest
        and to the forests of the base learner, including the forest
        candidates of ``cv``.
    seed : int

    """
    def __init__(self, learner="cv", forest_params=None, seed=DEFAULT_SEED):
        self.learner = learner
        self.forest_params = forest_params
        self.seed = seed
        self.model_ = None

    def fit(self, features, targets):
        kwargs = {k: v for k, v in (self.forest_params or {}).items()
                  if k in forest_defaults}
        self.model_ = make_learner(self.learner, self.seed, **kwargs)
        self.model_.fit(features, targets)
        return self

    def predict(self, features):
        if self.model_ is None:
            raise NotFitted("SmoothedRegression must be fitted first")
        return self.model_.predict(features)

    def value_and_derivative(self, features):
        """Return the smoothed values and ``l``-derivatives at the rows of
        ``features``."""
        fitted = self.predict(features)
        fit = smooth_with_forest(features, fitted, self.forest_params,
                                 self.seed)
        return fit.smoothed_values, fit.derivatives

    def clone(self, seed=None):
        return SmoothedRegression(self.learner, self.forest_params,
                                  self.seed if seed is None else seed)


class FrozenDifferentiable:
    """Known differentiable regression; :meth:`fit` does nothing.

    Parameters
    ----------
    fn : callable
        Maps an ``n x p`` feature array (``l`` first) to values.
    derivative_fn : callable
        Maps the same array to the ``l``-derivatives.

    """
    def __init__(self, fn, derivative_fn):
        self.fn = fn
        self.derivative_fn = derivative_fn

    def fit(self, features, targets):
        return self

    def predict(self, features):
        features = np.asarray(features, dtype=float)
        return np.asarray(self.fn(features), dtype=float) * \
            np.ones(features.shape[0])

    def value_and_derivative(self, features):
        features = np.asarray(features, dtype=float)
        return self.predict(features), \
            np.asarray(self.derivative_fn(features), dtype=float) * \
            np.ones(features.shape[0])

    def clone(self, seed=None):
        return self
