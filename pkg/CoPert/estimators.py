"""Module that estimates average perturbation effects with valid confidence
intervals.

After reparametrization every observation is a triple ``(y, l, w)``. The
target is either

* ``lambda`` (binary effects): ``E[f(1, W) - Y] / P(L = 0)`` where
  ``f(l, w) = E[Y | L = l, W = w]``, or
* ``tau`` (directional effects): the average partial derivative
  ``E[d/dl f(L, W)]``.

Available estimators (``method`` names):

* ``npm``: cross-fitted one-step nonparametric estimators. ``tau`` uses the
  score correction ``-rho(L, W) (Y - f(L, W))``, ``lambda`` the augmented
  inverse propensity weighted correction.
* ``plm``: cross-fitted partialling-out estimator of the partially linear
  model ``Y = theta L + g(W) + noise``. Without the partially linear
  assumption, ``theta`` is the best partially linear approximation
  ``E[cov(Y, L | W)] / E[var(L | W)]``.
* ``plugin``: average of the fitted effect without correction.
* ``npm_no_crossfit``, ``plm_no_crossfit`` and ``plugin_no_crossfit``: the
  same estimators with nuisances fitted and evaluated on all the data.
* ``ols_marginal``: the slope of ``Y`` on ``L`` with a sandwich standard
  error.

Fold-level averages are summed with :func:`math.fsum`, so an estimate does
not depend on the order of the samples within the folds.

"""
import logging
from logging import NullHandler

import numpy as np
import statsmodels.api as sm
from joblib import Parallel, delayed
from scipy.stats import norm

from CoPert.default_config import (ALPHA, DEFAULT_SEED, DEGENERATE_J, METHODS,
                                   PROPENSITY_CLIP, SCORE_METHODS,
                                   SCORE_NUISANCE_MODES, default_folds)
from CoPert.exceptions import (ConstantRegressor, DegenerateJ, DimensionMismatch,
                               InsufficientData, InvalidEffectSpec, NoUntreated,
                               UnknownMethod)
from CoPert.learners import make_learner
from CoPert.perturbations import (CAI_MULT, CFI_MULT, encode_w, is_zero_speed,
                                  reparametrize)
from CoPert.score import fit_location_scale_nuisance, fit_location_scale_score
from CoPert.simplex import as_compositions
from CoPert.smoothing import SmoothedRegression
from CoPert.utils import (derive_seed, exact_mean, get_n_jobs, make_folds,
                          make_rng, split_in_two)

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

TAU = "tau"
LAMBDA = "lambda"


# ====
# Data
# ====
class ReparametrizedSample:
    """One observation ``(y, l, w)`` with its zero-speed flag."""
    __slots__ = ("y", "l", "w", "zero_speed")

    def __init__(self, y, l, w, zero_speed=False):
        self.y = float(y)
        self.l = float(l)
        self.w = np.asarray(w, dtype=float)
        self.zero_speed = bool(zero_speed)


class ReparametrizedData:
    """Batch of reparametrized observations.

    Parameters
    ----------
    y : array_like
        Responses.
    l : array_like
        Values of ``l`` (0/1 indicators for binary effects). Zero-speed rows
        hold NaN.
    w : array_like
        ``n x p`` features (encoded ``w`` followed by adjustment covariates).
    zero_speed : array_like of bool, optional
        Rows whose perturbation has zero speed.
    n_undefined_l : int
        Number of zero-speed rows whose ``l`` is undefined (log of 0).
    binary : bool
        True for binary effects.

    """
    def __init__(self, y, l, w, zero_speed=None, n_undefined_l=0,
                 binary=False):
        self.y = np.asarray(y, dtype=float).ravel()
        self.l = np.asarray(l, dtype=float).ravel()
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        self.w = w
        n = self.y.size
        if self.l.size != n or self.w.shape[0] != n:
            raise DimensionMismatch(
                "y, l and w have {}, {} and {} rows".format(n, self.l.size,
                                                           self.w.shape[0]))
        if zero_speed is None:
            zero_speed = np.zeros(n, dtype=bool)
        self.zero_speed = np.asarray(zero_speed, dtype=bool)
        self.n_undefined_l = int(n_undefined_l)
        self.binary = binary

    @property
    def n(self):
        return self.y.size

    @property
    def features(self):
        """``n x (1 + p)`` array with ``l`` first."""
        return np.column_stack([self.l, self.w])

    def subset(self, mask):
        mask = np.asarray(mask)
        return ReparametrizedData(self.y[mask], self.l[mask], self.w[mask],
                                  self.zero_speed[mask], 0, self.binary)

    def samples(self):
        return [ReparametrizedSample(y, l, w, zs) for y, l, w, zs in
                zip(self.y, self.l, self.w, self.zero_speed)]

    @classmethod
    def from_samples(cls, samples, binary=False):
        return cls([s.y for s in samples], [s.l for s in samples],
                   np.vstack([s.w for s in samples]),
                   [s.zero_speed for s in samples], binary=binary)


def reparametrize_sample(spec, Z, y, X=None):
    """Reparametrize a sample of compositions for an effect.

    Parameters
    ----------
    spec : EffectSpec
    Z : array_like
        ``n x d`` compositions.
    y : array_like
        ``n`` responses.
    X : array_like, optional
        ``n x q`` adjustment covariates appended to ``w``.

    Returns
    -------
    data : ReparametrizedData
        Zero-speed rows of directional effects are flagged, with ``l`` set to
        NaN and ``w`` to 0.

    """
    Z = as_compositions(Z)
    y = np.asarray(y, dtype=float).ravel()
    n, d = Z.shape
    if y.size != n:
        raise DimensionMismatch("y has {} rows but Z has {}".format(y.size, n))
    spec.check(d)
    l = np.full(n, np.nan)
    zero_speed = np.zeros(n, dtype=bool)
    width = d if (spec.is_binary or spec.has_constant_endpoint) else 2 * d
    w = np.zeros((n, width))
    for i, z in enumerate(Z):
        if spec.is_directional and is_zero_speed(spec, z):
            zero_speed[i] = True
            continue
        reparam = reparametrize(spec, z)
        l[i] = reparam.l
        w[i] = encode_w(spec, reparam)
    n_undefined = int(zero_speed.sum()) if spec.kind in (CFI_MULT, CAI_MULT) \
        else 0
    if X is not None:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != n:
            raise DimensionMismatch(
                "X has {} rows but Z has {}".format(X.shape[0], n))
        w = np.hstack([w, X])
    logger.debug("{}: {} of {} rows have zero speed".format(
        spec.to_text(), int(zero_speed.sum()), n))
    return ReparametrizedData(y, l, w, zero_speed, n_undefined,
                              binary=spec.is_binary)


# ===========
# Config
# ===========
class EstimatorConfig:
    """Settings shared by the estimators.

    Parameters
    ----------
    n_folds : int, optional
        Number of cross-fitting folds ``K``; by default 2 for ``npm``,
        ``plm`` and ``plugin``.
    crossfit : bool
        Fit nuisances on the other folds (True) or on all the data.
    outcome_learner : str or Learner
        Learner of ``f`` (on ``(l, w)``) and ``g`` (on ``w``).
    treatment_learner : str or Learner
        Learner of ``E[L | W]``, the propensity ``P(L = 1 | W)`` and the mean
        of the location-scale score.
    variance_learner : str or Learner
        Learner of the variance of the location-scale score.
    score_method : str
        Univariate score method (``gaussian_kernel`` or
        ``penalized_spline``).
    score_nuisance : str
        ``resplit``: the score fits its own mean and variance on half of
        the data reserved for it. ``crossfit``: they are fitted once per fold
        on the training folds.
    seed : int
    alpha : float
        Confidence intervals have level ``1 - alpha``.
    n_trees : int, optional
        Overrides the number of trees of every forest.
    folds : list of array_like, optional
        Explicit fold assignment (indices into the sample).
    outcome_regression : object, optional
        Differentiable regression used by the ``tau`` estimators instead of
        the smoothed ``outcome_learner``, e.g.
        :class:`~CoPert.smoothing.FrozenDifferentiable`.
    score_fitter : callable, optional
        ``(l, w, seed) -> model`` with an ``evaluate(l, w)`` method, used
        instead of :func:`~CoPert.score.fit_location_scale_score`.

    """
    def __init__(self, n_folds=None, crossfit=True, outcome_learner="cv",
                 treatment_learner="cv", variance_learner="cv",
                 score_method="gaussian_kernel", score_nuisance="resplit",
                 seed=DEFAULT_SEED, alpha=ALPHA, n_trees=None, folds=None,
                 outcome_regression=None, score_fitter=None):
        if n_folds is not None and crossfit and int(n_folds) < 2:
            raise ValueError("Cross-fitting needs at least 2 folds, got "
                             "{}".format(n_folds))
        if score_method not in SCORE_METHODS:
            raise ValueError("Unknown score method '{}': choose from "
                             "{}".format(score_method, ", ".join(SCORE_METHODS)))
        if score_nuisance not in SCORE_NUISANCE_MODES:
            raise ValueError("Unknown score nuisance mode '{}': choose from "
                             "{}".format(score_nuisance,
                                         ", ".join(SCORE_NUISANCE_MODES)))
        if not 0 < alpha < 1:
            raise ValueError("alpha must be in (0, 1), got {}".format(alpha))
        self.n_folds = None if n_folds is None else int(n_folds)
        self.crossfit = crossfit
        self.outcome_learner = outcome_learner
        self.treatment_learner = treatment_learner
        self.variance_learner = variance_learner
        self.score_method = score_method
        self.score_nuisance = score_nuisance
        self.seed = int(seed)
        self.alpha = float(alpha)
        self.n_trees = n_trees
        self.folds = folds
        self.outcome_regression = outcome_regression
        self.score_fitter = score_fitter

    def replace(self, **kwargs):
        """Return a copy with some settings replaced."""
        params = dict(self.__dict__)
        params.update(kwargs)
        return EstimatorConfig(**params)

    def folds_for(self, family):
        """Return ``K`` for an estimator family (1 without cross-fitting)."""
        if not self.crossfit:
            return 1
        if self.folds is not None:
            return len(self.folds)
        return self.n_folds or default_folds[family]

    def learner_kwargs(self):
        return {} if self.n_trees is None else {"n_trees": self.n_trees}

    def make(self, which, seed, classification=False):
        """Build the learner of a nuisance (``'outcome'``, ``'treatment'`` or
        ``'variance'``)."""
        name = getattr(self, "{}_learner".format(which))
        return make_learner(name, seed, classification=classification,
                            **self.learner_kwargs())


# ========
# Estimate
# ========
class EffectEstimate:
    """Point estimate with its asymptotic variance and inference.

    Parameters
    ----------
    estimate : float
    variance : float
        Asymptotic variance on the ``sqrt(n)`` scale; the standard error is
        ``sqrt(variance / n)``.
    n : int
        Sample size entering the standard error.
    method : str
    alpha : float
    n_used : int, optional
        Number of rows the estimator was fitted on (``n`` by default).
    n_zero_speed : int
    n_undefined_l : int
    warnings : list of str, optional
    metadata : dict, optional

    Attributes
    ----------
    std_error, ci_low, ci_high, p_value : float

    """
    def __init__(self, estimate, variance, n, method, alpha=ALPHA, n_used=None,
                 n_zero_speed=0, n_undefined_l=0, warnings=None,
                 metadata=None):
        self.estimate = float(estimate)
        self.variance = max(float(variance), 0.0)
        self.n = int(n)
        self.method = method
        self.alpha = alpha
        self.n_used = self.n if n_used is None else int(n_used)
        self.n_zero_speed = int(n_zero_speed)
        self.n_undefined_l = int(n_undefined_l)
        self.warnings = list(warnings or [])
        self.metadata = dict(metadata or {})
        self.std_error = float(np.sqrt(self.variance / self.n))
        self.ci_low, self.ci_high = confidence_interval(
            self.estimate, self.variance, self.n, alpha)
        self.p_value = p_value(self.estimate, self.variance, self.n)

    def to_row(self):
        """Return the result as a dictionary (one CSV row)."""
        return {
            "method": self.method,
            "estimate": self.estimate,
            "std_error": self.std_error,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
            "n_used": self.n_used,
            "n_zero_speed": self.n_zero_speed,
            "n_undefined_l": self.n_undefined_l,
        }

    def __repr__(self):
        return ("EffectEstimate(method={}, estimate={:.6g}, std_error={:.6g}, "
                "ci=({:.6g}, {:.6g}), p_value={:.4g})".format(
                    self.method, self.estimate, self.std_error, self.ci_low,
                    self.ci_high, self.p_value))


def confidence_interval(estimate, variance, n, alpha=ALPHA):
    """Return the normal interval ``estimate +/- z sqrt(variance / n)``."""
    half = norm.ppf(1 - alpha / 2) * np.sqrt(max(variance, 0.0) / n)
    return float(estimate - half), float(estimate + half)


def p_value(estimate, variance, n):
    """Return the two-sided normal p-value of ``estimate = 0``.

    With a zero variance the p-value is 1 if the estimate is 0 and 0
    otherwise.
    """
    se = np.sqrt(max(variance, 0.0) / n)
    if se == 0:
        return 1.0 if estimate == 0 else 0.0
    return float(2 * norm.sf(abs(estimate) / se))


def bonferroni(p_values):
    """Return the Bonferroni-adjusted p-values ``min(1, m p)``."""
    p_values = np.asarray(p_values, dtype=float)
    return np.minimum(1.0, p_values.size * p_values)


def with_zero_speed_correction(inner_estimate, p_hat, n_total=None):
    """Rescale an estimate computed on the nonzero-speed rows.

    The estimate becomes ``tau p`` and the variance
    ``p sigma^2 + tau^2 p (1 - p)``, where ``p`` is the fraction of rows with
    a nonzero speed.

    Parameters
    ----------
    inner_estimate : EffectEstimate
        Estimate on the nonzero-speed rows.
    p_hat : float
        Fraction of nonzero-speed rows, in ``[0, 1]``.
    n_total : int, optional
        Size of the full sample. By default it is inferred from
        ``inner_estimate.n / p_hat``.

    Returns
    -------
    estimate : EffectEstimate

    """
    if not 0 <= p_hat <= 1:
        raise ValueError("p_hat must be in [0, 1], got {}".format(p_hat))
    tau, sigma2 = inner_estimate.estimate, inner_estimate.variance
    if n_total is None:
        n_total = inner_estimate.n if p_hat == 0 \
            else int(round(inner_estimate.n / p_hat))
    return EffectEstimate(
        tau * p_hat, p_hat * sigma2 + tau ** 2 * p_hat * (1 - p_hat),
        n_total, inner_estimate.method, inner_estimate.alpha,
        n_used=inner_estimate.n_used,
        n_zero_speed=n_total - inner_estimate.n_used,
        n_undefined_l=inner_estimate.n_undefined_l,
        warnings=inner_estimate.warnings,
        metadata=dict(inner_estimate.metadata, p_hat=p_hat))


# =========
# Internals
# =========
def _fold_plan(n, config, family):
    K = config.folds_for(family)
    if K == 1:
        everything = np.arange(n)
        return [(everything, everything)]
    if config.folds is not None:
        folds = [np.sort(np.asarray(f, dtype=int)) for f in config.folds]
        if sum(f.size for f in folds) != n:
            raise ValueError("The folds don't cover the {} samples".format(n))
    else:
        folds = make_folds(n, K, make_rng(config.seed, 0))
    plan = []
    for k, fold in enumerate(folds):
        train = np.sort(np.concatenate([f for j, f in enumerate(folds)
                                        if j != k]))
        plan.append((train, fold))
    return plan


def _run_folds(work, plan):
    results = Parallel(n_jobs=get_n_jobs(), prefer="threads")(
        delayed(work)(k, train, test) for k, (train, test) in enumerate(plan))
    return results


def _check_size(n, minimum, method):
    if n < minimum:
        raise InsufficientData(
            "{} needs at least {} samples, got {}".format(method, minimum, n))


def _check_binary(l):
    if not np.all((l == 0) | (l == 1)):
        raise InvalidEffectSpec("lambda estimators need a binary l")


def _outcome_regression(config, seed):
    if config.outcome_regression is not None:
        return config.outcome_regression.clone(seed=seed)
    return SmoothedRegression(config.outcome_learner,
                              forest_params=config.learner_kwargs(),
                              seed=seed)


def _fit_score(config, l, w, seed, nuisance=None):
    if config.score_fitter is not None:
        return config.score_fitter(l, w, seed)
    return fit_location_scale_score(l, w, config.treatment_learner,
                                    config.variance_learner,
                                    config.score_method, seed,
                                    nuisance=nuisance)


def _propensity(config, data, train, test, seed):
    model = config.make("treatment", seed, classification=True)
    model.fit(data.w[train], data.l[train])
    raw = model.predict_proba(data.w[test])
    clipped = np.clip(raw, *PROPENSITY_CLIP)
    return clipped, int(np.sum(raw != clipped))


def _lambda_from_moments(kappa, nu, p_hat, warnings):
    lam = kappa / p_hat
    variance = (nu - kappa ** 2) / p_hat ** 2 \
        - kappa ** 2 * (1 - p_hat) / p_hat ** 3
    if variance < 0:
        msg = "Negative variance estimate {:.3g} floored at 0".format(variance)
        logger.warning(msg)
        warnings.append(msg)
        variance = 0.0
    return lam, variance


def _untreated_fraction(data):
    p_hat = exact_mean(1 - data.l)
    if p_hat == 0:
        raise NoUntreated("Every sample is at its endpoint (l=1): lambda is "
                          "undefined")
    return p_hat


# ==========
# Estimators
# ==========
def estimate_tau_np(samples, config=None):
    """Cross-fitted one-step estimator of the average partial effect.

    For each fold ``k`` a differentiable regression ``f`` is fitted on the
    other folds. The fold is split in two halves; the score ``rho`` is fitted
    on one half and the influence values

    .. math::

        \\psi_i = \\partial_l f(L_i, W_i) - \\rho(L_i, W_i) (Y_i - f(L_i, W_i))

    are averaged on the other, giving ``tau_kr`` and ``nu_kr`` (mean of the
    squares). The estimate is the average of the ``tau_kr`` and the variance
    the average of the ``nu_kr`` minus the squared estimate.

    Parameters
    ----------
    samples : ReparametrizedData
        Nonzero-speed rows with a continuous ``l``.
    config : EstimatorConfig, optional

    Returns
    -------
    estimate : EffectEstimate

    Raises
    ------
    InsufficientData
        Raised with fewer than ``4K`` samples.

    """
    config = config or EstimatorConfig()
    data = samples
    n = data.n
    K = config.folds_for("npm")
    _check_size(n, 4 * K, "estimate_tau_np")
    features = data.features
    plan = _fold_plan(n, config, "npm")

    def work(k, train, test):
        logger.debug("tau fold {} of {}".format(k + 1, len(plan)))
        seed = derive_seed(config.seed, 1, k)
        regression = _outcome_regression(config, seed).fit(features[train],
                                                           data.y[train])
        values, derivatives = regression.value_and_derivative(features[test])
        nuisance = None
        if config.score_nuisance == "crossfit" and config.score_fitter is None:
            nuisance = fit_location_scale_nuisance(
                data.l[train], data.w[train], config.treatment_learner,
                config.variance_learner, seed)
        if len(plan) == 1:
            halves = [(np.arange(n), np.arange(n))]
        else:
            first, second = split_in_two(np.arange(test.size),
                                         make_rng(config.seed, 2, k))
            halves = [(first, second), (second, first)]
        out = []
        for r, (target, fit_on) in enumerate(halves):
            rows = test[fit_on]
            score = _fit_score(config, data.l[rows], data.w[rows],
                               derive_seed(config.seed, 3, k, r), nuisance)
            eval_rows = test[target]
            rho = score.evaluate(data.l[eval_rows], data.w[eval_rows])
            psi = derivatives[target] - rho * (data.y[eval_rows]
                                               - values[target])
            out.append((exact_mean(psi), exact_mean(psi ** 2)))
        return out

    pieces = [piece for fold in _run_folds(work, plan) for piece in fold]
    tau = exact_mean([p[0] for p in pieces])
    variance = exact_mean([p[1] for p in pieces]) - tau ** 2
    method = "npm" if config.crossfit else "npm_no_crossfit"
    return EffectEstimate(tau, variance, n, method, config.alpha)


def estimate_lambda_np(samples, config=None):
    """Cross-fitted augmented inverse propensity weighted estimator of
    ``lambda``.

    For each fold, ``f`` (on ``(l, w)``) and the propensity ``pi`` (on ``w``)
    are fitted on the other folds, and

    .. math::

        \\kappa_i = f(1, W_i) - Y_i + L_i (Y_i - f(L_i, W_i)) / \\pi(W_i)

    is averaged on the fold (``kappa_k``, with ``nu_k`` the mean of the
    squares). With ``p = mean(1 - L)`` the estimate is ``kappa / p`` and the
    variance ``p^-2 (nu - kappa^2) - p^-3 kappa^2 (1 - p)``. Propensities are
    clipped into ``[0.01, 0.99]`` and the number of clipped values is
    reported in ``metadata['n_clipped']``.

    Raises
    ------
    NoUntreated
        Raised if every ``l`` is 1.
    InsufficientData
        Raised with fewer than ``2K`` samples.

    """
    config = config or EstimatorConfig()
    data = samples
    _check_binary(data.l)
    n = data.n
    K = config.folds_for("npm")
    _check_size(n, 2 * K, "estimate_lambda_np")
    p_hat = _untreated_fraction(data)
    features = data.features
    plan = _fold_plan(n, config, "npm")

    def work(k, train, test):
        logger.debug("lambda fold {} of {}".format(k + 1, len(plan)))
        seed = derive_seed(config.seed, 1, k)
        outcome = config.make("outcome", seed).fit(features[train],
                                                   data.y[train])
        treated = features[test].copy()
        treated[:, 0] = 1.0
        f_one = outcome.predict(treated)
        f_obs = outcome.predict(features[test])
        pi, n_clipped = _propensity(config, data, train, test, seed)
        y, l = data.y[test], data.l[test]
        kappa = f_one - y + (y - f_obs) / pi * l
        return exact_mean(kappa), exact_mean(kappa ** 2), n_clipped

    results = _run_folds(work, plan)
    kappa = exact_mean([r[0] for r in results])
    nu = exact_mean([r[1] for r in results])
    n_clipped = sum(r[2] for r in results)
    warnings = []
    if n_clipped:
        msg = "{} propensities clipped into [{}, {}]".format(
            n_clipped, *PROPENSITY_CLIP)
        logger.warning(msg)
        warnings.append(msg)
    lam, variance = _lambda_from_moments(kappa, nu, p_hat, warnings)
    method = "npm" if config.crossfit else "npm_no_crossfit"
    return EffectEstimate(lam, variance, n, method, config.alpha,
                          warnings=warnings,
                          metadata={"n_clipped": n_clipped, "p_hat": p_hat})


def estimate_theta_plm(samples, config=None):
    """Cross-fitted partialling-out estimator of the partially linear model.

    For each fold, ``g`` (``Y`` on ``W``) and ``m`` (``L`` on ``W``) are fitted
    on the other folds and the fold gives ``J_k = mean((L - m)^2)`` and
    ``kappa_k = mean((Y - g)(L - m))``. The estimate is
    ``theta = mean(kappa_k) / J`` with ``J = mean(J_k)`` and the variance
    ``J^-2 mean(nu_k)`` with
    ``nu_k = mean(((Y - g)(L - m) - theta (L - m)^2)^2)``.

    .. note::

        If ``Y`` is not partially linear in ``L``, ``theta`` estimates
        ``E[cov(Y, L | W)] / E[var(L | W)]``, the coefficient of the best
        partially linear approximation of the regression.

    Raises
    ------
    DegenerateJ
        Raised if ``J < 1e-10``, i.e. ``L`` is explained by ``W``.
    InsufficientData
        Raised with fewer than ``2K`` samples.

    """
    config = config or EstimatorConfig()
    data = samples
    n = data.n
    K = config.folds_for("plm")
    _check_size(n, 2 * K, "estimate_theta_plm")
    plan = _fold_plan(n, config, "plm")

    def work(k, train, test):
        logger.debug("plm fold {} of {}".format(k + 1, len(plan)))
        seed = derive_seed(config.seed, 1, k)
        g = config.make("outcome", seed).fit(data.w[train], data.y[train])
        m = config.make("treatment", seed).fit(data.w[train], data.l[train])
        return (data.y[test] - g.predict(data.w[test]),
                data.l[test] - m.predict(data.w[test]))

    residuals = _run_folds(work, plan)
    J = exact_mean([exact_mean(rl ** 2) for _, rl in residuals])
    if J < DEGENERATE_J:
        raise DegenerateJ("Residual variance of l is {:.3g}: l is explained "
                          "by w".format(J))
    kappa = exact_mean([exact_mean(ry * rl) for ry, rl in residuals])
    theta = kappa / J
    nu = exact_mean([exact_mean((ry * rl - theta * rl ** 2) ** 2)
                     for ry, rl in residuals])
    method = "plm" if config.crossfit else "plm_no_crossfit"
    return EffectEstimate(theta, nu / J ** 2, n, method, config.alpha,
                          metadata={"J": J})


def estimate_plugin(samples, config=None, target=TAU):
    """Plug-in estimator: the average fitted effect without correction.

    For ``tau`` the estimate is the mean of the fitted derivatives and the
    variance their empirical variance. For ``lambda`` it is
    ``mean(f(1, W) - Y) / mean(1 - L)`` with the variance formula of
    :func:`estimate_lambda_np` applied to the summand ``f(1, W) - Y``.
    """
    config = config or EstimatorConfig()
    data = samples
    n = data.n
    features = data.features
    plan = _fold_plan(n, config, "plugin")
    method = "plugin" if config.crossfit else "plugin_no_crossfit"
    if target == TAU:
        _check_size(n, 2 * len(plan), "estimate_plugin")

        def work(k, train, test):
            seed = derive_seed(config.seed, 1, k)
            regression = _outcome_regression(config, seed).fit(
                features[train], data.y[train])
            return test, regression.value_and_derivative(features[test])[1]

        derivatives = np.empty(n)
        for test, values in _run_folds(work, plan):
            derivatives[test] = values
        tau = exact_mean(derivatives)
        variance = exact_mean(derivatives ** 2) - tau ** 2
        return EffectEstimate(tau, variance, n, method, config.alpha)
    if target != LAMBDA:
        raise ValueError("Unknown target '{}'".format(target))
    _check_binary(data.l)
    _check_size(n, 2 * len(plan), "estimate_plugin")
    p_hat = _untreated_fraction(data)

    def work(k, train, test):
        seed = derive_seed(config.seed, 1, k)
        outcome = config.make("outcome", seed).fit(features[train],
                                                   data.y[train])
        treated = features[test].copy()
        treated[:, 0] = 1.0
        summand = outcome.predict(treated) - data.y[test]
        return exact_mean(summand), exact_mean(summand ** 2)

    results = _run_folds(work, plan)
    warnings = []
    lam, variance = _lambda_from_moments(exact_mean([r[0] for r in results]),
                                         exact_mean([r[1] for r in results]),
                                         p_hat, warnings)
    return EffectEstimate(lam, variance, n, method, config.alpha,
                          warnings=warnings, metadata={"p_hat": p_hat})


def estimate_marginal_ols(y, l, alpha=ALPHA):
    """OLS slope of ``y`` on ``l`` with a heteroskedasticity-robust (HC1)
    standard error.

    Raises
    ------
    ConstantRegressor
        Raised if ``l`` is constant.
    InsufficientData
        Raised with fewer than 3 samples.

    """
    y = np.asarray(y, dtype=float).ravel()
    l = np.asarray(l, dtype=float).ravel()
    n = y.size
    _check_size(n, 3, "estimate_marginal_ols")
    if np.ptp(l) == 0:
        raise ConstantRegressor("l is constant: the slope is undefined")
    design = np.column_stack([np.ones(n), l])
    result = sm.OLS(y, design).fit(cov_type="HC1")
    slope = float(result.params[1])
    se = float(result.bse[1])
    if not np.isfinite(se):
        se = 0.0
    return EffectEstimate(slope, se ** 2 * n, n, "ols_marginal", alpha)


def estimate(method, samples, config=None, target=None):
    """Run an estimator by name.

    Parameters
    ----------
    method : str
        One of ``npm``, ``npm_no_crossfit``, ``plm``, ``plm_no_crossfit``,
        ``plugin``, ``plugin_no_crossfit`` and ``ols_marginal``.
    samples : ReparametrizedData
    config : EstimatorConfig, optional
    target : str, optional
        ``'tau'`` or ``'lambda'``; by default ``'lambda'`` for binary data.

    Returns
    -------
    estimate : EffectEstimate

    Raises
    ------
    UnknownMethod
        Raised if the method is not one of the above.

    """
    config = config or EstimatorConfig()
    if target is None:
        target = LAMBDA if samples.binary else TAU
    if method not in METHODS:
        raise UnknownMethod("Unknown method '{}': choose from {}".format(
            method, ", ".join(METHODS)))
    if method == "ols_marginal":
        return estimate_marginal_ols(samples.y, samples.l, config.alpha)
    family, _, suffix = method.partition("_")
    if suffix:
        config = config.replace(crossfit=False)
    elif not config.crossfit:
        config = config.replace(crossfit=True)
    if family == "plm":
        return estimate_theta_plm(samples, config)
    if family == "plugin":
        return estimate_plugin(samples, config, target)
    if target == LAMBDA:
        return estimate_lambda_np(samples, config)
    return estimate_tau_np(samples, config)


def estimate_effect(spec, y, Z, method="plm", config=None, X=None):
    """Estimate a perturbation effect from responses and compositions.

    The compositions are reparametrized for ``spec``; for directional effects
    the zero-speed rows are set aside, the estimator runs on the other rows
    and the result is rescaled by :func:`with_zero_speed_correction`.

    Parameters
    ----------
    spec : EffectSpec
    y : array_like
        ``n`` responses.
    Z : array_like
        ``n x d`` compositions.
    method : str
        Estimator name, see :func:`estimate`.
    config : EstimatorConfig, optional
    X : array_like, optional
        Adjustment covariates appended to ``w``.

    Returns
    -------
    estimate : EffectEstimate

    Raises
    ------
    NoUntreated
        Raised for a binary effect if every composition is at its endpoint.

    """
    config = config or EstimatorConfig()
    data = reparametrize_sample(spec, Z, y, X)
    n = data.n
    if spec.is_binary:
        _untreated_fraction(data)
        return estimate(method, data, config, LAMBDA)
    keep = ~data.zero_speed
    n_used = int(keep.sum())
    p_hat = n_used / n
    if n_used == 0:
        logger.warning("{}: every row has zero speed".format(spec.to_text()))
        return EffectEstimate(0.0, 0.0, n, method, config.alpha, n_used=0,
                              n_zero_speed=n, n_undefined_l=data.n_undefined_l)
    inner = estimate(method, data.subset(keep), config, TAU)
    inner.n_undefined_l = data.n_undefined_l
    if n_used == n:
        return inner
    return with_zero_speed_correction(inner, p_hat, n_total=n)
