"""Module that generates seeded synthetic datasets and runs coverage
experiments of the estimators' confidence intervals.

Settings (``SimSetting.name``):

* ``binary_plm``, ``binary_np``, ``cont_plm`` and ``cont_np``: ``W`` is
  uniform on the simplex of dimension ``d - 1`` (``d - 1`` coordinates) and
  ``L`` is binary or continuous; ``Y`` is either partially linear in ``L`` or
  not. The true effect (``lambda`` for a binary ``L``, ``tau`` for a
  continuous one) is 1.
* ``microbe_toy``: presence or absence of microbes, ``d = 3``, binary ``Y``.
  The true knock-out effect of the first coordinate is ``1/8`` while the
  marginal difference of means has the opposite sign.
* ``diversity_toy``: ``d = 3``, ``Y`` is partially linear in ``1 - G(Z)``
  with slope 1 while the marginal regression on ``-G(Z)`` has a negative
  slope.

Every dataset is a pure function of ``(setting, seed)``.

"""
import logging
from logging import NullHandler

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import expit

from CoPert.default_config import (DEFAULT_D, DEFAULT_N, DEFAULT_SEED,
                                   SETTINGS, TOY_FOLDS)
from CoPert.exceptions import CoPertError, UnknownSetting
from CoPert.estimators import (EstimatorConfig, ReparametrizedData,
                               estimate, estimate_effect,
                               estimate_marginal_ols)
from CoPert.perturbations import parse_effect_spec
from CoPert.simplex import as_compositions, gini
from CoPert.utils import get_n_jobs, make_rng

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

TOY_SETTINGS = ("microbe_toy", "diversity_toy")
BINARY_SETTINGS = ("binary_plm", "binary_np", "microbe_toy")
# Effect estimated in each toy setting
toy_effects = {
    "microbe_toy": "cke:1",
    "diversity_toy": "cdi_gini",
}
REPORT_COLUMNS = ["setting", "estimator", "n", "d", "reps", "coverage",
                  "mean_estimate", "mean_ci_width", "n_errors"]


class SimSetting:
    """Data-generating process with its sample size, dimension and seed.

    Parameters
    ----------
    name : str
        One of ``binary_plm``, ``binary_np``, ``cont_plm``, ``cont_np``,
        ``microbe_toy`` and ``diversity_toy``.
    n : int
    d : int, optional
        Dimension of the composition, at least 3. The toy settings only
        accept 3, which is also their default.
    seed : int

    Raises
    ------
    UnknownSetting
        Raised if the name is not one of the above.

    """
    def __init__(self, name, n=DEFAULT_N, d=None, seed=DEFAULT_SEED):
        if name not in SETTINGS:
            raise UnknownSetting("Unknown setting '{}': choose from {}".format(
                name, ", ".join(SETTINGS)))
        if d is None:
            d = 3 if name in TOY_SETTINGS else DEFAULT_D
        if d < 3:
            raise ValueError("d must be at least 3, got {}".format(d))
        if name in TOY_SETTINGS and d != 3:
            raise ValueError("{} is only defined for d=3, got {}".format(name,
                                                                        d))
        if n < 1:
            raise ValueError("n must be positive, got {}".format(n))
        self.name = name
        self.n = int(n)
        self.d = int(d)
        self.seed = int(seed)

    @property
    def is_toy(self):
        return self.name in TOY_SETTINGS

    @property
    def binary(self):
        return self.name in BINARY_SETTINGS

    def with_seed(self, seed):
        return SimSetting(self.name, self.n, self.d, seed)

    def __repr__(self):
        return "SimSetting(name={}, n={}, d={}, seed={})".format(
            self.name, self.n, self.d, self.seed)


class SimulatedSample:
    """Simulated data.

    The semiparametric settings fill ``l`` and ``w`` directly; the toy
    settings fill the compositions ``Z`` (and ``l`` for reference).
    """
    def __init__(self, y, l=None, w=None, Z=None, binary=False):
        self.y = y
        self.l = l
        self.w = w
        self.Z = Z
        self.binary = binary

    @property
    def n(self):
        return self.y.size

    def to_reparametrized(self):
        """Return the ``(y, l, w)`` batch of a semiparametric setting."""
        if self.w is None:
            raise ValueError("Toy samples must be reparametrized from Z")
        return ReparametrizedData(self.y, self.l, self.w, binary=self.binary)


def sample_uniform_simplex(n, dim, rng):
    """Draw ``n`` compositions uniformly (flat Dirichlet) on the simplex with
    ``dim`` coordinates.

    Parameters
    ----------
    n : int
    dim : int
        Number of coordinates, at least 2.
    rng : numpy.random.Generator

    Returns
    -------
    Z : numpy.ndarray
        ``n x dim`` array whose rows sum to 1.

    """
    if dim < 2:
        raise ValueError("dim must be at least 2, got {}".format(dim))
    draws = rng.standard_exponential((n, dim))
    return draws / draws.sum(axis=1, keepdims=True)


def first_coordinate_median(d):
    """Median of the first coordinate of a uniform draw with ``d - 1``
    coordinates, i.e. of Beta(1, d - 2)."""
    return 1.0 - 0.5 ** (1.0 / (d - 2))


def first_coordinate_variance(d):
    """Variance of Beta(1, d - 2)."""
    return (d - 2) / ((d - 1) ** 2 * d)


def _semiparametric(setting, rng):
    n, d = setting.n, setting.d
    w = sample_uniform_simplex(n, d - 1, rng)
    w1 = w[:, 0]
    b = (w1 > first_coordinate_median(d)).astype(float)
    scaled = w1 / np.sqrt(first_coordinate_variance(d))
    eps = rng.standard_normal(n)
    if setting.binary:
        u0 = (rng.random(n) < 0.8).astype(float)
        u1 = (rng.random(n) < 0.5).astype(float)
        l = u0 * (1 - b) + u1 * b
        if setting.name == "binary_plm":
            y = l + scaled + eps
        else:
            y = 1.4 * l * b + scaled + eps
    else:
        xi = rng.standard_normal(n)
        if setting.name == "cont_plm":
            l = b + xi
            y = l + b + eps
        else:
            l = b + (1 + b) * xi
            y = 2 * b * l + b + eps
    return SimulatedSample(y, l, w, binary=setting.binary)


def _microbe_toy(setting, rng):
    n = setting.n
    l = (rng.random(n) < 0.5).astype(float)
    u1 = rng.random(n)
    u2 = rng.random(n)
    b = (rng.random(n) < 0.5).astype(float)
    w2 = u1 * (1 - l) + u1 * l * b
    z1 = (1 - l) * u2
    Z = np.column_stack([z1, w2 * (1 - z1), (1 - w2) * (1 - z1)])
    # Absence of the first microbe raises the probability, absence of the
    # second lowers it
    prob = 0.75 + 0.125 * (Z[:, 0] == 0) - 0.5 * (Z[:, 1] == 0)
    y = (rng.random(n) < prob).astype(float)
    return SimulatedSample(y, l=l, Z=Z, binary=True)


def _projected_gaussian(n, rng):
    projection = np.eye(3) - np.full((3, 3), 1.0 / 3)
    U = rng.standard_normal((n, 3)) @ projection
    norms = np.abs(U).sum(axis=1)
    while np.any(norms == 0):
        bad = np.flatnonzero(norms == 0)
        U[bad] = rng.standard_normal((bad.size, 3)) @ projection
        norms = np.abs(U).sum(axis=1)
    return U / norms[:, None]


def _diversity_toy(setting, rng):
    n = setting.n
    W = _projected_gaussian(n, rng)
    xi = rng.standard_normal(n)
    eps = rng.standard_normal(n)
    D = expit(W[:, 0] + xi)
    # |W^j| <= 1/2, so the factor 2/3 keeps Z inside the simplex
    Z = 1.0 / 3 - (2.0 / 3) * D[:, None] * W
    spread = np.abs(W[:, :, None] - W[:, None, :]).sum(axis=(1, 2))
    # L = -G(Z)
    l = -D * spread / 9
    y = l + 4 * W[:, 0] + eps
    return SimulatedSample(y, l=l, Z=Z, binary=False)


def generate(setting):
    """Draw a dataset from a setting.

    Parameters
    ----------
    setting : SimSetting

    Returns
    -------
    sample : SimulatedSample
    true_effect : float
        1 for the semiparametric settings and ``diversity_toy``, ``1/8`` for
        ``microbe_toy``.

    """
    rng = make_rng(setting.seed)
    if setting.name == "microbe_toy":
        return _microbe_toy(setting, rng), 0.125
    if setting.name == "diversity_toy":
        return _diversity_toy(setting, rng), 1.0
    return _semiparametric(setting, rng), 1.0


def marginal_treatment_effect(y, Z, j=1):
    """Naive effect of the absence of coordinate ``j``: OLS of ``y`` on
    ``1{z^j = 0}``, i.e. the difference of the two group means.

    Returns
    -------
    estimate : EffectEstimate

    """
    Z = np.asarray(Z, dtype=float)
    absent = (Z[:, j - 1] == 0).astype(float)
    return estimate_marginal_ols(y, absent)


def marginal_gini_ols(y, Z):
    """Naive OLS of ``y`` on ``-G(z)``."""
    Z = as_compositions(Z)
    return estimate_marginal_ols(y, [-gini(z) for z in Z])


def toy_config(seed=DEFAULT_SEED):
    """Estimator settings of the toy experiments: 10 folds and forests for
    every regression."""
    return EstimatorConfig(n_folds=TOY_FOLDS, outcome_learner="forest",
                           treatment_learner="forest",
                           variance_learner="forest", seed=seed)


def toy_effect_estimate(setting, method="plm", config=None, sample=None):
    """Estimate the effect of a toy setting from its ``(Y, Z)``.

    ``microbe_toy`` estimates the knock-out effect of the first coordinate
    and ``diversity_toy`` the Gini diversity influence.

    Parameters
    ----------
    setting : SimSetting
    method : str
    config : EstimatorConfig, optional
        Defaults to :func:`toy_config` seeded with the setting's seed.
    sample : SimulatedSample, optional
        Already generated sample of the setting.

    Returns
    -------
    estimate : EffectEstimate

    """
    if not setting.is_toy:
        raise UnknownSetting("{} is not a toy setting".format(setting.name))
    if sample is None:
        sample, _ = generate(setting)
    config = config or toy_config(setting.seed)
    spec = parse_effect_spec(toy_effects[setting.name], setting.d)
    return estimate_effect(spec, sample.y, sample.Z, method, config)


def _estimate_sample(setting, sample, method, config):
    if callable(method):
        return method(sample, config)
    if setting.is_toy:
        return toy_effect_estimate(setting, method, config, sample)
    return estimate(method, sample.to_reparametrized(), config)


def write_dataset(path, y, Z, X=None):
    """Write a dataset as a CSV readable by ``copert estimate``.

    Columns are ``y``, ``z1`` ... ``zd`` and ``x1`` ... ``xq``; values are
    written with 17 significant digits.
    """
    Z = np.asarray(Z, dtype=float)
    frame = pd.DataFrame({"y": np.asarray(y, dtype=float)})
    for j in range(Z.shape[1]):
        frame["z{}".format(j + 1)] = Z[:, j]
    if X is not None:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        for k in range(X.shape[1]):
            frame["x{}".format(k + 1)] = X[:, k]
    frame.to_csv(path, index=False, float_format="%.17g")


def write_sample(path, sample):
    """Write a simulated sample as a CSV.

    Toy samples are written by :func:`write_dataset`, so ``copert estimate``
    can read them back. The semiparametric settings have no composition:
    their file holds the columns ``y``, ``l`` and ``w1`` ... ``w{d-1}``.
    """
    if sample.Z is not None:
        write_dataset(path, sample.y, sample.Z)
        return
    frame = pd.DataFrame({"y": sample.y, "l": sample.l})
    for j in range(sample.w.shape[1]):
        frame["w{}".format(j + 1)] = sample.w[:, j]
    frame.to_csv(path, index=False, float_format="%.17g")


class ReplicationResult:
    """Outcome of one replication of a coverage experiment."""
    __slots__ = ("setting", "estimator", "n", "d", "rep", "true_effect",
                 "estimate", "ci_low", "ci_high", "error")

    def __init__(self, setting, estimator, rep, true_effect, result=None,
                 error=None):
        self.setting = setting.name
        self.estimator = estimator
        self.n = setting.n
        self.d = setting.d
        self.rep = rep
        self.true_effect = true_effect
        self.error = error
        if result is None:
            self.estimate = self.ci_low = self.ci_high = np.nan
        else:
            self.estimate = result.estimate
            self.ci_low = result.ci_low
            self.ci_high = result.ci_high

    @property
    def covered(self):
        if self.error is not None:
            return False
        return bool(self.ci_low <= self.true_effect <= self.ci_high)


class CoverageReport:
    """Coverage of confidence intervals per setting and estimator.

    Failed replications count as non-covering and are excluded from the mean
    estimate and mean CI width.
    """
    def __init__(self, results):
        self.results = sorted(
            results, key=lambda r: (r.setting, r.d, r.n, r.estimator, r.rep))

    def to_frame(self):
        """Return one row per ``(setting, estimator, n, d)``."""
        records = [{
            "setting": r.setting, "estimator": r.estimator, "n": r.n,
            "d": r.d, "rep": r.rep, "estimate": r.estimate,
            "width": r.ci_high - r.ci_low, "covered": float(r.covered),
            "failed": int(r.error is not None)} for r in self.results]
        if not records:
            return pd.DataFrame(columns=REPORT_COLUMNS)
        frame = pd.DataFrame.from_records(records)
        keys = ["setting", "estimator", "n", "d"]
        grouped = frame.groupby(keys, sort=False)
        report = grouped.agg(reps=("rep", "size"),
                             coverage=("covered", "mean"),
                             mean_estimate=("estimate", "mean"),
                             mean_ci_width=("width", "mean"),
                             n_errors=("failed", "sum")).reset_index()
        return report[REPORT_COLUMNS]

    def to_csv(self, path_or_buffer):
        self.to_frame().to_csv(path_or_buffer, index=False,
                               float_format="%.17g")

    def coverage(self, setting, estimator, d=None):
        """Return the coverage rate of an estimator in a setting."""
        frame = self.to_frame()
        mask = (frame.setting == setting) & (frame.estimator == estimator)
        if d is not None:
            mask &= frame.d == d
        return float(frame.loc[mask, "coverage"].iloc[0])

    @property
    def errors(self):
        return [(r.setting, r.estimator, r.rep, r.error) for r in self.results
                if r.error is not None]


def _method_name(method):
    return method if isinstance(method, str) else method.__name__


def _replicate(setting, rep, methods, config):
    sample, true_effect = generate(setting)
    if config is not None:
        rep_config = config.replace(seed=setting.seed)
    elif setting.is_toy:
        rep_config = toy_config(setting.seed)
    else:
        rep_config = EstimatorConfig(seed=setting.seed)
    out = []
    for method in methods:
        name = _method_name(method)
        try:
            result = _estimate_sample(setting, sample, method, rep_config)
        except (CoPertError, ValueError, np.linalg.LinAlgError) as e:
            logger.warning("{} rep {} with {} failed: {}".format(
                setting.name, rep, name, e))
            out.append(ReplicationResult(setting, name, rep, true_effect,
                                         error=type(e).__name__))
            continue
        out.append(ReplicationResult(setting, name, rep, true_effect, result))
    return out


def run_coverage(settings, methods, reps, base_seed=DEFAULT_SEED,
                 config=None):
    """Run a coverage experiment.

    Replication ``r`` of every setting draws its data with seed
    ``base_seed + r``, runs each estimator and records whether the true
    effect lies in its confidence interval. Estimator failures are recorded
    as non-covering with the name of the error.

    Parameters
    ----------
    settings : list of SimSetting
        Their seeds are ignored.
    methods : list of str or callable
        Estimator names, or callables ``(sample, config) -> EffectEstimate``.
    reps : int
        Number of replications, at least 1.
    base_seed : int
    config : EstimatorConfig, optional
        Estimator settings; the seed is replaced by the replication seed. By
        default the toy settings use :func:`toy_config`.

    Returns
    -------
    report : CoverageReport

    """
    if reps < 1:
        raise ValueError("reps must be at least 1, got {}".format(reps))
    jobs = [(setting.with_seed(base_seed + rep), rep)
            for setting in settings for rep in range(reps)]
    logger.info("Running {} replications of {} settings".format(
        reps, len(settings)))
    batches = Parallel(n_jobs=get_n_jobs(), prefer="threads")(
        delayed(_replicate)(setting, rep, methods, config)
        for setting, rep in jobs)
    report = CoverageReport([r for batch in batches for r in batch])
    if report.errors:
        logger.warning("{} replications failed".format(len(report.errors)))
    return report


def sweep_settings(names, n=DEFAULT_N, dims=(DEFAULT_D,), seed=DEFAULT_SEED):
    """Build the settings of a sweep over names and dimensions.

    Toy settings are only built once, with ``d = 3``.
    """
    settings = []
    for name in names:
        if name in TOY_SETTINGS:
            settings.append(SimSetting(name, n, 3, seed))
            continue
        settings.extend(SimSetting(name, n, d, seed) for d in dims)
    return settings

