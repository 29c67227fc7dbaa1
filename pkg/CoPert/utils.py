"""Collection of utility functions used by the CoPert library.

Randomness is always derived by counter: a stream is identified by a base
seed plus a tuple of integer counters (replication, fold, tree, ...), so that
results never depend on the number of workers or on the order in which they
run.

"""
import logging
import math
import os
from logging import NullHandler

import numpy as np

from CoPert.default_config import THREADS_ENV_VAR

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())


def get_n_jobs():
    """Return the number of joblib workers allowed.

    The number is read from the environment variable ``COPERT_THREADS``. If it
    is unset or can't be parsed as a positive integer, one worker is used.

    Returns
    -------
    n_jobs : int
        Number of workers, at least 1.

    """
    value = os.environ.get(THREADS_ENV_VAR)
    if not value:
        return 1
    try:
        n_jobs = int(value)
    except ValueError:
        logger.warning("{}={} is not an integer: using 1 worker".format(
            THREADS_ENV_VAR, value))
        return 1
    return max(n_jobs, 1)


def make_rng(seed, *counters):
    """Return a counter-based random generator for a given stream.

    The generator is a :class:`numpy.random.Philox` keyed by the seed and the
    counters, e.g. ``make_rng(seed, rep, fold)``.

    Parameters
    ----------
    seed : int
        Nonnegative base seed.
    counters : int
        Nonnegative integers identifying the stream.

    Returns
    -------
    rng : numpy.random.Generator

    """
    entropy = [int(seed)] + [int(c) for c in counters]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed, *counters):
    """Return a 31-bit integer seed derived from a stream, for libraries that
    want a plain ``random_state``."""
    return int(make_rng(seed, *counters).integers(0, 2 ** 31 - 1))


def make_folds(n, n_folds, rng):
    """Split ``range(n)`` into ``n_folds`` folds by a seeded shuffle.

    Fold sizes are ``floor(n/K)`` or ``ceil(n/K)``. The indices inside each
    fold are sorted.

    Parameters
    ----------
    n : int
        Number of samples.
    n_folds : int
        Number of folds ``K``.
    rng : numpy.random.Generator

    Returns
    -------
    folds : list of numpy.ndarray

    """
    perm = rng.permutation(n)
    return [np.sort(fold) for fold in np.array_split(perm, n_folds)]


def split_in_two(indices, rng):
    """Split indices in two halves by a seeded shuffle.

    The first half holds ``ceil(m/2)`` indices. Both halves are sorted.
    """
    indices = np.asarray(indices)
    perm = rng.permutation(len(indices))
    cut = (len(indices) + 1) // 2
    return np.sort(indices[perm[:cut]]), np.sort(indices[perm[cut:]])


def exact_mean(values):
    """Return the mean of ``values`` computed with :func:`math.fsum`.

    The sum is correctly rounded, so the result does not depend on the order
    of the values.
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        return float("nan")
    return math.fsum(values.tolist()) / values.size
