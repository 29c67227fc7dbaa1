"""Module that defines the simplex primitives on which every perturbation is
built.

A point of the simplex (a *composition*) is a vector of ``d >= 2``
nonnegative proportions summing to 1. The :class:`Composition` class validates
and normalizes such vectors according to the tolerance rule of
:mod:`CoPert.default_config`:

* sums within ``1e-9`` of 1 are renormalized silently,
* sums within ``1e-6`` of 1 are renormalized and flagged
  (:attr:`Composition.renormalized`),
* anything else is rejected with :exc:`~CoPert.exceptions.InvalidComposition`.

Coordinates are **1-indexed** in every user-facing function (sets ``A``,
``B`` and target indices ``j``), matching the usual ``[d] = {1, ..., d}``
notation.

"""
import logging
from logging import NullHandler

import numpy as np

from CoPert.default_config import SUM_TOL_REJECT, SUM_TOL_SILENT, ZERO_TOL
from CoPert.exceptions import (AllZero, DimensionMismatch, EmptySubcompositionB,
                               IndexOutOfRange, InvalidComposition,
                               NegativeEntry, OverlappingSets)

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())


class Composition:
    """Class that represents a point of the simplex.

    Parameters
    ----------
    values : array_like
        Sequence of ``d >= 2`` nonnegative reals whose sum is 1 up to the
        tolerance rule. Negative values smaller in magnitude than ``1e-12``
        are set to 0.

    Attributes
    ----------
    values : numpy.ndarray
        Read-only normalized coordinates.
    renormalized : bool
        True if the input sum was off by more than ``1e-9`` (but less than
        ``1e-6``) and had to be renormalized.

    Raises
    ------
    InvalidComposition
        Raised if there are fewer than two coordinates, non-finite values or
        a sum too far from 1.
    NegativeEntry
        Raised if a coordinate is negative.
    AllZero
        Raised if every coordinate is 0.

    """
    __slots__ = ("_values", "renormalized")

    def __init__(self, values):
        if isinstance(values, Composition):
            self._values = values._values
            self.renormalized = values.renormalized
            return
        arr, self.renormalized = _validate(values)
        arr.flags.writeable = False
        self._values = arr

    @classmethod
    def _trusted(cls, arr):
        # Wraps an array already known to be a normalized composition
        obj = cls.__new__(cls)
        arr = np.array(arr, dtype=float)
        arr.flags.writeable = False
        obj._values = arr
        obj.renormalized = False
        return obj

    @property
    def values(self):
        return self._values

    @property
    def d(self):
        return self._values.size

    def is_zero(self, j):
        """Return True if coordinate ``j`` (1-indexed) is exactly 0 under the
        zero-detection rule."""
        _check_index(j, self.d)
        return bool(abs(self._values[j - 1]) < ZERO_TOL)

    def support(self):
        """Return the 1-indexed coordinates that are not zero."""
        return [j + 1 for j in np.flatnonzero(np.abs(self._values) >= ZERO_TOL)]

    def __len__(self):
        return self.d

    def __iter__(self):
        return iter(self._values.tolist())

    def __getitem__(self, item):
        return self._values[item]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._values.copy()
        return self._values.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, Composition):
            return NotImplemented
        return (self.d == other.d
                and bool(np.array_equal(self._values, other._values)))

    def __hash__(self):
        return hash(tuple(self._values.tolist()))

    def __repr__(self):
        return "Composition({})".format(np.array2string(self._values,
                                                        separator=", "))


class IndexSet:
    """Sorted set of distinct 1-indexed coordinates.

    Parameters
    ----------
    indices : iterable of int
        Coordinates of the set, e.g. ``[1, 2]``.

    Raises
    ------
    IndexOutOfRange
        Raised if an index is smaller than 1, or larger than ``d`` when
        :meth:`check` is called.
    OverlappingSets
        Raised if an index is repeated.

    """
    __slots__ = ("indices",)

    def __init__(self, indices):
        if isinstance(indices, IndexSet):
            indices = indices.indices
        if isinstance(indices, (int, np.integer)):
            indices = [indices]
        items = [int(i) for i in indices]
        if len(set(items)) != len(items):
            raise OverlappingSets(
                "Repeated coordinate in index set {}".format(items))
        for i in items:
            if i < 1:
                raise IndexOutOfRange(
                    "Coordinate {} is out of range: coordinates start at "
                    "1".format(i))
        self.indices = tuple(sorted(items))

    def check(self, d):
        """Raise :exc:`IndexOutOfRange` unless every index is in ``[d]``."""
        for i in self.indices:
            _check_index(i, d)
        return self

    def zero_based(self):
        return np.array(self.indices, dtype=int) - 1

    def complement(self, d):
        """Return the index set ``[d]`` minus this set."""
        return IndexSet([j for j in range(1, d + 1) if j not in self.indices])

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, item):
        return item in self.indices

    def __eq__(self, other):
        if not isinstance(other, IndexSet):
            return NotImplemented
        return self.indices == other.indices

    def __hash__(self):
        return hash(self.indices)

    def __repr__(self):
        return "IndexSet({})".format(list(self.indices))

    def to_text(self):
        return ",".join(str(i) for i in self.indices)


def _check_index(j, d):
    if not 1 <= j <= d:
        raise IndexOutOfRange(
            "Coordinate {} is out of range for d={}".format(j, d))


def _validate(values):
    arr = np.array(values, dtype=float).ravel()
    if arr.size < 2:
        raise InvalidComposition(
            "A composition needs at least 2 coordinates, got {}".format(
                arr.size))
    if not np.all(np.isfinite(arr)):
        raise InvalidComposition("Composition has non-finite coordinates: "
                                 "{}".format(arr))
    negative = np.flatnonzero(arr < -ZERO_TOL)
    if negative.size:
        j = negative[0]
        raise NegativeEntry("Coordinate {} is negative: {}".format(
            j + 1, arr[j]))
    arr[arr < 0] = 0.0
    total = arr.sum()
    if total == 0:
        raise AllZero("All coordinates are 0")
    deviation = abs(total - 1.0)
    renormalized = False
    if deviation > SUM_TOL_REJECT:
        raise InvalidComposition(
            "Coordinates sum to {} instead of 1".format(total))
    elif deviation > SUM_TOL_SILENT:
        renormalized = True
        logger.warning("Composition renormalized: its coordinates summed to "
                       "{}".format(total))
    if total != 1.0:
        arr = arr / total
    return arr, renormalized


def as_array(z):
    """Return the coordinates of ``z`` as a float array, validating ``z`` if
    it is not already a :class:`Composition`."""
    if isinstance(z, Composition):
        return z.values
    return Composition(z).values


def as_compositions(matrix):
    """Validate an ``n x d`` array row by row and return it normalized.

    Parameters
    ----------
    matrix : array_like
        One composition per row.

    Returns
    -------
    normalized : numpy.ndarray
        Array of shape ``(n, d)`` whose rows sum to 1.

    Raises
    ------
    InvalidComposition, NegativeEntry, AllZero
        Raised for the first offending row; the message names the row
        (1-indexed).

    """
    arr = np.array(matrix, dtype=float)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise InvalidComposition(
            "Expected an n x d array with d >= 2, got shape {}".format(
                arr.shape))
    out = np.empty_like(arr)
    n_warned = 0
    for i, row in enumerate(arr):
        try:
            out[i], renormalized = _validate(row)
        except (InvalidComposition, NegativeEntry, AllZero) as e:
            raise type(e)("Row {}: {}".format(i + 1, e)) from e
        n_warned += renormalized
    if n_warned:
        logger.info("{} of {} compositions renormalized".format(n_warned,
                                                               len(arr)))
    return out


def closure(v):
    """Normalize a nonnegative vector onto the simplex.

    Parameters
    ----------
    v : array_like
        At least two nonnegative reals with a positive sum.

    Returns
    -------
    z : Composition
        ``v / sum(v)``.

    Raises
    ------
    NegativeEntry
        Raised if an entry is negative.
    AllZero
        Raised if every entry is 0.

    """
    arr = np.array(v, dtype=float).ravel()
    if arr.size < 2:
        raise InvalidComposition(
            "Closure needs at least 2 entries, got {}".format(arr.size))
    negative = np.flatnonzero(arr < 0)
    if negative.size:
        j = negative[0]
        raise NegativeEntry("Entry {} is negative: {}".format(j + 1, arr[j]))
    total = arr.sum()
    if total == 0:
        raise AllZero("All entries are 0")
    return Composition._trusted(arr / total)


def center(d):
    """Return the center ``(1/d, ..., 1/d)`` of the simplex."""
    if d < 2:
        raise InvalidComposition("d must be at least 2, got {}".format(d))
    return Composition._trusted(np.full(d, 1.0 / d))


def vertex(j, d):
    """Return the vertex ``e_j`` (1-indexed) of the simplex."""
    _check_index(j, d)
    arr = np.zeros(d)
    arr[j - 1] = 1.0
    return Composition._trusted(arr)


def gini(z):
    """Return the Gini coefficient ``(1/(2d)) sum_j sum_k |z^j - z^k|``.

    The value is 0 at the center and ``(d-1)/d`` at a vertex.
    """
    arr = as_array(z)
    d = arr.size
    return float(np.abs(arr[:, None] - arr[None, :]).sum() / (2 * d))


def l1_distance(z1, z2):
    """Return ``sum_j |z1^j - z2^j|``.

    Raises
    ------
    DimensionMismatch
        Raised if the two compositions have different dimensions.

    """
    a = as_array(z1)
    b = as_array(z2)
    if a.size != b.size:
        raise DimensionMismatch(
            "Can't compare compositions of dimensions {} and {}".format(
                a.size, b.size))
    return float(np.abs(a - b).sum())


def amalgamate(z, A, B):
    """Move the whole mass of the coordinates in ``A`` into ``B``.

    The mass is spread proportionally to the subcomposition on ``B``, and
    coordinates outside ``A`` and ``B`` are left unchanged.

    Parameters
    ----------
    z : Composition or array_like
    A, B : IndexSet or iterable of int
        Disjoint, nonempty sets of 1-indexed coordinates.

    Returns
    -------
    result : Composition
        ``z`` itself if ``z^A`` is already 0.

    Raises
    ------
    OverlappingSets
        Raised if ``A`` and ``B`` share a coordinate.
    EmptySubcompositionB
        Raised if ``z^A`` has mass but ``z^B`` is 0.

    """
    comp = Composition(z)
    arr = comp.values
    d = arr.size
    A = IndexSet(A).check(d)
    B = IndexSet(B).check(d)
    if not len(A) or not len(B):
        raise InvalidComposition("Amalgamation sets must be nonempty")
    if set(A.indices) & set(B.indices):
        raise OverlappingSets("Sets A={} and B={} overlap".format(
            list(A), list(B)))
    ia, ib = A.zero_based(), B.zero_based()
    if np.all(np.abs(arr[ia]) < ZERO_TOL):
        return comp
    mass_a = arr[ia].sum()
    mass_b = arr[ib].sum()
    if mass_b < ZERO_TOL:
        raise EmptySubcompositionB(
            "Can't amalgamate A={} into B={}: z^B is 0".format(list(A),
                                                                list(B)))
    out = arr.copy()
    out[ia] = 0.0
    out[ib] = arr[ib] / mass_b * (mass_a + mass_b)
    return Composition._trusted(out)
