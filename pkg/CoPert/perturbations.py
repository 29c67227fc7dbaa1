"""Module that defines the catalogue of perturbations of the simplex and their
derivative-isolating reparametrizations.

A perturbation moves a composition ``z`` along a trajectory
``gamma -> psi(z, gamma)`` with ``psi(z, 0) = z``. It is either

* **binary**: only ``gamma`` in {0, 1} is allowed and ``psi(z, 1)`` is the
  endpoint (knock-out and amalgamation effects), or
* **directional**: ``psi(z, gamma) = z + gamma * s(z) * v(z)`` moves in a
  straight line towards an endpoint ``E(z)`` with the unit 1-norm direction
  ``v(z) = (E(z) - z) / ||E(z) - z||_1`` and a speed ``s(z)``. Its initial
  derivative is ``omega(z) = s(z) * v(z)``.

A reparametrization maps ``z`` to a pair ``(l, w)`` such that moving ``z``
along the perturbation corresponds to moving ``l`` at unit rate while ``w``
stays fixed. The average effect of the perturbation then becomes an average
partial derivative with respect to ``l``.

The catalogue kinds are (coordinates 1-indexed):

==================  ==============  ===============================
Kind                Endpoint        Speed
==================  ==============  ===============================
``cfi_unit:j``      ``e_j``         1
``cfi_mult:j``      ``e_j``         ``2 z^j (1 - z^j)``
``cke:j``           knock-out       binary
``cdi_unit``        center          1
``cdi_gini``        center          ``1 - G`` moves at unit rate
``cai_unit:A;B``    ``A -> B``      1
``cai_mult:A;B``    ``A -> B``      ``2 |z^A| |z^B| / (|z^A|+|z^B|)^2``
``cae:A;B``         ``A -> B``      binary
``clr_diversity``   center          unit rate in CLR norm
==================  ==============  ===============================

plus :data:`CUSTOM` perturbations built from a user endpoint and either a
speed function or a summary statistic.

"""
import logging
import re
from logging import NullHandler

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import expit, softmax

from CoPert.default_config import (DOMAIN_TOL, FD_REL_STEP, MIN_SPEED,
                                   QUAD_EPSABS, QUAD_LIMIT, REPARAM_ANCHOR,
                                   ZERO_SPEED_TOL, ZERO_TOL)
from CoPert.exceptions import (AtEndpoint, InvalidEffectSpec, LogOfZero,
                               NonPositiveSpeed, NotDecreasing, OutOfDomain,
                               OutOfImage, ZeroCoordinate)
from CoPert.simplex import (Composition, IndexSet, amalgamate, as_array,
                            center, gini, vertex)

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

CFI_UNIT = "cfi_unit"
CFI_MULT = "cfi_mult"
CKE = "cke"
CDI_UNIT = "cdi_unit"
CDI_GINI = "cdi_gini"
CAI_UNIT = "cai_unit"
CAI_MULT = "cai_mult"
CAE = "cae"
CLR_DIVERSITY = "clr_diversity"
CUSTOM = "custom"

INDEXED_KINDS = (CFI_UNIT, CFI_MULT, CKE)
SET_KINDS = (CAI_UNIT, CAI_MULT, CAE)
BINARY_KINDS = (CKE, CAE)
CATALOGUE_KINDS = (CFI_UNIT, CFI_MULT, CKE, CDI_UNIT, CDI_GINI, CAI_UNIT,
                   CAI_MULT, CAE, CLR_DIVERSITY)
# Kinds whose endpoint does not depend on z
CONSTANT_ENDPOINT_KINDS = (CFI_UNIT, CFI_MULT, CDI_UNIT, CDI_GINI,
                           CLR_DIVERSITY)
GIVEN_SPEED = "given_speed"
STATISTIC = "statistic"


class EffectSpec:
    """Class that describes a perturbation effect.

    Parameters
    ----------
    kind : str
        One of the catalogue kinds (e.g. ``'cfi_mult'``) or ``'custom'``.
    j : int, optional
        Target coordinate (1-indexed) of the ``cfi_*`` and ``cke`` kinds.
    A, B : iterable of int, optional
        Disjoint coordinate sets of the amalgamation kinds (mass moves from
        ``A`` into ``B``).
    endpoint_fn : callable, optional
        Custom kind only: maps a :class:`~CoPert.simplex.Composition` to its
        endpoint.
    speed_fn : callable, optional
        Custom kind only: maps a coordinate array to a speed. Exactly one of
        ``speed_fn`` and ``statistic_fn`` must be given.
    statistic_fn : callable, optional
        Custom kind only: maps a coordinate array to a summary statistic that
        decreases along the ray leaving the endpoint; the speed is implied.
    anchor : float, optional
        Custom kind with ``speed_fn`` only: distance at which ``l`` is 0.
    name : str, optional
        Label of a custom spec used by :meth:`to_text`.

    Raises
    ------
    InvalidEffectSpec
        Raised if the fields don't match the kind.

    """
    def __init__(self, kind, j=None, A=None, B=None, endpoint_fn=None,
                 speed_fn=None, statistic_fn=None, anchor=REPARAM_ANCHOR,
                 name=None):
        kind = str(kind).lower()
        if kind not in CATALOGUE_KINDS + (CUSTOM,):
            raise InvalidEffectSpec("Unknown effect kind: {}".format(kind))
        self.kind = kind
        self.j = None
        self.A = None
        self.B = None
        self.endpoint_fn = None
        self.speed_fn = None
        self.statistic_fn = None
        self.anchor = float(anchor)
        self.name = name
        if kind in INDEXED_KINDS:
            if j is None or int(j) < 1:
                raise InvalidEffectSpec(
                    "Effect {} needs a coordinate j >= 1, got {}".format(kind,
                                                                         j))
            self.j = int(j)
        elif kind in SET_KINDS:
            if A is None or B is None:
                raise InvalidEffectSpec(
                    "Effect {} needs the sets A and B".format(kind))
            self.A = IndexSet(A)
            self.B = IndexSet(B)
            if not len(self.A) or not len(self.B):
                raise InvalidEffectSpec(
                    "Effect {}: A and B must be nonempty".format(kind))
            if set(self.A.indices) & set(self.B.indices):
                raise InvalidEffectSpec(
                    "Effect {}: A={} and B={} overlap".format(
                        kind, list(self.A), list(self.B)))
        elif kind == CUSTOM:
            if endpoint_fn is None:
                raise InvalidEffectSpec("A custom effect needs an endpoint_fn")
            if (speed_fn is None) == (statistic_fn is None):
                raise InvalidEffectSpec(
                    "A custom effect needs exactly one of speed_fn and "
                    "statistic_fn")
            self.endpoint_fn = endpoint_fn
            self.speed_fn = speed_fn
            self.statistic_fn = statistic_fn

    @property
    def is_binary(self):
        return self.kind in BINARY_KINDS

    @property
    def is_directional(self):
        return not self.is_binary

    @property
    def speed_mode(self):
        if self.kind != CUSTOM:
            return None
        return GIVEN_SPEED if self.speed_fn is not None else STATISTIC

    @property
    def has_constant_endpoint(self):
        return self.kind in CONSTANT_ENDPOINT_KINDS

    def check(self, d):
        """Validate the spec's coordinates against the dimension ``d``.

        Returns
        -------
        spec : EffectSpec
            The spec itself.

        Raises
        ------
        InvalidEffectSpec
            Raised if a coordinate is out of range, or if ``A`` and ``B``
            cover every coordinate of a knock-out of dimension ``d < 2``.

        """
        try:
            if self.j is not None:
                IndexSet([self.j]).check(d)
            if self.A is not None:
                self.A.check(d)
                self.B.check(d)
        except Exception as e:
            raise InvalidEffectSpec(
                "Effect {} is invalid for d={}: {}".format(self.to_text(), d,
                                                           e)) from e
        return self

    def to_text(self):
        """Return the canonical text form, e.g. ``'cai_mult:A=1,2;B=5'``."""
        if self.kind in INDEXED_KINDS:
            return "{}:{}".format(self.kind, self.j)
        if self.kind in SET_KINDS:
            return "{}:A={};B={}".format(self.kind, self.A.to_text(),
                                         self.B.to_text())
        if self.kind == CUSTOM:
            return self.name or CUSTOM
        return self.kind

    def __eq__(self, other):
        if not isinstance(other, EffectSpec):
            return NotImplemented
        if self.kind == CUSTOM or other.kind == CUSTOM:
            return self is other
        return (self.kind, self.j, self.A, self.B) == \
               (other.kind, other.j, other.A, other.B)

    def __hash__(self):
        return hash((self.kind, self.j, self.A, self.B))

    def __repr__(self):
        return "EffectSpec({})".format(self.to_text())


class DirectionalReparam:
    """Reparametrization ``(l, w)`` of a point for a directional effect.

    Parameters
    ----------
    l : float
        Coordinate that moves at unit rate along the perturbation.
    w_endpoint : Composition
        Endpoint of the perturbation at the point.
    w_direction : numpy.ndarray
        Unit 1-norm direction from the point to the endpoint. For the
        ``clr_diversity`` kind this is the CLR direction, with unit 2-norm.
    speed : float or None
        Speed of the perturbation at the point, if known.

    """
    __slots__ = ("l", "w_endpoint", "w_direction", "speed")

    def __init__(self, l, w_endpoint, w_direction, speed=None):
        self.l = float(l)
        self.w_endpoint = Composition(w_endpoint)
        direction = np.array(w_direction, dtype=float)
        direction.flags.writeable = False
        self.w_direction = direction
        self.speed = None if speed is None else float(speed)

    def __repr__(self):
        return "DirectionalReparam(l={}, w_endpoint={}, w_direction={})".format(
            self.l, self.w_endpoint, self.w_direction)


class BinaryReparam:
    """Reparametrization of a point for a binary effect.

    ``l`` is 1 if the point already equals its endpoint and ``w`` is the
    endpoint ``psi(z, 1)``.
    """
    __slots__ = ("l", "w")

    def __init__(self, l, w):
        self.l = int(l)
        self.w = Composition(w)

    def __repr__(self):
        return "BinaryReparam(l={}, w={})".format(self.l, self.w)


# ================
# Text form parser
# ================
_SETS_PATTERN = re.compile(r"^A=([\d,\s]+);\s*B=([\d,\s]+)$")


def parse_effect_spec(text, d=None):
    """Parse the canonical text form of an effect.

    Accepted forms are ``cfi_unit:j``, ``cfi_mult:j``, ``cke:j``,
    ``cdi_unit``, ``cdi_gini``, ``cai_unit:A=..;B=..``,
    ``cai_mult:A=..;B=..``, ``cae:A=..;B=..`` and ``clr_diversity``, with
    1-indexed coordinates.

    Parameters
    ----------
    text : str
        Text form, e.g. ``'cae:A=1;B=2,3'``.
    d : int, optional
        If given, the spec is checked against this dimension.

    Returns
    -------
    spec : EffectSpec

    Raises
    ------
    InvalidEffectSpec
        Raised if the text can't be parsed.

    """
    text = text.strip()
    kind, _, args = text.partition(":")
    kind = kind.strip().lower()
    args = args.strip()
    try:
        if kind in INDEXED_KINDS:
            spec = EffectSpec(kind, j=int(args))
        elif kind in SET_KINDS:
            match = _SETS_PATTERN.match(args.replace(" ", ""))
            if not match:
                raise InvalidEffectSpec("Expected 'A=...;B=...'")
            spec = EffectSpec(kind, A=_parse_list(match.group(1)),
                              B=_parse_list(match.group(2)))
        elif kind in CATALOGUE_KINDS:
            if args:
                raise InvalidEffectSpec("{} takes no argument".format(kind))
            spec = EffectSpec(kind)
        else:
            raise InvalidEffectSpec("Unknown effect kind '{}'".format(kind))
    except (InvalidEffectSpec, ValueError) as e:
        raise InvalidEffectSpec(
            "Invalid effect spec '{}': {}".format(text, e)) from e
    if d is not None:
        spec.check(d)
    return spec


def _parse_list(text):
    return [int(item) for item in text.split(",") if item]


def expand_effect_specs(texts, d):
    """Parse several text forms, expanding ``kind:all`` into one spec per
    coordinate.

    Parameters
    ----------
    texts : str or list of str
        Text forms; a single string may hold several forms separated by
        whitespace.
    d : int
        Dimension of the compositions.

    Returns
    -------
    specs : list of EffectSpec
        In input order.

    """
    if isinstance(texts, str):
        texts = texts.split()
    specs = []
    for text in texts:
        kind, _, args = text.strip().partition(":")
        if args.strip().lower() == "all":
            if kind.strip().lower() not in INDEXED_KINDS:
                raise InvalidEffectSpec(
                    "Invalid effect spec '{}': only {} accept 'all'".format(
                        text, ", ".join(INDEXED_KINDS)))
            specs.extend(EffectSpec(kind.strip().lower(), j=j)
                         for j in range(1, d + 1))
        else:
            specs.append(parse_effect_spec(text, d))
    return specs


# ==============
# Geometry parts
# ==============
def _endpoint_array(spec, arr):
    d = arr.size
    kind = spec.kind
    if kind in (CFI_UNIT, CFI_MULT):
        return vertex(spec.j, d).values
    if kind == CKE:
        others = IndexSet([spec.j]).complement(d)
        return amalgamate(arr, [spec.j], others).values
    if kind in (CDI_UNIT, CDI_GINI, CLR_DIVERSITY):
        return center(d).values
    if kind in SET_KINDS:
        return amalgamate(arr, spec.A, spec.B).values
    return as_array(spec.endpoint_fn(Composition._trusted(arr)))


def _straight_line(endpoint_arr, arr):
    diff = endpoint_arr - arr
    dist = np.abs(diff).sum()
    if dist < ZERO_TOL:
        raise AtEndpoint("The point {} is at its endpoint".format(arr))
    return diff / dist, dist


def _prepare(spec, z):
    arr = as_array(z)
    spec.check(arr.size)
    return arr


def endpoint(spec, z):
    """Return the endpoint ``E(z)`` of the perturbation.

    The endpoint is ``e_j`` for the ``cfi_*`` kinds, the knock-out of
    coordinate ``j`` for ``cke``, the center for ``cdi_*`` and
    ``clr_diversity``, the amalgamation ``A -> B`` for the ``cai_*`` and
    ``cae`` kinds and the user's function for a custom spec.

    Raises
    ------
    EmptySubcompositionB
        Propagated from :func:`~CoPert.simplex.amalgamate`.

    """
    arr = _prepare(spec, z)
    return Composition._trusted(_endpoint_array(spec, arr))


def direction(spec, z):
    """Return the unit 1-norm direction ``(E(z) - z) / ||E(z) - z||_1``.

    For ``clr_diversity`` the direction is ``omega / ||omega||_1``.

    Raises
    ------
    AtEndpoint
        Raised if ``z`` equals its endpoint.

    """
    arr = _prepare(spec, z)
    if spec.kind == CLR_DIVERSITY:
        omega_arr = _clr_unit_omega(arr)
        return omega_arr / np.abs(omega_arr).sum()
    return _straight_line(_endpoint_array(spec, arr), arr)[0]


def _speed_array(spec, arr, v=None):
    kind = spec.kind
    if kind in (CFI_UNIT, CDI_UNIT, CAI_UNIT):
        return 1.0
    if kind == CFI_MULT:
        zj = arr[spec.j - 1]
        return 2.0 * zj * (1.0 - zj)
    if kind == CAI_MULT:
        a = arr[spec.A.zero_based()].sum()
        b = arr[spec.B.zero_based()].sum()
        if a + b < ZERO_TOL:
            return 0.0
        return 2.0 * a * b / (a + b) ** 2
    if kind == CDI_GINI:
        if v is None:
            v = _straight_line(_endpoint_array(spec, arr), arr)[0]
        return 2.0 * arr.size / np.abs(v[:, None] - v[None, :]).sum()
    if kind == CLR_DIVERSITY:
        return float(np.abs(_clr_unit_omega(arr)).sum())
    if spec.speed_mode == GIVEN_SPEED:
        return float(spec.speed_fn(arr))
    E = _endpoint_array(spec, arr)
    return reparam_from_statistic(lambda c: E, spec.statistic_fn, arr).speed


def speed(spec, z):
    """Return the speed ``s(z) >= 0`` of a directional perturbation.

    Raises
    ------
    InvalidEffectSpec
        Raised for binary kinds, which have no speed.
    AtEndpoint
        Raised for ``cdi_gini`` at the center.

    """
    arr = _prepare(spec, z)
    if spec.is_binary:
        raise InvalidEffectSpec(
            "Binary effect {} has no speed".format(spec.to_text()))
    return float(_speed_array(spec, arr))


def _omega_array(spec, arr):
    if spec.kind == CLR_DIVERSITY:
        if np.any(arr < ZERO_TOL):
            raise ZeroCoordinate(
                "clr_diversity needs positive coordinates: {}".format(arr))
        return _clr_unit_omega(arr)
    if spec.kind in (CAI_UNIT, CAI_MULT) and \
            arr[spec.B.zero_based()].sum() < ZERO_TOL:
        # No mass in B to spread the mass of A into
        return np.zeros_like(arr)
    try:
        v, _ = _straight_line(_endpoint_array(spec, arr), arr)
    except AtEndpoint:
        return np.zeros_like(arr)
    return _speed_array(spec, arr, v) * v


def omega(spec, z):
    """Return the initial derivative ``omega(z) = s(z) v(z)``.

    The zero vector is returned at zero-speed points, including points that
    already sit at their endpoint and, for ``cai_unit`` and ``cai_mult``,
    points with ``z^B = 0``.
    """
    arr = _prepare(spec, z)
    if spec.is_binary:
        raise InvalidEffectSpec(
            "Binary effect {} has no derivative".format(spec.to_text()))
    return _omega_array(spec, arr)


def is_zero_speed(spec, z):
    """Return True if ``||omega(z)||_1 < 1e-12``; binary kinds never have
    zero speed."""
    if spec.is_binary:
        return False
    arr = _prepare(spec, z)
    return bool(np.abs(_omega_array(spec, arr)).sum() < ZERO_SPEED_TOL)


def _to_simplex(out):
    if np.any(out < -DOMAIN_TOL) or np.any(out > 1.0 + DOMAIN_TOL):
        raise OutOfDomain("Perturbed point leaves the simplex: {}".format(out))
    out = np.clip(out, 0.0, 1.0)
    return Composition._trusted(out / out.sum())


def apply(spec, z, gamma):
    """Return ``psi(z, gamma)``.

    Parameters
    ----------
    spec : EffectSpec
    z : Composition or array_like
    gamma : float
        Nonnegative step. Binary kinds accept only 0 and 1.

    Returns
    -------
    perturbed : Composition
        ``z`` itself when ``gamma`` is 0.

    Raises
    ------
    OutOfDomain
        Raised if ``gamma`` is negative, not allowed for a binary kind, or
        too large for the result to stay on the simplex.

    """
    arr = _prepare(spec, z)
    gamma = float(gamma)
    if gamma < 0:
        raise OutOfDomain("gamma must be nonnegative, got {}".format(gamma))
    if gamma == 0:
        return Composition(z)
    if spec.is_binary:
        if gamma != 1:
            raise OutOfDomain(
                "Binary effect {} accepts gamma in {{0, 1}}, got {}".format(
                    spec.to_text(), gamma))
        return Composition._trusted(_endpoint_array(spec, arr))
    if spec.kind == CLR_DIVERSITY:
        x = clr(arr)
        norm = np.linalg.norm(x)
        if gamma > norm * (1 + DOMAIN_TOL):
            raise OutOfDomain(
                "gamma={} is past the center at {}".format(gamma, norm))
        return clr_inverse(x * (1.0 - gamma / norm))
    return _to_simplex(arr + gamma * _omega_array(spec, arr))


def clr_feature_omega(z, j):
    """Return the initial derivative ``z^j (e_j - z)`` of the additive CLR
    feature perturbation ``CLR^-1(CLR(z) + gamma e_j)``."""
    arr = as_array(z)
    out = -arr[j - 1] * arr
    out[j - 1] += arr[j - 1]
    return out


# ===
# CLR
# ===
def clr(z):
    """Return the centered log-ratio transform of ``z``.

    Raises
    ------
    ZeroCoordinate
        Raised if a coordinate is 0.

    """
    arr = as_array(z)
    if np.any(arr < ZERO_TOL):
        raise ZeroCoordinate(
            "The CLR transform needs positive coordinates: {}".format(arr))
    logs = np.log(arr)
    return logs - logs.mean()


def clr_inverse(x):
    """Return ``C(exp(x))``."""
    x = np.asarray(x, dtype=float)
    return Composition._trusted(softmax(x))


def clr_diversity_omega(z):
    """Return the initial derivative of ``CLR^-1((1 - gamma) CLR(z))``.

    Coordinate ``j`` is ``sum_{k != j} z^j z^k log(z^k / z^j)``.
    """
    arr = as_array(z)
    if np.any(arr < ZERO_TOL):
        raise ZeroCoordinate(
            "clr_diversity needs positive coordinates: {}".format(arr))
    logs = np.log(arr)
    return arr * (arr @ logs - logs)


def _clr_unit_omega(arr):
    x = clr(arr)
    norm = np.linalg.norm(x)
    if norm < ZERO_TOL:
        return np.zeros_like(arr)
    return clr_diversity_omega(arr) / norm


def apply_clr_diversity(z, gamma):
    """Return ``CLR^-1((1 - gamma) CLR(z))``, the trajectory of the Aitchison
    diversity perturbation."""
    return clr_inverse((1.0 - float(gamma)) * clr(z))


def clr_diversity_reparam(z):
    """Return ``l = -||CLR(z)||_2`` and ``w = CLR(z) / ||CLR(z)||_2``.

    ``l`` moves at unit rate along the ``clr_diversity`` perturbation, which
    follows the Aitchison trajectory at unit speed in CLR norm.

    Raises
    ------
    ZeroCoordinate
        Raised on the boundary of the simplex.
    AtEndpoint
        Raised at the center.

    """
    arr = as_array(z)
    x = clr(arr)
    norm = np.linalg.norm(x)
    if norm < ZERO_TOL:
        raise AtEndpoint("The center has no CLR direction")
    return DirectionalReparam(-norm, center(arr.size), x / norm,
                              speed=np.abs(_clr_unit_omega(arr)).sum())


# ============================
# Generic reparametrizations
# ============================
def unit_reparam(endpoint_fn, z):
    """Return the unit-speed reparametrization ``l = -||E(z) - z||_1``."""
    arr = as_array(z)
    E = as_array(endpoint_fn(Composition._trusted(arr)))
    v, dist = _straight_line(E, arr)
    return DirectionalReparam(-dist, E, v, speed=1.0)


def _inverse_speed_integral(speed_fn, E, v, start, stop):
    # Returns the integral of 1/s(E - u v) for u from start to stop
    def integrand(u):
        s = float(speed_fn(E - u * v))
        if not s > MIN_SPEED:
            raise NonPositiveSpeed(
                "Speed {} at distance {} from the endpoint".format(s, u))
        return 1.0 / s
    value, _ = quad(integrand, start, stop, epsabs=QUAD_EPSABS,
                    limit=QUAD_LIMIT)
    return value


def reparam_from_speed(endpoint_fn, speed_fn, z, anchor=REPARAM_ANCHOR):
    """Return the derivative-isolating reparametrization of a perturbation
    with a given speed.

    ``l = t_w(delta)`` with ``delta = ||E(z) - z||_1`` and
    ``t_w(delta) = -integral_{anchor}^{delta} 1 / s(E - u v) du`` computed by
    adaptive quadrature, so that ``t_w(anchor) = 0``.

    Parameters
    ----------
    endpoint_fn : callable
        Maps a :class:`~CoPert.simplex.Composition` to its endpoint.
    speed_fn : callable
        Maps a coordinate array to the speed. It is evaluated along the ray
        through ``z``, between ``z`` and the anchor distance.
    z : Composition or array_like
    anchor : float, optional
        Distance from the endpoint at which ``l`` is 0.

    Returns
    -------
    reparam : DirectionalReparam

    Raises
    ------
    NonPositiveSpeed
        Raised if the speed is at most ``1e-12`` on the integration path.

    """
    arr = as_array(z)
    E = as_array(endpoint_fn(Composition._trusted(arr)))
    v, dist = _straight_line(E, arr)
    l = _inverse_speed_integral(speed_fn, E, v, dist, anchor)
    return DirectionalReparam(l, E, v, speed=speed_fn(arr))


def reparam_from_statistic(endpoint_fn, statistic_fn, z):
    """Return the reparametrization ``l = statistic(z)`` and the speed that
    makes it derivative-isolating.

    The speed is ``-1 / t'(delta)`` where ``t(u) = statistic(E - u v)`` and
    the slope is a central difference with step ``1e-6 * max(delta, 1)``.

    Raises
    ------
    NotDecreasing
        Raised if the statistic does not decrease along the ray at ``z``.

    """
    arr = as_array(z)
    E = as_array(endpoint_fn(Composition._trusted(arr)))
    v, dist = _straight_line(E, arr)
    h = FD_REL_STEP * max(dist, 1.0)
    slope = (statistic_fn(E - (dist + h) * v)
             - statistic_fn(E - (dist - h) * v)) / (2 * h)
    if not slope < 0:
        raise NotDecreasing(
            "Statistic has slope {} along the ray at {}".format(slope, arr))
    return DirectionalReparam(statistic_fn(arr), E, v, speed=-1.0 / slope)


# =================
# Reparametrization
# =================
def reparametrize(spec, z):
    """Map ``z`` to ``(l, w)``.

    For binary kinds ``l = 1{z = psi(z, 1)}`` and ``w = psi(z, 1)``. For
    directional kinds ``l`` is

    * ``cfi_unit``: ``-2 (1 - z^j)``
    * ``cfi_mult``: ``log(z^j / (1 - z^j))``
    * ``cdi_unit``: ``-||z_cen - z||_1``
    * ``cdi_gini``: ``1 - G(z)``
    * ``cai_unit``: ``-2 |z^A|``
    * ``cai_mult``: ``S log(|z^B| / |z^A|)`` with ``S = |z^A| + |z^B|``
      (``S = 1`` when ``A`` and ``B`` cover every coordinate)
    * ``clr_diversity``: ``-||CLR(z)||_2``

    and ``w`` is the endpoint with the direction.

    Returns
    -------
    reparam : DirectionalReparam or BinaryReparam

    Raises
    ------
    AtEndpoint
        Raised for a directional kind at its endpoint.
    LogOfZero
        Raised for ``cfi_mult`` when ``z^j`` is 0 or 1 and for ``cai_mult``
        when ``z^A`` or ``z^B`` is 0.

    """
    arr = _prepare(spec, z)
    kind = spec.kind
    if spec.is_binary:
        if kind == CKE:
            at_endpoint = abs(arr[spec.j - 1]) < ZERO_TOL
        else:
            at_endpoint = bool(np.all(np.abs(arr[spec.A.zero_based()])
                                      < ZERO_TOL))
        if at_endpoint:
            return BinaryReparam(1, Composition(z))
        return BinaryReparam(0, _endpoint_array(spec, arr))
    if kind == CLR_DIVERSITY:
        return clr_diversity_reparam(arr)
    if kind == CUSTOM:
        if spec.speed_mode == GIVEN_SPEED:
            return reparam_from_speed(spec.endpoint_fn, spec.speed_fn, arr,
                                      anchor=spec.anchor)
        return reparam_from_statistic(spec.endpoint_fn, spec.statistic_fn,
                                      arr)
    E = _endpoint_array(spec, arr)
    v, dist = _straight_line(E, arr)
    if kind == CFI_MULT:
        zj = arr[spec.j - 1]
        if zj < ZERO_TOL or 1.0 - zj < ZERO_TOL:
            raise LogOfZero(
                "log-odds of coordinate {} undefined at z^j={}".format(spec.j,
                                                                      zj))
        l = np.log(zj / (1.0 - zj))
    elif kind == CAI_MULT:
        a = arr[spec.A.zero_based()].sum()
        b = arr[spec.B.zero_based()].sum()
        if a < ZERO_TOL or b < ZERO_TOL:
            raise LogOfZero(
                "log-ratio undefined with |z^A|={} and |z^B|={}".format(a, b))
        l = (a + b) * np.log(b / a)
    elif kind == CDI_GINI:
        l = 1.0 - gini(arr)
    else:
        # Unit speed kinds
        l = -dist
    return DirectionalReparam(l, E, v, speed=_speed_array(spec, arr, v))


def _split_w(w):
    if isinstance(w, DirectionalReparam):
        return w.w_endpoint.values, w.w_direction
    w_endpoint, w_direction = w
    return as_array(w_endpoint), np.asarray(w_direction, dtype=float)


def _max_distance(E, v):
    # Largest u with E - u v still in the simplex
    positive = v > ZERO_TOL
    return float(np.min(E[positive] / v[positive]))


def _solve_distance(t, l, delta_max):
    lo = delta_max * 1e-9
    f_lo, f_hi = t(lo) - l, t(delta_max) - l
    if f_hi == 0:
        return delta_max
    if f_lo < 0 or f_hi > 0:
        raise OutOfImage("l={} is outside the image [{}, {}]".format(
            l, f_hi + l, f_lo + l))
    return brentq(lambda u: t(u) - l, lo, delta_max, xtol=1e-14, rtol=1e-14)


def inverse_reparametrize(spec, l, w):
    """Return the composition whose reparametrization is ``(l, w)``.

    Parameters
    ----------
    spec : EffectSpec
    l : float
    w : DirectionalReparam or tuple or Composition
        For directional kinds the pair ``(w_endpoint, w_direction)`` (a
        :class:`DirectionalReparam` is accepted). For binary kinds the
        endpoint; only ``l = 1`` can be inverted.

    Returns
    -------
    z : Composition

    Raises
    ------
    OutOfImage
        Raised if the reconstructed point leaves the simplex.

    """
    kind = spec.kind
    l = float(l)
    if spec.is_binary:
        if l == 1:
            return Composition(w)
        raise OutOfImage(
            "A binary reparametrization with l=0 is not invertible")
    E, v = _split_w(w)
    spec.check(E.size)
    if kind == CLR_DIVERSITY:
        return clr_inverse(-l * v)
    if kind in (CFI_UNIT, CDI_UNIT, CAI_UNIT):
        delta = -l
    elif kind == CFI_MULT:
        delta = 2.0 * (1.0 - expit(l))
    elif kind == CAI_MULT:
        total = E[spec.B.zero_based()].sum()
        delta = 2.0 * total * expit(-l / total)
    elif kind == CDI_GINI:
        delta = (1.0 - l) * 2.0 * E.size / np.abs(v[:, None] - v[None, :]).sum()
    elif spec.speed_mode == GIVEN_SPEED:
        def t(u):
            return _inverse_speed_integral(spec.speed_fn, E, v, u, spec.anchor)
        delta = _solve_distance(t, l, _max_distance(E, v))
    else:
        def t(u):
            return spec.statistic_fn(E - u * v)
        delta = _solve_distance(t, l, _max_distance(E, v))
    out = E - delta * v
    if np.any(out < -DOMAIN_TOL) or np.any(out > 1.0 + DOMAIN_TOL):
        raise OutOfImage("(l={}, w) maps outside the simplex: {}".format(l,
                                                                        out))
    out = np.clip(out, 0.0, 1.0)
    return Composition._trusted(out / out.sum())


def encode_w(spec, reparam):
    """Flatten ``w`` into regression features.

    Binary kinds use the endpoint. Directional kinds concatenate the
    endpoint and the direction, dropping the endpoint when it does not depend
    on ``z``.
    """
    if isinstance(reparam, BinaryReparam):
        return reparam.w.values.copy()
    if spec.has_constant_endpoint:
        return reparam.w_direction.copy()
    return np.concatenate([reparam.w_endpoint.values, reparam.w_direction])


def binary_well_defined(spec, Z):
    """Return the fraction of rows of ``Z`` that differ from their endpoint,
    i.e. the empirical ``P(Z != psi(Z, 1))``."""
    if not spec.is_binary:
        raise InvalidEffectSpec(
            "{} is not a binary effect".format(spec.to_text()))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    spec.check(Z.shape[1])
    if spec.kind == CKE:
        at_endpoint = np.abs(Z[:, spec.j - 1]) < ZERO_TOL
    else:
        at_endpoint = np.all(np.abs(Z[:, spec.A.zero_based()]) < ZERO_TOL,
                             axis=1)
    return float(np.mean(~at_endpoint))
