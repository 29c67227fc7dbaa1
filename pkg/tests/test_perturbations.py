import logging
import unittest
from logging import NullHandler

import numpy as np
from numpy.testing import assert_allclose

from CoPert import perturbations as pt
from CoPert.exceptions import (AtEndpoint, InvalidEffectSpec, LogOfZero,
                               NotDecreasing, OutOfDomain)
from CoPert.perturbations import EffectSpec, parse_effect_spec
from CoPert.simplex import Composition, center, closure, gini, vertex
from CoPert.utils import make_rng
from pyutils.genutils import get_qualname
from pyutils.testutils import TestBase

logger = logging.getLogger(__name__)
logger.addHandler(NullHandler())

DIRECTIONAL_TEXTS = ["cfi_unit:1", "cfi_mult:2", "cdi_unit", "cdi_gini",
                     "cai_unit:A=1;B=2,3", "cai_mult:A=1;B=2",
                     "cai_mult:A=1,2;B=3,4", "clr_diversity"]


def smooth_test_function(z):
    z = np.asarray(z, dtype=float)
    return float(np.sum(np.arange(1, z.size + 1) * z ** 2)
                 + np.exp(z[0] * z[1]))


def cox_spec(reference, k):
    """Straight line along ``e_k - reference_{-k} / (1 - reference^k)``."""
    reference = np.asarray(reference, dtype=float)
    omega = -reference / (1 - reference[k - 1])
    omega[k - 1] = 1.0
    others = np.arange(reference.size) != k - 1

    def endpoint_fn(z):
        arr = z.values
        t_max = np.min(arr[others] / -omega[others])
        return arr + t_max * omega

    return EffectSpec("custom", endpoint_fn=endpoint_fn,
                      speed_fn=lambda arr: 2.0, name="cox:{}".format(k))


class TestPerturbations(TestBase):
    TEST_MODULE_QUALNAME = get_qualname(pt)
    LOGGER_NAME = __name__
    SHOW_FIRST_CHARS_IN_LOG = 0
    CREATE_SANDBOX_TMP_DIR = False
    CREATE_DATA_TMP_DIR = False

    def setUp(self):
        super().setUp()
        self.rng = make_rng(7)

    def _random_interior(self, d):
        return closure(0.05 + self.rng.random(d))

    def test_parse_effect_spec(self):
        self.log_test_method_name()
        extra_msg = "Case where text forms round-trip"
        self.log_main_message(extra_msg=extra_msg)
        for text in DIRECTIONAL_TEXTS + ["cke:3", "cae:A=1;B=2,3"]:
            spec = parse_effect_spec(text, 4)
            self.assertEqual(spec.to_text(), text,
                             msg="{} should round-trip".format(text))
        self.assertEqual(parse_effect_spec("CAI_MULT:A=2,1;B=3").to_text(),
                         "cai_mult:A=1,2;B=3",
                         msg="The canonical form sorts the sets")
        for bad in ["cfi_mult", "cke:0", "foo:1", "cai_unit:A=1;B=1",
                    "cdi_gini:2", "cae:A=1"]:
            with self.assertRaises(InvalidEffectSpec,
                                   msg="{} should be rejected".format(bad)):
                parse_effect_spec(bad, 3)
        with self.assertRaises(InvalidEffectSpec, msg="j=4 is out of [3]"):
            parse_effect_spec("cfi_unit:4", 3)

    def test_expand_effect_specs(self):
        self.log_test_method_name()
        specs = pt.expand_effect_specs(["cfi_mult:all", "cdi_gini"], 3)
        self.assertEqual([s.to_text() for s in specs],
                         ["cfi_mult:1", "cfi_mult:2", "cfi_mult:3",
                          "cdi_gini"], msg="Wrong expansion")
        with self.assertRaises(InvalidEffectSpec,
                               msg="Only indexed kinds accept 'all'"):
            pt.expand_effect_specs(["cdi_gini:all"], 3)

    def test_endpoints(self):
        self.log_test_method_name()
        z = Composition([0.2, 0.3, 0.5])
        assert_allclose(
            pt.endpoint(parse_effect_spec("cdi_unit"), z).values,
            [1 / 3] * 3, atol=1e-12, err_msg="cdi_unit goes to the center")
        assert_allclose(
            pt.endpoint(parse_effect_spec("cfi_mult:2"), z).values,
            [0, 1, 0], atol=1e-12, err_msg="cfi_mult:2 goes to e_2")
        assert_allclose(
            pt.endpoint(parse_effect_spec("cae:A=1;B=2"), z).values,
            [0, 0.5, 0.5], atol=1e-12, err_msg="cae goes to the amalgamation")
        assert_allclose(
            pt.endpoint(parse_effect_spec("cke:1"), z).values,
            [0, 0.375, 0.625], atol=1e-12, err_msg="cke goes to the knock-out")

    def test_directions(self):
        self.log_test_method_name()
        direction = pt.direction(parse_effect_spec("cfi_unit:1"),
                                 [0.5, 0.25, 0.25])
        assert_allclose(direction, [0.5, -0.25, -0.25],
                        atol=1e-12, err_msg="Wrong cfi direction")
        direction = pt.direction(parse_effect_spec("cdi_unit"), vertex(1, 3))
        assert_allclose(direction, [-0.5, 0.25, 0.25],
                        atol=1e-12, err_msg="Wrong cdi direction")
        for text in DIRECTIONAL_TEXTS:
            v = pt.direction(parse_effect_spec(text), self._random_interior(4))
            self.assertAlmostEqual(float(v.sum()), 0.0, delta=1e-12,
                                   msg="{}: directions sum to 0".format(text))
        with self.assertRaises(AtEndpoint, msg="The center is the endpoint"):
            pt.direction(parse_effect_spec("cdi_unit"), center(3))

    def test_speeds(self):
        self.log_test_method_name()
        spec = parse_effect_spec("cfi_mult:1")
        self.assertAlmostEqual(pt.speed(spec, [0.5, 0.25, 0.25]), 0.5,
                               delta=1e-12, msg="2 z(1-z) at z=0.5")
        self.assertEqual(pt.speed(spec, [0, 0.5, 0.5]), 0.0,
                         msg="cfi_mult has zero speed at z^j=0")
        spec = parse_effect_spec("cai_mult:A=1;B=2")
        self.assertAlmostEqual(pt.speed(spec, [0.5, 0.5, 0.0]), 0.5,
                               delta=1e-12, msg="Wrong cai_mult speed")
        with self.assertRaises(InvalidEffectSpec, msg="Binary: no speed"):
            pt.speed(parse_effect_spec("cke:1"), [0.5, 0.5])

    def test_apply(self):
        self.log_test_method_name()
        extra_msg = "Case where perturbations move along their " \
            "trajectories"
        self.log_main_message(extra_msg=extra_msg)
        z = Composition([0.2, 0.3, 0.5])
        for text in DIRECTIONAL_TEXTS[:-2] + ["cke:1"]:
            self.assertEqual(pt.apply(parse_effect_spec(text, 3), z, 0), z,
                             msg="{}: gamma=0 gives z".format(text))
        assert_allclose(
            pt.apply(parse_effect_spec("cke:1"), z, 1).values,
            [0, 0.375, 0.625], atol=1e-12, err_msg="Wrong knock-out")
        spec = parse_effect_spec("cdi_unit")
        assert_allclose(pt.apply(spec, vertex(1, 3), 4 / 3).values,
                        [1 / 3] * 3, atol=1e-12,
                        err_msg="Unit speed reaches the center at "
                                "its distance")
        with self.assertRaises(OutOfDomain, msg="Past the simplex"):
            pt.apply(parse_effect_spec("cfi_unit:1"), z, 5.0)
        with self.assertRaises(OutOfDomain, msg="Binary: gamma in {0, 1}"):
            pt.apply(parse_effect_spec("cke:1"), z, 0.5)

    def test_omega(self):
        self.log_test_method_name()
        spec = parse_effect_spec("cfi_unit:1")
        assert_allclose(pt.omega(spec, [0.5, 0.25, 0.25]),
                        [0.5, -0.25, -0.25],
                        atol=1e-12, err_msg="Unit speed times the direction")
        spec = parse_effect_spec("cfi_mult:2")
        assert_allclose(pt.omega(spec, vertex(2, 3)), [0, 0, 0],
                        atol=1e-12, err_msg="Zero derivative at the endpoint")
        self.assertTrue(pt.is_zero_speed(spec, vertex(2, 3)),
                        msg="e_2 is a zero-speed point")
        self.assertFalse(pt.is_zero_speed(parse_effect_spec("cke:1"),
                                          [0, 0.5, 0.5]),
                         msg="Binary kinds never have zero speed")
        for text in ("cai_mult:A=1;B=2", "cai_unit:A=1;B=2"):
            spec = parse_effect_spec(text)
            assert_allclose(pt.omega(spec, [0.4, 0, 0.6]), np.zeros(3),
                            atol=0, err_msg="{}: B has no mass".format(text))
            self.assertTrue(pt.is_zero_speed(spec, [0.4, 0, 0.6]),
                            msg="{}: z^B = 0 is a zero-speed "
                                "point".format(text))
        for text in DIRECTIONAL_TEXTS[:-1]:
            spec = parse_effect_spec(text)
            z = self._random_interior(4)
            self.assertAlmostEqual(
                float(np.abs(pt.omega(spec, z)).sum()), pt.speed(spec, z),
                delta=1e-12, msg="{}: |omega|_1 is the speed".format(text))

    def test_clr_feature_omega_matches_cfi_mult(self):
        self.log_test_method_name()
        z = self._random_interior(5)
        for j in range(1, 6):
            assert_allclose(
                pt.clr_feature_omega(z, j),
                pt.omega(EffectSpec("cfi_mult", j=j), z), atol=1e-12,
                err_msg="cfi_mult:{} is the CLR feature "
                        "perturbation".format(j))

    def test_reparametrize_examples(self):
        self.log_test_method_name()
        reparam = pt.reparametrize(parse_effect_spec("cfi_mult:1"),
                                   [0.5, 0.25, 0.25])
        self.assertAlmostEqual(reparam.l, 0.0, delta=1e-12,
                               msg="Balanced odds give l=0")
        reparam = pt.reparametrize(parse_effect_spec("cdi_gini"),
                                   [0.5, 0.5, 0.0])
        self.assertAlmostEqual(reparam.l, 2 / 3, delta=1e-12,
                               msg="l = 1 - G")
        reparam = pt.reparametrize(parse_effect_spec("cke:1"), [0, 0.4, 0.6])
        self.assertEqual(reparam.l, 1, msg="Already knocked out")
        self.assertEqual(reparam.w, Composition([0, 0.4, 0.6]),
                         msg="w = z at the endpoint")
        reparam = pt.reparametrize(parse_effect_spec("cke:1"), [0.2, 0.3, 0.5])
        self.assertEqual(reparam.l, 0, msg="Not knocked out")
        with self.assertRaises(LogOfZero, msg="log-odds of 0"):
            pt.reparametrize(parse_effect_spec("cfi_mult:1"), [0, 0.5, 0.5])

    def test_round_trips(self):
        self.log_test_method_name()
        extra_msg = "Case where the inverse reparametrization " \
            "recovers z"
        self.log_main_message(extra_msg=extra_msg)
        for text in DIRECTIONAL_TEXTS:
            spec = parse_effect_spec(text)
            for _ in range(20):
                z = self._random_interior(4)
                reparam = pt.reparametrize(spec, z)
                back = pt.inverse_reparametrize(spec, reparam.l, reparam)
                assert_allclose(
                    back.values, z.values, atol=1e-9,
                    err_msg="{} should round-trip".format(text))
        spec = parse_effect_spec("cfi_mult:1")
        reparam = pt.reparametrize(spec, [0.5, 0.25, 0.25])
        assert_allclose(
            pt.inverse_reparametrize(spec, 0.0, reparam).values,
            [0.5, 0.25, 0.25], atol=1e-12, err_msg="Logit inversion")
        spec = parse_effect_spec("cke:1")
        self.assertEqual(pt.inverse_reparametrize(spec, 1, [0, 0.4, 0.6]),
                         Composition([0, 0.4, 0.6]),
                         msg="l=1 inverts to the endpoint")

    def test_derivative_isolation(self):
        self.log_test_method_name()
        extra_msg = "Case where the perturbation's derivative " \
            "equals the derivative in l"
        self.log_main_message(extra_msg=extra_msg)
        h = 1e-6
        for text in DIRECTIONAL_TEXTS:
            spec = parse_effect_spec(text)
            for _ in range(5):
                z = self._random_interior(4)
                along = (smooth_test_function(pt.apply(spec, z, h).values)
                         - smooth_test_function(z.values)) / h
                reparam = pt.reparametrize(spec, z)
                moved = pt.inverse_reparametrize(spec, reparam.l + h, reparam)
                in_l = (smooth_test_function(moved.values)
                        - smooth_test_function(z.values)) / h
                self.assertAlmostEqual(
                    along, in_l, delta=1e-4 * max(1.0, abs(along)),
                    msg="{}: derivatives differ".format(text))

    def test_unit_rate_statistics(self):
        self.log_test_method_name()
        h = 1e-6
        z = self._random_interior(5)
        spec = parse_effect_spec("cdi_gini")
        rate = ((1 - gini(pt.apply(spec, z, h))) - (1 - gini(z))) / h
        self.assertAlmostEqual(rate, 1.0, delta=1e-4,
                               msg="1 - G moves at unit rate")
        spec = parse_effect_spec("cfi_mult:2")
        moved = pt.apply(spec, z, h).values[1]
        rate = (np.log(moved / (1 - moved)) - np.log(z[1] / (1 - z[1]))) / h
        self.assertAlmostEqual(rate, 1.0, delta=1e-4,
                               msg="The log-odds move at unit rate")

    def test_clr(self):
        self.log_test_method_name()
        assert_allclose(pt.clr(center(4)), np.zeros(4),
                        atol=1e-12, err_msg="CLR of the center is 0")
        assert_allclose(pt.clr_inverse(np.zeros(3)).values,
                        [1 / 3] * 3, atol=1e-12, err_msg="Inverse of 0")
        z = self._random_interior(6)
        self.assertAlmostEqual(float(pt.clr(z).sum()), 0.0, delta=1e-12,
                               msg="CLR coordinates sum to 0")
        h = 1e-7
        numeric = (pt.apply_clr_diversity(z, h).values - z.values) / h
        assert_allclose(numeric, pt.clr_diversity_omega(z),
                        atol=1e-5,
                        err_msg="Wrong Aitchison derivative")
        assert_allclose(pt.clr_diversity_omega(center(3)),
                        np.zeros(3), atol=1e-12,
                        err_msg="No move at the center")
        near = closure([1 / 3 + 1e-6, 1 / 3, 1 / 3 - 1e-6])
        reparam = pt.clr_diversity_reparam(near)
        self.assertTrue(-1e-4 < reparam.l < 0, msg="l near 0 at the center")

    def test_reparam_from_speed(self):
        self.log_test_method_name()
        extra_msg = "Case where the quadrature matches the closed " \
            "forms"
        self.log_main_message(extra_msg=extra_msg)
        for _ in range(20):
            z = self._random_interior(3)

            def to_e1(c):
                return vertex(1, 3)
            unit = pt.reparam_from_speed(to_e1, lambda arr: 1.0, z)
            delta = 2 * (1 - z[0])
            self.assertAlmostEqual(unit.l, 1 - delta, delta=1e-8,
                                   msg="Unit speed integrates to 1 - delta")
            mult = pt.reparam_from_speed(
                to_e1, lambda arr: 2 * arr[0] * (1 - arr[0]), z)
            self.assertAlmostEqual(mult.l, np.log(z[0] / (1 - z[0])),
                                   delta=1e-6, msg="Multiplicative speed "
                                                   "gives the log-odds")

    def test_reparam_from_statistic(self):
        self.log_test_method_name()
        for _ in range(10):
            z = self._random_interior(4)
            reparam = pt.reparam_from_statistic(
                lambda c: center(4), lambda arr: 1 - gini(arr), z)
            expected = pt.speed(parse_effect_spec("cdi_gini"), z)
            self.assertAlmostEqual(reparam.speed, expected,
                                   delta=1e-5 * max(1, expected),
                                   msg="Implied speed of 1 - G")
        E = center(3).values
        z = closure([0.6, 0.3, 0.1])
        dist = np.abs(E - z.values).sum()
        reparam = pt.reparam_from_statistic(
            lambda c: E, lambda arr: -np.abs(E - arr).sum(), z)
        self.assertAlmostEqual(reparam.speed, 1.0, delta=1e-6,
                               msg="-delta has unit speed")
        reparam = pt.reparam_from_statistic(
            lambda c: E, lambda arr: -np.abs(E - arr).sum() ** 2, z)
        self.assertAlmostEqual(reparam.speed, 1 / (2 * dist), delta=1e-5,
                               msg="-delta^2 has speed 1/(2 delta)")
        with self.assertRaises(NotDecreasing, msg="Increasing statistic"):
            pt.reparam_from_statistic(
                lambda c: E, lambda arr: np.abs(E - arr).sum(), z)

    def test_cox_direction_effect(self):
        self.log_test_method_name()
        extra_msg = "Case where a custom straight-line " \
            "perturbation has the Cox effect"
        self.log_main_message(extra_msg=extra_msg)
        reference = np.array([0.2, 0.3, 0.5])
        beta = np.array([1.0, 2.0, -1.6])
        self.assertAlmostEqual(float(beta @ reference), 0.0, delta=1e-12,
                               msg="beta should vanish at the reference")
        spec = cox_spec(reference, 1)
        expected = beta[0] / (1 - reference[0])
        h = 1e-6
        for _ in range(10):
            z = self._random_interior(3)
            rate = (beta @ pt.apply(spec, z, h).values - beta @ z.values) / h
            self.assertAlmostEqual(rate, expected, delta=1e-6,
                                   msg="Wrong Cox derivative")
            reparam = pt.reparametrize(spec, z)
            back = pt.inverse_reparametrize(spec, reparam.l, reparam)
            assert_allclose(back.values, z.values, atol=1e-8,
                            err_msg="Custom spec should round-trip")

    def test_log_contrast_effect(self):
        self.log_test_method_name()
        beta = np.array([2.0, -1.0, 0.0, -0.5, -0.5])
        h = 1e-6
        for _ in range(5):
            z = self._random_interior(5)
            for j in range(1, 6):
                spec = EffectSpec("cfi_mult", j=j)
                moved = pt.apply(spec, z, h).values
                rate = (beta @ np.log(moved) - beta @ np.log(z.values)) / h
                self.assertAlmostEqual(rate, beta[j - 1], delta=1e-4,
                                       msg="cfi_mult:{} is the log-contrast "
                                           "coefficient".format(j))

    def test_binary_well_defined(self):
        self.log_test_method_name()
        Z = np.array([[0, 0.5, 0.5], [0.2, 0.3, 0.5], [0.1, 0.1, 0.8],
                      [0, 1, 0]])
        self.assertEqual(pt.binary_well_defined(parse_effect_spec("cke:1"), Z),
                         0.5, msg="Half the rows are not knocked out")
        with self.assertRaises(InvalidEffectSpec, msg="cdi is directional"):
            pt.binary_well_defined(parse_effect_spec("cdi_unit"), Z)

    def test_permutation_equivariance(self):
        self.log_test_method_name()
        z = Composition([0.1, 0.2, 0.3, 0.4])
        perm = [2, 0, 3, 1]
        permuted = Composition(z.values[perm])
        # Coordinate 1 of z sits at position 2 (1-indexed) of the permuted z
        new_j = perm.index(0) + 1
        for kind in ("cfi_unit", "cfi_mult"):
            a = pt.reparametrize(EffectSpec(kind, j=1), z)
            b = pt.reparametrize(EffectSpec(kind, j=new_j), permuted)
            self.assertAlmostEqual(a.l, b.l, delta=1e-12,
                                   msg="{}: l is permutation invariant"
                                       "".format(kind))
            assert_allclose(a.w_direction[perm], b.w_direction,
                            atol=1e-12,
                            err_msg="Directions should permute")
        for text in ("cdi_unit", "cdi_gini"):
            spec = parse_effect_spec(text)
            self.assertAlmostEqual(pt.reparametrize(spec, z).l,
                                   pt.reparametrize(spec, permuted).l,
                                   delta=1e-12,
                                   msg="{}: l is permutation invariant"
                                       "".format(text))


if __name__ == '__main__':
    unittest.main()
