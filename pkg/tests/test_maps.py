import cmath
import math
import unittest

import numpy as np

from pressure_lab.config.settings import TreeSettings
from pressure_lab.core.enums import MapFamily, OrbitFate
from pressure_lab.core.errors import ConfigError, CriticalValueHit, OmittedValue
from pressure_lab.core.maps import (
    FATE_CODES, TranscendentalMap, classify_orbit, classify_orbits, default_start_point, derivative,
    evaluate, f_values, inverse_branches, log_iterate_spherical_derivative,
    log_spherical_derivative, nearest_preimage, preimage_grid, repelling_fixed_points,
    singular_orbit_report, spherical_derivative, spherical_distance, spherical_distance_array,
)
from pressure_lab.core.tree import PreimageTree


def direct_spherical_derivative(fmap, z):
    fz = complex(f_values(fmap, np.asarray([z]))[0])
    dz = complex(derivative(fmap, np.asarray([z]))[0])
    return (1 + abs(z) ** 2) * abs(dz) / (1 + abs(fz) ** 2)


class TestTranscendentalMap(unittest.TestCase):
    def test_zero_lambda_rejected(self):
        with self.assertRaises(ConfigError):
            TranscendentalMap.exp(0)

    def test_zexp_ignores_lambda(self):
        fmap = TranscendentalMap(MapFamily.ZEXP, 5.0)
        self.assertEqual(fmap.lam, 1 + 0j)

    def test_family_from_string(self):
        self.assertIs(TranscendentalMap('tan', 1.0).family, MapFamily.TAN)

    def test_singular_values(self):
        self.assertEqual(TranscendentalMap.exp(0.3).singular_values(), [0j])
        self.assertEqual(TranscendentalMap.sin(2.0).singular_values(), [2.0, -2.0])
        self.assertEqual(TranscendentalMap.tan(1.0).omitted_values(), [1j, -1j])
        self.assertAlmostEqual(TranscendentalMap.zexp().critical_values()[0].real, -1 / math.e)
        self.assertFalse(TranscendentalMap.tan(1.0).is_entire)


class TestSphericalDerivative(unittest.TestCase):
    def setUp(self):
        self.points = [0.3 + 0.2j, -1.1 + 2.5j, 2.0 - 0.7j, 0.01j]

    def test_matches_formula(self):
        for family in MapFamily:
            fmap = TranscendentalMap(family, 0.8)
            for z in self.points:
                expected = direct_spherical_derivative(fmap, z)
                self.assertAlmostEqual(spherical_derivative(fmap, z) / expected, 1.0, places=10)

    def test_known_values(self):
        self.assertAlmostEqual(spherical_derivative(TranscendentalMap.exp(1.0), 0j), 0.5, places=14)
        self.assertAlmostEqual(spherical_derivative(TranscendentalMap.zexp(), 0j), 1.0, places=14)
        # pi/2 is a critical point of sin
        self.assertAlmostEqual(spherical_derivative(TranscendentalMap.sin(1.0), math.pi / 2), 0.0,
                               places=14)

    def test_large_real_part_does_not_overflow(self):
        fmap = TranscendentalMap.exp(1.0)
        value = log_spherical_derivative(fmap, np.asarray([800.0 + 1j]))[0]
        self.assertTrue(np.isfinite(value))
        # e^z dominates: f* ~ |z|^2 / |e^z|
        self.assertAlmostEqual(value, math.log(1 + abs(800 + 1j) ** 2) - 800.0, places=6)

    def test_tan_finite_at_pole(self):
        fmap = TranscendentalMap.tan(1.0)
        values = log_spherical_derivative(fmap, np.asarray([math.pi / 2, math.pi / 2 + 1e-9]))
        self.assertTrue(np.all(np.isfinite(values)))
        self.assertAlmostEqual(values[0], values[1], places=6)

    def test_tan_switch_is_continuous(self):
        fmap = TranscendentalMap.tan(1.0)
        # |tan| crosses 1e8 between these two points
        z = np.asarray([math.pi / 2 - 1.0001e-8, math.pi / 2 - 0.9999e-8])
        values = log_spherical_derivative(fmap, z)
        self.assertAlmostEqual(values[0], values[1], places=4)


class TestInverseBranches(unittest.TestCase):
    def test_exp_log_branches_of_e(self):
        fmap = TranscendentalMap.exp(1.0)
        branches = dict((b.k, z) for b, z in inverse_branches(fmap, math.e, 1))
        self.assertAlmostEqual(abs(branches[0] - 1), 0.0, places=12)
        self.assertAlmostEqual(abs(branches[1] - (1 + 2j * math.pi)), 0.0, places=12)
        self.assertAlmostEqual(abs(branches[-1] - (1 - 2j * math.pi)), 0.0, places=12)

    def test_sin_zeros(self):
        zs = [z for _, z in inverse_branches(TranscendentalMap.sin(1.0), 0j, 1)]
        for target in (0.0, math.pi, -math.pi):
            self.assertTrue(any(abs(z - target) < 1e-12 for z in zs))

    def test_round_trip(self):
        rng = np.random.default_rng(7)
        w = rng.normal(size=20) * 3 + 1j * rng.normal(size=20) * 3
        for family in MapFamily:
            fmap = TranscendentalMap(family, 0.7 + 0.1j)
            Z, valid = preimage_grid(fmap, w, np.arange(-3, 4))
            image = f_values(fmap, Z)
            err = np.abs(image - w[:, None]) / (1 + np.abs(w[:, None]))
            self.assertTrue(np.all(err[valid] < 1e-11), family)

    def test_omitted_values_raise(self):
        with self.assertRaises(OmittedValue):
            inverse_branches(TranscendentalMap.exp(1.0), 0j, 2)
        with self.assertRaises(OmittedValue):
            inverse_branches(TranscendentalMap.tan(2.0), 2j, 2)

    def test_critical_value_raises(self):
        with self.assertRaises(CriticalValueHit):
            inverse_branches(TranscendentalMap.sin(1.0), 1.0, 2)

    def test_zexp_zero_has_one_preimage(self):
        branches = inverse_branches(TranscendentalMap.zexp(), 0j, 3)
        self.assertEqual(len(branches), 1)
        self.assertEqual(branches[0][1], 0j)

    def test_negative_cutoff(self):
        with self.assertRaises(ValueError):
            inverse_branches(TranscendentalMap.exp(1.0), 1.0, -1)

    def test_nearest_preimage_continues_branch(self):
        fmap = TranscendentalMap.exp(1.0)
        branch, z = nearest_preimage(fmap, math.e * cmath.exp(0.1j), 1 + 2j * math.pi)
        self.assertEqual(branch.k, 1)
        self.assertAlmostEqual(abs(z - (1 + 0.1j + 2j * math.pi)), 0.0, places=12)


class TestChainRule(unittest.TestCase):
    def test_tree_log_derivative_matches_forward_orbit(self):
        fmap = TranscendentalMap.exp(0.3)
        tree = PreimageTree(fmap, 1.0 + 0.5j, 1.5, 3, 4,
                            settings=TreeSettings(beam_width=None, adaptive_cutoff=False)).build()
        level = tree.level(3)
        for i in range(0, level.size, max(1, level.size // 10)):
            z = complex(level.points[i])
            direct = log_iterate_spherical_derivative(fmap, z, 3)
            self.assertLess(abs(direct - level.log_deriv[i]), 1e-9 * max(1.0, abs(direct)))


class TestOrbits(unittest.TestCase):
    def setUp(self):
        self.fmap = TranscendentalMap.exp(0.3)

    def test_attracted_and_escaping(self):
        self.assertIs(classify_orbit(self.fmap, 0j, 40), OrbitFate.BOUNDED_RETURNS)
        self.assertIs(classify_orbit(self.fmap, 10.0 + 0j, 40), OrbitFate.ESCAPING)

    def test_vectorised_shape(self):
        codes = classify_orbits(self.fmap, np.zeros((2, 3), dtype=complex), 20)
        self.assertEqual(codes.shape, (2, 3))
        self.assertTrue(all(FATE_CODES[c] is OrbitFate.BOUNDED_RETURNS for c in codes.ravel()))

    def test_tan_pole(self):
        fmap = TranscendentalMap.tan(1.0)
        self.assertIs(classify_orbit(fmap, complex(math.pi / 2), 10), OrbitFate.HIT_POLE)

    def test_invalid_radii(self):
        with self.assertRaises(ValueError):
            classify_orbits(self.fmap, [0j], 10, escape_radius=1.0, bound_radius=2.0)

    def test_singular_orbit_report(self):
        report = singular_orbit_report(self.fmap)
        self.assertTrue(report.hyperbolic)
        self.assertEqual(report.verdict, 'HYPERBOLIC')
        cycle = report.attracting_cycles[0]
        self.assertEqual(cycle.period, 1)
        self.assertLess(abs(cycle.multiplier), 1.0)
        self.assertEqual(report.to_dict()['verdict'], 'HYPERBOLIC')

    def test_non_hyperbolic(self):
        # 0 -> 1 -> e -> ... escapes
        self.assertFalse(singular_orbit_report(TranscendentalMap.exp(1.0)).hyperbolic)

    def test_zexp_singular_orbits(self):
        report = singular_orbit_report(TranscendentalMap.zexp())
        self.assertFalse(report.hyperbolic)
        origin = next(o for o in report.orbits if o.value == 0)
        self.assertTrue(origin.fixed)
        self.assertEqual(origin.multiplier, 1.0)
        self.assertIsNone(origin.cycle)

    def test_zexp_start_point_skips_parabolic_origin(self):
        fmap = TranscendentalMap.zexp()
        z0 = default_start_point(fmap)
        self.assertGreater(abs(z0), 1.0)
        self.assertGreater(abs(complex(derivative(fmap, np.asarray([z0]))[0])), 1.0 + 1e-3)
        for z in repelling_fixed_points(fmap, count=4):
            self.assertGreater(abs(z), 1e-3)

    def test_repelling_fixed_points(self):
        points = repelling_fixed_points(self.fmap, count=3)
        self.assertGreaterEqual(len(points), 2)
        for z in points:
            fz = complex(f_values(self.fmap, np.asarray([z]))[0])
            self.assertLess(abs(fz - z), 1e-9 * (1 + abs(z)))
            self.assertGreater(abs(complex(derivative(self.fmap, np.asarray([z]))[0])), 1.0)


class TestSphericalDistance(unittest.TestCase):
    def test_infinity(self):
        self.assertAlmostEqual(spherical_distance(0j, evaluate(TranscendentalMap.exp(1.0), 1000.0)),
                               math.pi)
        d = spherical_distance_array(np.asarray([complex(np.inf, 0), 0j]), [complex(np.inf, 0)])
        self.assertEqual(d[0], 0.0)
        self.assertAlmostEqual(d[1], math.pi)

    def test_symmetric(self):
        self.assertAlmostEqual(spherical_distance(1 + 1j, -2j), spherical_distance(-2j, 1 + 1j))


if __name__ == '__main__':
    unittest.main()
