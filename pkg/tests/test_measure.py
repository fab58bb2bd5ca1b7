import json
import math
import unittest

import numpy as np
import pytest

from pressure_lab.config.settings import Config, TestingConfig, TreeSettings
from pressure_lab.core.enums import BRule, SupportVerdict
from pressure_lab.core.errors import InfiniteMass, NonInjectiveTestSet
from pressure_lab.core.maps import TranscendentalMap, repelling_fixed_points
from pressure_lab.core.measure import (
    RESIDUAL_COLUMNS, TAIL_COLUMNS, BSequence, ConformalMetric, DensityRatio, TestDisc,
    area_density_ratios, build_patterson_sullivan, conformality_residual, default_test_panel,
    dirac, dirac_panel, exceptional_points, from_tree, julia_disc_panel, postsingular_accumulation,
    reweight_metric, support_dichotomy_check, tail_profile, weak_limit_approximation,
)
from pressure_lab.core.pressure import find_bowen_zero
from pressure_lab.core.tree import PreimageTree

EXACT = TreeSettings(beam_width=None, adaptive_cutoff=False)
FAST = TreeSettings.from_config(TestingConfig, beam_width=200)
Z0 = 1 + 0.5j


class TestBSequence(unittest.TestCase):
    def test_rules(self):
        self.assertEqual(float(BSequence().b(5)), 1.0)
        self.assertAlmostEqual(float(BSequence.poly(2.0).b(3)), 9.0)
        self.assertEqual(BSequence.poly(2.0).label, 'poly(2)')
        self.assertIs(BSequence().rule, BRule.CONSTANT_ONE)


class TestPattersonSullivan(unittest.TestCase):
    def setUp(self):
        self.fmap = TranscendentalMap.exp(0.3)
        self.tree = PreimageTree(self.fmap, Z0, 1.3, 3, 6, settings=EXACT).build()

    def test_probability_measure(self):
        for b in (BSequence(), BSequence.poly(1.0)):
            measure = from_tree(self.tree, 0.1, b)
            self.assertAlmostEqual(measure.total_mass, 1.0, delta=1e-9)
            self.assertEqual(set(measure.layer_masses()), {1, 2, 3})

    def test_layer_ratio(self):
        s, b = 0.2, BSequence.poly(1.0)
        layers = from_tree(self.tree, s, b).layer_masses()
        for n in (1, 2):
            expected = (b.b(n) * math.exp(-n * s + self.tree.log_sum(n))
                        / (b.b(n + 1) * math.exp(-(n + 1) * s + self.tree.log_sum(n + 1))))
            self.assertAlmostEqual(layers[n] / layers[n + 1] / expected, 1.0, places=10)

    def test_atom_weights(self):
        s = 0.1
        measure = from_tree(self.tree, s)
        level = self.tree.level(2)
        atoms = measure.log_weights[measure.depths == 2]
        expected = -2 * s - self.tree.t * level.log_deriv - measure.log_normalizer
        np.testing.assert_allclose(atoms, expected, rtol=0, atol=1e-12)

    def test_atoms_are_tree_endpoints(self):
        measure = from_tree(self.tree, 0.1)
        endpoints = np.concatenate([self.tree.level(n).points for n in (1, 2, 3)])
        np.testing.assert_array_equal(measure.locations, endpoints)

    def test_invalid_s(self):
        with self.assertRaises(ValueError):
            from_tree(self.tree, 0.0)

    def test_build_and_frame(self):
        measure = build_patterson_sullivan(self.fmap, 1.3, 0.1, Z0, BSequence(), 3, 6,
                                           settings=EXACT)
        frame = measure.to_frame()
        self.assertEqual(list(frame.columns), ['location_re', 'location_im', 'depth', 'weight'])
        self.assertEqual(len(frame), measure.size)
        self.assertEqual(measure.provenance()['params']['s'], 0.1)


class TestMetrics(unittest.TestCase):
    def setUp(self):
        self.fmap = TranscendentalMap.exp(0.3)
        tree = PreimageTree(self.fmap, Z0, 1.3, 2, 6, settings=EXACT).build()
        self.measure = from_tree(tree, 0.1)

    def test_reweight_round_trip(self):
        ratio = DensityRatio(ConformalMetric.spherical(), ConformalMetric.power(3.0), 1.3)
        there = reweight_metric(self.measure, 1.3, ratio)
        back = reweight_metric(there, 1.3, ratio.inverse())
        self.assertAlmostEqual(there.total_mass, 1.0, places=12)
        np.testing.assert_allclose(back.weights, self.measure.weights, rtol=1e-12, atol=1e-15)
        self.assertEqual(there.params.metric, 'power(3)')

    def test_plain_callable(self):
        reweighted = reweight_metric(self.measure, 1.3, lambda z: np.ones(np.shape(z)))
        np.testing.assert_allclose(reweighted.weights, self.measure.weights, rtol=1e-12)

    def test_infinite_mass(self):
        with self.assertRaises(InfiniteMass):
            reweight_metric(self.measure, 1.3, lambda z: np.full(np.shape(z), np.inf))
        with self.assertRaises(InfiniteMass):
            reweight_metric(self.measure, 1.3, lambda z: np.full(np.shape(z), 1e300))

    def test_metric_derivatives(self):
        z = np.asarray([0.5 + 0.5j])
        euclid = ConformalMetric.euclidean().log_derivative(self.fmap, z)[0]
        self.assertAlmostEqual(euclid, math.log(0.3) + 0.5)
        with self.assertRaises(ValueError):
            ConformalMetric('hyperbolic')


class TestConformality(unittest.TestCase):
    def test_dirac_zexp(self):
        fmap = TranscendentalMap.zexp()
        for t in (0.5, 1.0, 2.0):
            report = conformality_residual(dirac(0j, t), fmap, dirac_panel())
            self.assertEqual(len(report.entries), 5)
            self.assertEqual(report.max_residual, 0.0)
            self.assertTrue(all(e.atoms_in_image == 1 for e in report.entries))

    def test_dirac_is_not_conformal_for_exp(self):
        fmap = TranscendentalMap.exp(0.3)
        report = conformality_residual(dirac(0.4 + 0j, 1.0), fmap, [TestDisc(0.4 + 0j, 0.05)])
        self.assertGreater(report.max_residual, 0.0)

    def test_non_injective_disc(self):
        fmap = TranscendentalMap.exp(0.3)
        with self.assertRaises(NonInjectiveTestSet):
            conformality_residual(dirac(0j, 1.0), fmap, [TestDisc(0j, 10.0)])

    def test_panel_on_patterson_sullivan(self):
        fmap = TranscendentalMap.exp(0.3)
        measure = from_tree(PreimageTree(fmap, Z0, 1.3, 4, 8, settings=FAST).build(), 0.1)
        panel = default_test_panel(measure, fmap, size=3)
        self.assertGreater(len(panel), 0)
        for i, a in enumerate(panel):
            for b in panel[i + 1:]:
                self.assertGreaterEqual(abs(a.center - b.center), 2 * 0.25)
        report = conformality_residual(measure, fmap, panel)
        frame = report.to_frame()
        self.assertEqual(list(frame.columns), RESIDUAL_COLUMNS)
        self.assertTrue(np.all(np.isfinite(frame['residual'])))
        self.assertTrue(np.all(frame['s'] == 0.1))


class TestTails(unittest.TestCase):
    def setUp(self):
        fmap = TranscendentalMap.exp(0.3)
        self.measure = from_tree(PreimageTree(fmap, Z0, 1.3, 3, 30, settings=FAST).build(), 0.1)

    def test_profile(self):
        profile = tail_profile(self.measure, 12)
        self.assertEqual(list(profile.ks), list(range(1, 13)))
        self.assertTrue(np.all(np.diff(profile.masses) <= 1e-15))
        self.assertTrue(profile.holds(profile.fitted_c))
        self.assertAlmostEqual(profile.masses[0], self.measure.mass_outside(2.0))
        self.assertEqual(list(profile.to_frame(0.1).columns), TAIL_COLUMNS)
        self.assertLessEqual(profile.annulus_weighted_sum, profile.weighted_sum * (1 + 1e-12))
        inside = self.measure.mass_outside(2.0) - self.measure.mass_outside(2.0 ** 13)
        self.assertAlmostEqual(float(profile.annulus_masses.sum()), inside)

    def test_provenance_json(self):
        doc = json.loads(self.measure.to_json())
        self.assertEqual(doc['atoms'], self.measure.size)
        self.assertEqual(doc['params']['s'], 0.1)

    def test_k_max(self):
        with self.assertRaises(ValueError):
            tail_profile(self.measure, 1)


class TestWeakLimit(unittest.TestCase):
    def setUp(self):
        self.fmap = TranscendentalMap.exp(0.3)

    def test_result(self):
        result = weak_limit_approximation(self.fmap, 1.3, Z0, BSequence(), 3, 10,
                                          [0.2, 0.1, 0.05], settings=FAST)
        self.assertEqual(result.s_grid, [0.2, 0.1, 0.05])
        self.assertIs(result.measure, result.measures[0.05])
        self.assertEqual(len(result.differences), 2)
        frame = result.convergence_frame()
        self.assertEqual(len(frame), 3)
        self.assertTrue(np.allclose(frame['constant'], 1.0))
        self.assertEqual(set(result.tightness), {0.1, 0.01})

    def test_grid_checks(self):
        with self.assertRaises(ValueError):
            weak_limit_approximation(self.fmap, 1.3, Z0, BSequence(), 3, 10, [0.2, 0.1])
        with self.assertRaises(ValueError):
            weak_limit_approximation(self.fmap, 1.3, Z0, BSequence(), 3, 10, [0.1, 0.2, 0.05])


class TestSupport(unittest.TestCase):
    def test_dirac_concentrated(self):
        fmap = TranscendentalMap.zexp()
        report = support_dichotomy_check(dirac(0j, 1.0), fmap, julia_disc_panel(fmap))
        self.assertIs(report.verdict, SupportVerdict.CONCENTRATED)
        self.assertEqual(report.exceptional, [0j])
        self.assertEqual(exceptional_points(TranscendentalMap.exp(0.3)), [])

    def test_spread_measure(self):
        fmap = TranscendentalMap.exp(0.3)
        measure = from_tree(PreimageTree(fmap, Z0, 1.3, 3, 10, settings=FAST).build(), 0.1)
        report = support_dichotomy_check(measure, fmap, [])
        self.assertIs(report.verdict, SupportVerdict.VACUOUS)
        report = support_dichotomy_check(measure, fmap, [TestDisc(1e6 + 0j, 1.0)])
        self.assertIs(report.verdict, SupportVerdict.PARTIAL)

    def test_postsingular_and_area(self):
        fmap = TranscendentalMap.exp(0.3)
        measure = from_tree(PreimageTree(fmap, Z0, 1.3, 3, 10, settings=FAST).build(), 0.1)
        summary = postsingular_accumulation(measure, fmap, n_iter=10)
        self.assertGreaterEqual(summary['fraction'], 0.0)
        self.assertLessEqual(summary['fraction'], 1.0 + 1e-9)
        frame = area_density_ratios(measure, [Z0], [0.5, 0.25])
        self.assertEqual(len(frame), 2)
        self.assertTrue(np.all(frame['ratio'] >= 0))


@pytest.mark.slow
class TestMeasureAcceptance(unittest.TestCase):
    """Patterson-Sullivan measures for EXP (lambda = 0.3) at the estimated Bowen zero."""

    def setUp(self):
        self.fmap = TranscendentalMap.exp(0.3)
        self.settings = TreeSettings.from_config(Config)
        self.z0 = repelling_fixed_points(self.fmap, count=1)[0]
        self.t0 = find_bowen_zero(self.fmap, self.z0, (1.0, 2.0), 0.02, 8, 200,
                                  settings=self.settings).t0
        self.result = weak_limit_approximation(self.fmap, self.t0, self.z0, BSequence(), 6, 100,
                                               [0.2, 0.1, 0.05], settings=self.settings)

    def test_conformality_trend(self):
        panel = default_test_panel(self.result.measure, self.fmap, size=5)
        coarse = conformality_residual(self.result.measures[0.2], self.fmap, panel)
        fine = conformality_residual(self.result.measures[0.05], self.fmap, panel)
        self.assertLess(fine.max_residual, coarse.max_residual)
        self.assertLessEqual(fine.max_residual, 0.05)

    def test_uniform_weighted_tail(self):
        profiles = [tail_profile(self.result.measures[s], 16) for s in (0.2, 0.1, 0.05)]
        sums = [p.weighted_sum for p in profiles]
        self.assertTrue(all(v < 2 * max(sums) for v in sums))
        c = max(p.fitted_c for p in profiles)
        self.assertTrue(all(p.holds(c) for p in profiles))


if __name__ == '__main__':
    unittest.main()
