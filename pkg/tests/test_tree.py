import math
import unittest
from unittest import mock

import numpy as np
from scipy.special import logsumexp

from pressure_lab.config.settings import TreeSettings
from pressure_lab.core.errors import OmittedValue, OmittedValueAtNode, TreeBudgetExceeded
from pressure_lab.core.maps import TranscendentalMap, f_values
from pressure_lab.core.tree import (
    PreimageTree, Restriction, adaptive_cutoff, optimal_resample, sheet_tail,
)
from pressure_lab.core.validators import log_one_step_sums


def exp_depth_one_log_sum(t, K):
    """log S_1(t, e) for e^z from the closed-form log branches 1 + 2*pi*i*k."""
    k = np.arange(-K, K + 1)
    fstar = (1 + np.abs(1 + 2j * math.pi * k) ** 2) * math.e / (1 + math.e ** 2)
    return float(logsumexp(-t * np.log(fstar)))


class TestSheetTail(unittest.TestCase):
    def test_divergent_exponent(self):
        self.assertTrue(math.isinf(sheet_tail(0.5, 100)))

    def test_tail_decreases_with_cutoff(self):
        self.assertGreater(sheet_tail(1.5, 10), sheet_tail(1.5, 100))

    def test_adaptive_cutoff_meets_tolerance(self):
        cutoff, tail = adaptive_cutoff(1.5, 400, 1e-4)
        self.assertLess(tail, 1e-4)
        self.assertGreaterEqual(sheet_tail(1.5, cutoff - 1), 1e-4)

    def test_adaptive_cutoff_saturates(self):
        cutoff, tail = adaptive_cutoff(0.6, 50, 1e-4)
        self.assertEqual(cutoff, 50)
        self.assertGreater(tail, 1e-4)


class TestOptimalResample(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(3)
        self.log_keys = np.log(rng.pareto(1.5, size=400) + 1e-3)

    def test_small_levels_untouched(self):
        chosen, log_mult = optimal_resample(self.log_keys[:10], 20, 0.5)
        np.testing.assert_array_equal(chosen, np.arange(10))
        self.assertTrue(np.all(log_mult == 0))

    def test_width_and_heavy_nodes(self):
        chosen, log_mult = optimal_resample(self.log_keys, 50, 0.3)
        self.assertLessEqual(chosen.size, 50)
        heaviest = int(np.argmax(self.log_keys))
        self.assertIn(heaviest, chosen)
        self.assertEqual(log_mult[list(chosen).index(heaviest)], 0.0)
        self.assertTrue(np.all(np.diff(chosen) > 0))

    def test_unbiased_over_offsets(self):
        exact = logsumexp(self.log_keys)
        estimates = []
        for offset in np.linspace(0.0, 1.0, 200, endpoint=False):
            chosen, log_mult = optimal_resample(self.log_keys, 50, offset)
            estimates.append(np.exp(logsumexp(self.log_keys[chosen] + log_mult) - exact))
        self.assertAlmostEqual(float(np.mean(estimates)), 1.0, places=2)


class TestPreimageTree(unittest.TestCase):
    def setUp(self):
        self.fmap = TranscendentalMap.exp(0.3)
        self.exact = TreeSettings(beam_width=None, adaptive_cutoff=False)
        self.untruncated = self.exact.replace(prune_ratio=1e-300)

    def test_depth_one_closed_form(self):
        fmap = TranscendentalMap.exp(1.0)
        tree = PreimageTree(fmap, math.e, 2.0, 1, 10_000, settings=self.exact).build()
        expected = exp_depth_one_log_sum(2.0, 10_000)
        self.assertLess(abs(tree.log_sum(1) - expected), 1e-9 * abs(expected) + 1e-12)

    def test_endpoints_are_preimages(self):
        tree = PreimageTree(self.fmap, 1 + 0.5j, 1.5, 2, 3, settings=self.exact).build()
        level2, level1 = tree.level(2), tree.level(1)
        images = f_values(self.fmap, level2.points)
        parents = level1.points[level2.parent]
        self.assertTrue(np.all(np.abs(images - parents) < 1e-10 * (1 + np.abs(parents))))
        orbit = tree.forward_orbit(2, 0)
        self.assertEqual(len(orbit), 3)
        self.assertEqual(orbit[-1], 1 + 0.5j)
        self.assertEqual(tree.branch_orbit(2, 0).depth, 2)

    def test_restricted_sums_monotone(self):
        discs = [Restriction.disc(r) for r in (5.0, 20.0, 80.0)]
        tree = PreimageTree(self.fmap, 1 + 0.5j, 1.5, 3, 20, settings=self.exact,
                            restrictions=discs, keep_levels=False).build()
        for n in range(1, 4):
            sums = [tree.log_sum(n, d) for d in discs] + [tree.log_sum(n)]
            self.assertTrue(all(b >= a for a, b in zip(sums, sums[1:])))
            self.assertLessEqual(tree.term_count(n, discs[0]), tree.term_count(n))

    def test_one_step_recursion(self):
        tree = PreimageTree(self.fmap, 1 + 0.5j, 1.5, 3, 10, settings=self.untruncated).build()
        for n in (1, 2):
            lvl = tree.level(n)
            one_step = log_one_step_sums(self.fmap, lvl.points, 1.5, 10)
            recursed = float(logsumexp(lvl.log_weight + one_step))
            self.assertAlmostEqual(recursed, tree.log_sum(n + 1), places=10)

    def test_annulus_decomposition(self):
        r = 10.0
        inner, outer = Restriction.disc(r), Restriction.disc(2 * r)
        ring = Restriction.annulus(r, 2 * r)
        tree = PreimageTree(self.fmap, 1 + 0.5j, 1.5, 3, 20, settings=self.untruncated,
                            restrictions=[inner, outer, ring], keep_levels=False).build()
        for n in range(1, 4):
            combined = float(np.logaddexp(tree.log_sum(n, ring), tree.log_sum(n, inner)))
            self.assertAlmostEqual(combined, tree.log_sum(n, outer), places=10)
            self.assertEqual(tree.term_count(n, ring) + tree.term_count(n, inner),
                             tree.term_count(n, outer))

    def test_annulus_restriction(self):
        r = Restriction.annulus(1.0, 2.0)
        mask = r.mask(np.asarray([0.5, 1.0, 1.5, 2.0]))
        np.testing.assert_array_equal(mask, [False, True, True, False])
        self.assertEqual(r.label, 'annulus(1,2)')
        with self.assertRaises(ValueError):
            Restriction(3.0, 1.0)

    def test_beam_limits_expansion(self):
        settings = TreeSettings(beam_width=100)
        tree = PreimageTree(self.fmap, 1 + 0.5j, 1.5, 3, 20, settings=settings).build()
        for n in range(3):
            self.assertLessEqual(int(tree.level(n).expanded.sum()), 100)
        self.assertTrue(np.isfinite(tree.log_sum(3)))

    def test_beam_estimate_close_to_exact(self):
        exact = PreimageTree(self.fmap, 1 + 0.5j, 1.5, 3, 20, settings=self.exact).build()
        beam = PreimageTree(self.fmap, 1 + 0.5j, 1.5, 3, 20,
                            settings=self.exact.replace(beam_width=200)).build()
        self.assertLess(abs(beam.log_sum(3) - exact.log_sum(3)), 0.1)

    def test_deterministic(self):
        settings = TreeSettings(beam_width=50)
        a = PreimageTree(self.fmap, 1 + 0.5j, 1.5, 3, 20, settings=settings, seed=4).build()
        b = PreimageTree(self.fmap, 1 + 0.5j, 1.5, 3, 20, settings=settings, seed=4).build()
        self.assertEqual(a.log_sum(3), b.log_sum(3))

    def test_threads_do_not_change_sums(self):
        settings = TreeSettings(beam_width=None, adaptive_cutoff=False)
        a = PreimageTree(self.fmap, 1 + 0.5j, 1.5, 3, 40, settings=settings).build()
        b = PreimageTree(self.fmap, 1 + 0.5j, 1.5, 3, 40,
                         settings=settings.replace(threads=4)).build()
        self.assertEqual(a.log_sum(3), b.log_sum(3))

    def test_node_budget(self):
        settings = TreeSettings(beam_width=None, adaptive_cutoff=False, node_budget=1000)
        with self.assertRaises(TreeBudgetExceeded):
            PreimageTree(self.fmap, 1.0, 1.5, 3, 50, settings=settings).build()

    def test_failed_growth_proxy_is_logged(self):
        tree = PreimageTree(self.fmap, 1 + 0.5j, 1.5, 2, 5, settings=self.exact).build()
        failure = OmittedValue('no preimage', w=0j)
        with mock.patch('pressure_lab.core.tree.preimage_grid', side_effect=failure):
            with self.assertLogs('pressure_lab.core.tree', level='DEBUG') as logs:
                keys = tree._probe(tree.level(1))
        np.testing.assert_array_equal(keys, np.zeros(tree.level(1).size))
        self.assertIn('no preimage', logs.output[0])
        self.assertIn('depth 1', logs.output[0])

    def test_omitted_root(self):
        with self.assertRaises(OmittedValueAtNode):
            PreimageTree(self.fmap, 0j, 1.5, 1, 5).build()

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            PreimageTree(self.fmap, 1.0, 0.0, 1, 5)
        with self.assertRaises(ValueError):
            PreimageTree(self.fmap, 1.0, 1.0, -1, 5)
        tree = PreimageTree(self.fmap, 1.0, 1.0, 1, 5).build()
        with self.assertRaises(ValueError):
            tree.log_sum(2)


if __name__ == '__main__':
    unittest.main()
