import math
import os
import shutil
import tempfile
import unittest
from unittest import mock

from pressure_lab.config.settings import (
    Config, ProductionConfig, RunConfig, TestingConfig, TreeSettings, get_config_class,
    load_run_config,
)
from pressure_lab.core.enums import BRule, MapFamily
from pressure_lab.core.errors import ConfigError
from pressure_lab.core.validation_engine import ConfigValidator
from pressure_lab.utils.grid_parser import parse_bracket, parse_grid, parse_window


class TestGridParser(unittest.TestCase):
    def test_decimal_range(self):
        grid = parse_grid("1.0:2.0:0.1")
        self.assertEqual(len(grid), 11)
        self.assertEqual(grid[0], 1.0)
        self.assertEqual(grid[-1], 2.0)
        self.assertEqual(grid[3], 1.3)

    def test_counting_down(self):
        self.assertEqual(parse_grid("0.2:0.05:-0.05"), [0.2, 0.15, 0.1, 0.05])

    def test_powers_of_two(self):
        self.assertEqual(parse_grid("2^-3:2^-5"), [0.125, 0.0625, 0.03125])
        self.assertEqual(parse_grid("2^-1, 2^-2"), [0.5, 0.25])

    def test_list_and_order(self):
        self.assertEqual(parse_grid("0.05, 0.2, 0.1", order='decreasing'), [0.2, 0.1, 0.05])
        self.assertEqual(parse_grid("0.05, 0.2", order='increasing'), [0.05, 0.2])
        self.assertEqual(parse_grid("", allow_empty=True), [])

    def test_errors(self):
        for text in ("", "1.0:2.0", "1.0:2.0:-0.1", "1.0:2.0:0", "a, b", "1, inf"):
            with self.assertRaises(ConfigError, msg=text):
                parse_grid(text)
        with self.assertRaises(ValueError):
            parse_grid("1, 2", order='sideways')

    def test_bracket(self):
        self.assertEqual(parse_bracket("(1.0, 2.0)"), (1.0, 2.0))
        with self.assertRaises(ConfigError):
            parse_bracket("1.0")

    def test_window_with_pi(self):
        window = parse_window("0, 4, 0, 2pi")
        self.assertEqual(window[:3], (0.0, 4.0, 0.0))
        self.assertAlmostEqual(window[3], 2 * math.pi)
        self.assertAlmostEqual(parse_window("[-pi, pi, 0, 1]")[0], -math.pi)
        with self.assertRaises(ConfigError):
            parse_window("0, 1, 2")


class TestConfigClasses(unittest.TestCase):
    def test_get_config_class(self):
        self.assertIs(get_config_class('testing'), TestingConfig)
        self.assertIs(get_config_class('PRODUCTION'), ProductionConfig)
        with mock.patch.dict(os.environ, {'PRESSURE_LAB_ENV': ''}):
            self.assertIs(get_config_class(), Config)
        with self.assertRaises(ConfigError):
            get_config_class('staging')

    def test_tree_settings(self):
        settings = TreeSettings.from_config(TestingConfig, beam_width=None)
        self.assertIsNone(settings.beam_width)
        self.assertEqual(settings.node_budget, TestingConfig.NODE_BUDGET)
        self.assertEqual(settings.replace(threads=3).threads, 3)

    def test_hash_ignores_output_and_threads(self):
        a, b = RunConfig(), RunConfig()
        b.output.directory = 'elsewhere'
        b.threads = 8
        self.assertEqual(a.config_hash(), b.config_hash())
        b.seed = 1
        self.assertNotEqual(a.config_hash(), b.config_hash())


class TestConfigValidator(unittest.TestCase):
    def test_defaults_pass(self):
        self.assertEqual(ConfigValidator(RunConfig()).validate(), (True, ""))

    def test_collects_errors(self):
        config = RunConfig()
        config.pressure.t_grid = [1.5, 1.0]
        config.bowen.bracket = (2.0, 1.0)
        validator = ConfigValidator(config)
        ok, message = validator.validate()
        self.assertFalse(ok)
        self.assertIn('increasing', message)
        self.assertEqual(len(validator.get_summary()['errors']), 2)

    def test_dirac_needs_zexp(self):
        config = RunConfig()
        config.measure.dirac = True
        self.assertFalse(ConfigValidator(config).validate()[0])
        config.map.family = MapFamily.ZEXP
        self.assertTrue(ConfigValidator(config).validate()[0])

    def test_measure_run_needs_three_s(self):
        config = RunConfig()
        config.measure.s_grid = [0.2, 0.1]
        validator = ConfigValidator(config)
        self.assertTrue(validator.validate()[0])
        self.assertFalse(validator.validate_measure_run()[0])

    def test_eps_list_must_halve(self):
        config = RunConfig()
        config.validators.eps_list = [0.5, 0.3]
        self.assertFalse(ConfigValidator(config).validate()[0])


class TestLoadRunConfig(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def write(self, text):
        path = os.path.join(self.test_dir, 'run.ini')
        with open(path, 'w') as f:
            f.write(text)
        return path

    def test_full_file(self):
        path = self.write(
            "[map]\nfamily = SIN\nlambda = 0.5+0.1i\nz0 = auto\n"
            "[pressure]\nt_grid = 1.0:2.0:0.5\nbeam_width = none\n"
            "[bowen]\nbracket = (1.0, 2.0)\ntol = 0.01\n"
            "[measure]\ns_grid = 0.2, 0.1, 0.05\nb_rule = poly\nt = auto\n"
            "[validators]\nwindow = 0, 4, 0, 2pi\neps_list = 2^-3:2^-5\n"
            "[output]\nplots = yes\n"
            "[run]\nseed = 7\n"
        )
        config = load_run_config(path)
        self.assertIs(config.map.family, MapFamily.SIN)
        self.assertEqual(config.map.lam, 0.5 + 0.1j)
        self.assertIsNone(config.map.z0)
        self.assertEqual(config.pressure.t_grid, [1.0, 1.5, 2.0])
        self.assertIsNone(config.pressure.beam_width)
        self.assertEqual(config.bowen.tol, 0.01)
        self.assertIsNone(config.measure.t)
        self.assertIs(config.measure.b_rule, BRule.POLY)
        self.assertEqual(config.validators.eps_list, [0.125, 0.0625, 0.03125])
        self.assertTrue(config.output.plots)
        self.assertEqual(config.seed, 7)

    def test_measure_grid_keeps_order(self):
        path = self.write("[measure]\ns_grid = 0.05, 0.2, 0.1\n")
        with self.assertRaises(ConfigError):
            load_run_config(path)

    def test_unknown_key(self):
        path = self.write("[pressure]\nn_maxx = 4\n")
        with self.assertRaises(ConfigError) as ctx:
            load_run_config(path)
        self.assertIn('n_maxx', str(ctx.exception))

    def test_unknown_section(self):
        with self.assertRaises(ConfigError):
            load_run_config(self.write("[plots]\nfoo = 1\n"))

    def test_bad_values(self):
        with self.assertRaises(ConfigError):
            load_run_config(self.write("[pressure]\nn_max = four\n"))
        with self.assertRaises(ConfigError):
            load_run_config(self.write("[map]\nfamily = cosh\n"))
        with self.assertRaises(ConfigError):
            load_run_config(self.write("[map]\nlambda = 0\n"))

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_run_config(os.path.join(self.test_dir, 'missing.ini'))


if __name__ == '__main__':
    unittest.main()
