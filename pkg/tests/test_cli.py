import contextlib
import io
import json
import os
import shutil
import tempfile
import unittest
from unittest import mock

import pandas as pd

from pressure_lab.cli.commands import EXIT_CONFIG, EXIT_OK, build_parser, main
from pressure_lab.utils.helpers import THREADS_ENV
from pressure_lab.utils.manifest import MANIFEST_NAME, sha256_file

BASE = """
[map]
family = exp
lambda = 0.3
z0 = 1+0.5i

[pressure]
t_grid = 1.5, 2.0
n_max = 4
cutoff = 200
beam_width = 100

[bowen]
bracket = (1.0, 3.0)
tol = 0.1

[measure]
t = 1.3
s_grid = 0.2, 0.1, 0.05
depth = 3
cutoff = 20
k_max = 8
panel_size = 3

[validators]
samples = 50
window = 0, 2, 0, 2
eps_list = 2^-1:2^-3
max_iter = 20
chained_depth = 2
"""


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.log_dir = os.path.join(self.test_dir, 'logs')

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def write_config(self, text=BASE, name='run.ini'):
        path = os.path.join(self.test_dir, name)
        with open(path, 'w') as f:
            f.write(text + f"\n[output]\nstate_log_dir = {self.log_dir}\n")
        return path

    def run_cli(self, *argv):
        stderr = io.StringIO()
        with contextlib.redirect_stderr(stderr):
            code = main(list(argv))
        return code, stderr.getvalue()

    def out(self, name='out'):
        return os.path.join(self.test_dir, name)

    def load_manifest(self, directory):
        with open(os.path.join(directory, MANIFEST_NAME), 'r') as f:
            return json.load(f)

    def assert_manifest_complete(self, directory):
        manifest = self.load_manifest(directory)
        listed = {entry['name']: entry['sha256'] for entry in manifest['files']}
        present = set(os.listdir(directory)) - {MANIFEST_NAME}
        self.assertEqual(set(listed), present)
        for name, digest in listed.items():
            self.assertEqual(sha256_file(os.path.join(directory, name)), digest)
        return manifest


def error_document(stderr):
    lines = [line for line in stderr.splitlines() if line.startswith('{')]
    return json.loads(lines[-1])


class TestParser(unittest.TestCase):
    def test_subcommands(self):
        args = build_parser().parse_args(['bowen', '--config', 'x.ini', '--seed', '3'])
        self.assertEqual(args.command, 'bowen')
        self.assertEqual(args.seed, 3)
        self.assertIsNone(args.out)

    def test_config_required(self):
        with contextlib.redirect_stderr(io.StringIO()):
            with self.assertRaises(SystemExit):
                build_parser().parse_args(['measure'])


class TestPressureScan(CliTestCase):
    def test_outputs_and_manifest(self):
        config = self.write_config()
        code, _ = self.run_cli('pressure-scan', '--config', config, '--out', self.out())
        self.assertEqual(code, EXIT_OK)
        manifest = self.assert_manifest_complete(self.out())
        self.assertEqual(manifest['command'], 'pressure-scan')
        frame = pd.read_csv(os.path.join(self.out(), 'pressure.csv'))
        self.assertEqual(list(frame['t']), [1.5, 2.0])
        with open(os.path.join(self.out(), 'pressure.jsonl'), 'r') as f:
            records = [json.loads(line) for line in f]
        self.assertTrue(any(r['type'] == 'curve' for r in records))
        self.assertTrue(os.listdir(self.log_dir))

    def test_reruns_are_byte_identical(self):
        config = self.write_config()
        self.run_cli('pressure-scan', '--config', config, '--out', self.out('a'))
        self.run_cli('pressure-scan', '--config', config, '--out', self.out('b'), '--threads', '2')
        a = {e['name']: e['sha256'] for e in self.load_manifest(self.out('a'))['files']}
        b = {e['name']: e['sha256'] for e in self.load_manifest(self.out('b'))['files']}
        self.assertEqual(a['pressure.csv'], b['pressure.csv'])
        self.assertEqual(a, b)

    def test_rerun_replaces_previous_files(self):
        config = self.write_config()
        self.run_cli('bowen', '--config', config, '--out', self.out())
        code, _ = self.run_cli('pressure-scan', '--config', config, '--out', self.out())
        self.assertEqual(code, EXIT_OK)
        self.assertNotIn('t0.json', os.listdir(self.out()))
        self.assert_manifest_complete(self.out())


class TestBowen(CliTestCase):
    def test_t0_file(self):
        config = self.write_config()
        code, _ = self.run_cli('bowen', '--config', config, '--out', self.out())
        self.assertEqual(code, EXIT_OK)
        self.assert_manifest_complete(self.out())
        with open(os.path.join(self.out(), 't0.json'), 'r') as f:
            result = json.load(f)
        self.assertGreater(result['t0'], 1.0)
        self.assertLess(result['t0'], 3.0)
        self.assertLessEqual(result['bracket'][1] - result['bracket'][0], 0.1)
        self.assertEqual(result['family'], 'exp')


class TestMeasure(CliTestCase):
    def test_patterson_sullivan_files(self):
        config = self.write_config()
        code, _ = self.run_cli('measure', '--config', config, '--out', self.out())
        self.assertEqual(code, EXIT_OK)
        manifest = self.assert_manifest_complete(self.out())
        names = {e['name'] for e in manifest['files']}
        for name in ('atoms_s0.2.csv', 'atoms_s0.1.csv', 'atoms_s0.05.csv', 'residuals.csv',
                     'tails.csv', 'convergence.csv', 'measure.json'):
            self.assertIn(name, names)
        with open(os.path.join(self.out(), 'measure.json'), 'r') as f:
            summary = json.load(f)
        self.assertEqual(summary['t'], 1.3)
        self.assertEqual(set(summary['max_residuals']), {'0.2', '0.1', '0.05'})

    def test_dirac_for_zexp(self):
        config = self.write_config("[map]\nfamily = zexp\n[measure]\ndirac = true\nt = 2.0\n")
        code, _ = self.run_cli('measure', '--config', config, '--out', self.out())
        self.assertEqual(code, EXIT_OK)
        with open(os.path.join(self.out(), 'measure.json'), 'r') as f:
            summary = json.load(f)
        self.assertEqual(summary['max_residual'], 0.0)
        self.assertEqual(summary['support']['verdict'], 'concentrated')

    def test_short_s_grid(self):
        config = self.write_config("[measure]\ns_grid = 0.2, 0.1\n")
        code, stderr = self.run_cli('measure', '--config', config, '--out', self.out())
        self.assertEqual(code, EXIT_CONFIG)
        self.assertEqual(error_document(stderr)['type'], 'ConfigError')


class TestValidate(CliTestCase):
    def test_report(self):
        config = self.write_config()
        code, _ = self.run_cli('validate', '--config', config, '--out', self.out())
        self.assertEqual(code, EXIT_OK)
        self.assert_manifest_complete(self.out())
        with open(os.path.join(self.out(), 'validators.json'), 'r') as f:
            report = json.load(f)
        validators = report['validators']
        for name in ('singular_orbits', 'koebe_scaling', 'tract_modulus', 'tract_derivative',
                     'one_step_t1', 'one_step_t2', 'chained_bounds', 'boxcount', 'lebesgue_null'):
            self.assertIn(name, validators)
        self.assertEqual(validators['singular_orbits']['status'], 'ok')
        self.assertIn(validators['boxcount']['status'], ('ok', 'error'))
        self.assertIsInstance(report['all_bounds_hold'], bool)

    def test_tan_refuses_boxcount(self):
        config = self.write_config(BASE.replace('family = exp', 'family = tan'))
        code, _ = self.run_cli('validate', '--config', config, '--out', self.out())
        self.assertEqual(code, EXIT_OK)
        with open(os.path.join(self.out(), 'validators.json'), 'r') as f:
            validators = json.load(f)['validators']
        self.assertEqual(validators['boxcount']['status'], 'refused')
        self.assertEqual(validators['boxcount']['type'], 'NonHyperbolicMap')


class TestErrors(CliTestCase):
    def test_unknown_key(self):
        config = self.write_config("[pressure]\nn_maxx = 3\n")
        code, stderr = self.run_cli('pressure-scan', '--config', config, '--out', self.out())
        self.assertEqual(code, EXIT_CONFIG)
        document = error_document(stderr)
        self.assertFalse(document['success'])
        self.assertEqual(document['type'], 'ConfigError')
        self.assertFalse(os.path.exists(self.out()))

    def test_missing_config(self):
        code, stderr = self.run_cli('bowen', '--config', os.path.join(self.test_dir, 'none.ini'))
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn('not found', error_document(stderr)['error'])

    def test_bad_threads(self):
        config = self.write_config()
        code, _ = self.run_cli('bowen', '--config', config, '--out', self.out(), '--threads', '0')
        self.assertEqual(code, EXIT_CONFIG)

    def test_bad_threads_variable(self):
        config = self.write_config()
        with mock.patch.dict(os.environ, {THREADS_ENV: '0'}):
            code, stderr = self.run_cli('bowen', '--config', config, '--out', self.out())
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn(THREADS_ENV, error_document(stderr)['error'])


if __name__ == '__main__':
    unittest.main()
