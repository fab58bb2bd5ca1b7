"""
Command line surface: pressure-scan, bowen, measure and validate.

Every subcommand loads an INI run configuration, writes its files through a
RunManifest and reports failures as a JSON document on stderr
(exit status 2 for configuration errors, 1 for computation errors).
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import pandas as pd

from pressure_lab import __version__, setup_logging
from pressure_lab.config.settings import (
    Config, RunConfig, TreeSettings, get_config_class, load_run_config,
)
from pressure_lab.core.errors import (
    ConfigError, InconclusiveRegime, LabError, NonHyperbolicMap, TooFewCells,
)
from pressure_lab.core.maps import TranscendentalMap, default_start_point, singular_orbit_report
from pressure_lab.core.measure import (
    BSequence, ConformalityReport, TailProfile, area_density_ratios, conformality_residual,
    default_test_panel, dirac, dirac_panel, julia_disc_panel, postsingular_accumulation,
    support_dichotomy_check, tail_profile, weak_limit_approximation,
)
from pressure_lab.core.pressure import classify_regime, find_bowen_zero, pressure_curve
from pressure_lab.core.tree import PreimageTree
from pressure_lab.core.validation_engine import ConfigValidator
from pressure_lab.core.validators import (
    boxcount_nonescaping, chained_bound_check, default_one_step_samples, koebe_disc,
    koebe_scaling_check, lebesgue_null_check, one_step_lower_bound_check,
    tract_derivative_ratio_check, tract_modulus_ratio_check,
)
from pressure_lab.utils.helpers import THREADS_ENV, resolve_threads
from pressure_lab.utils.manifest import RunManifest, atoms_file_name, clear_previous_run
from pressure_lab.utils.state_logger import StateLogger

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_COMPUTATION = 1
EXIT_CONFIG = 2


@dataclass
class RunContext:
    """Resolved inputs shared by the subcommands."""
    config: RunConfig
    fmap: TranscendentalMap
    z0: complex
    settings: TreeSettings
    manifest: RunManifest
    state: StateLogger

    def capture(self, operation: str, parameters: Optional[Dict] = None,
                summary: Optional[Dict] = None) -> None:
        self.state.capture_state(operation, parameters, summary)


def resolve_map(config: RunConfig):
    """The configured map and its root point (a repelling fixed point when z0 is auto)."""
    fmap = TranscendentalMap(config.map.family, config.map.lam)
    z0 = config.map.z0 if config.map.z0 is not None else default_start_point(fmap)
    return fmap, complex(z0)


def make_context(config: RunConfig, command: str, config_class=Config) -> RunContext:
    fmap, z0 = resolve_map(config)
    directory = Path(config.output.directory)
    removed = clear_previous_run(directory)
    if removed:
        logger.info(f"Removed {len(removed)} files of an earlier run in {directory}")
    manifest = RunManifest(directory=directory, config_hash=config.config_hash(), command=command)
    state = StateLogger(config.output.state_log_dir)
    state.on_run_start(command, manifest.config_hash)
    logger.info(f"{command}: {fmap.label}, z0={z0}")
    return RunContext(config=config, fmap=fmap, z0=z0, settings=config.tree_settings(config_class),
                      manifest=manifest, state=state)


# pressure-scan ------------------------------------------------------------

def _plot_curve(curve, path: Path) -> None:
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    frame = curve.to_frame()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(frame['t'], frame['pressure'], yerr=frame['error'], fmt='o-', capsize=3)
    ax.axhline(0.0, color='grey', linewidth=0.8)
    if curve.t0 is not None:
        ax.axvline(curve.t0, color='tab:red', linestyle='--', linewidth=0.8)
    ax.set_xlabel('t')
    ax.set_ylabel('P(f, t)')
    ax.set_title(curve.fmap.label)
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, metadata={'Software': None})
    plt.close(fig)


def run_pressure_scan(config: RunConfig, config_class=Config) -> RunManifest:
    """Pressure curve over the t grid: pressure.csv, pressure.jsonl (and pressure.png)."""
    ctx = make_context(config, 'pressure-scan', config_class)
    p = config.pressure
    curve = pressure_curve(ctx.fmap, p.t_grid, ctx.z0, p.n_max, p.cutoff,
                           settings=ctx.settings, seed=config.seed)
    ctx.capture('pressure_curve', {'t_grid': p.t_grid, 'n_max': p.n_max, 'K': p.cutoff},
                {'pressures': [e.pressure for e in curve.entries], 't0': curve.t0})

    lines = curve.jsonl_lines()
    if len(curve.entries) >= 2:
        try:
            evidence = classify_regime(curve)
            lines.append(json.dumps(dict(type='regime', **evidence.to_dict()), sort_keys=True))
        except InconclusiveRegime as e:
            logger.warning(f"Regime not classified: {e.message}")
    if not curve.non_increasing():
        logger.warning("Pressure estimates increase beyond their error bars")
    if curve.convexity_violations():
        logger.warning(f"Convexity violated at t = {curve.convexity_violations()}")

    ctx.manifest.write_csv('pressure.csv', curve.to_frame())
    ctx.manifest.write_jsonl('pressure.jsonl', lines)
    if config.output.plots:
        _plot_curve(curve, ctx.manifest.path_for('pressure.png'))
        ctx.manifest.register_file('pressure.png')
    ctx.manifest.write()
    ctx.state.close()
    return ctx.manifest


# bowen ------------------------------------------------------------------

def _bowen(ctx: RunContext):
    b = ctx.config.bowen
    p = ctx.config.pressure
    return find_bowen_zero(ctx.fmap, ctx.z0, b.bracket, b.tol, p.n_max, p.cutoff,
                           settings=ctx.settings, seed=ctx.config.seed)


def run_bowen(config: RunConfig, config_class=Config) -> RunManifest:
    """Bowen zero by certified bisection: t0.json."""
    ctx = make_context(config, 'bowen', config_class)
    result = _bowen(ctx)
    ctx.capture('find_bowen_zero', {'bracket': list(config.bowen.bracket), 'tol': config.bowen.tol},
                {'t0': result.t0, 'sign_ambiguous': result.sign_ambiguous})
    payload = dict(result.to_dict(), family=ctx.fmap.family.value,
                   z0=[ctx.z0.real, ctx.z0.imag])
    payload['lambda'] = [ctx.fmap.lam.real, ctx.fmap.lam.imag]
    ctx.manifest.write_json('t0.json', payload)
    ctx.manifest.write()
    ctx.state.close()
    return ctx.manifest


# measure ----------------------------------------------------------------

def _residual_frames(reports: List[ConformalityReport]) -> pd.DataFrame:
    return pd.concat([r.to_frame() for r in reports], ignore_index=True)


def _tail_frames(profiles: Dict[float, TailProfile]) -> pd.DataFrame:
    return pd.concat([profile.to_frame(s) for s, profile in profiles.items()], ignore_index=True)


def run_measure(config: RunConfig, config_class=Config) -> RunManifest:
    """
    Patterson-Sullivan measures over the s grid (or delta_0 for z*e^z):
    atom dumps, residuals.csv, tails.csv, convergence.csv and measure.json.
    """
    ok, message = ConfigValidator(config).validate_measure_run()
    if not ok:
        raise ConfigError(message)
    ctx = make_context(config, 'measure', config_class)
    m = config.measure
    summary: Dict[str, Any] = {}

    if m.dirac:
        t = m.t if m.t is not None else 1.0
        measure = dirac(0j, t)
        report = conformality_residual(measure, ctx.fmap, dirac_panel())
        ctx.manifest.write_csv('atoms_dirac.csv', measure.to_frame())
        ctx.manifest.write_csv('residuals.csv', report.to_frame())
        ctx.manifest.write_csv('tails.csv', tail_profile(measure, m.k_max).to_frame())
        support = support_dichotomy_check(measure, ctx.fmap, julia_disc_panel(ctx.fmap))
        summary.update(t=t, max_residual=report.max_residual, support=support.to_dict())
    else:
        if m.t is not None:
            t = m.t
        else:
            bowen = _bowen(ctx)
            t = bowen.t0
            summary['bowen'] = bowen.to_dict()
        b = BSequence(m.b_rule, m.b_beta)
        settings = ctx.settings
        result = weak_limit_approximation(ctx.fmap, t, ctx.z0, b, m.depth, m.cutoff, m.s_grid,
                                          settings=settings, seed=config.seed, k_max=m.k_max)
        panel = default_test_panel(result.measure, ctx.fmap, size=m.panel_size)
        reports, profiles = [], {}
        for s in result.s_grid:
            measure = result.measures[s]
            ctx.manifest.write_csv(atoms_file_name(s), measure.to_frame())
            reports.append(conformality_residual(measure, ctx.fmap, panel))
            profiles[s] = tail_profile(measure, m.k_max)
            ctx.capture('measure', {'t': t, 's': s, 'depth': m.depth},
                        {'atoms': measure.size, 'max_residual': reports[-1].max_residual,
                         'weighted_tail': profiles[s].weighted_sum})
        ctx.manifest.write_csv('residuals.csv', _residual_frames(reports))
        ctx.manifest.write_csv('tails.csv', _tail_frames(profiles))
        ctx.manifest.write_csv('convergence.csv', result.convergence_frame())
        support = support_dichotomy_check(result.measure, ctx.fmap, julia_disc_panel(ctx.fmap))
        summary.update(
            t=t, b=b.label, s_grid=result.s_grid,
            max_residuals={str(s): r.max_residual for s, r in zip(result.s_grid, reports)},
            weighted_tails={str(s): p.weighted_sum for s, p in profiles.items()},
            differences=result.differences, non_cauchy=result.non_cauchy,
            tightness={str(k): v for k, v in result.tightness.items()},
            support=support.to_dict(),
            postsingular=postsingular_accumulation(result.measure, ctx.fmap),
            provenance={str(s): result.measures[s].provenance() for s in result.s_grid},
        )
        if m.t2_diagnostic:
            centers = [d.center for d in panel]
            ctx.manifest.write_csv('area_density.csv',
                                   area_density_ratios(result.measure, centers, (0.1, 0.05, 0.025)))

    ctx.manifest.write_json('measure.json', summary)
    ctx.manifest.write()
    ctx.state.close()
    return ctx.manifest


# validate ---------------------------------------------------------------

def _attempt(results: Dict[str, Dict], name: str, func: Callable[[], Any]) -> Optional[Any]:
    """Run one validator; failures are recorded and the suite continues."""
    try:
        outcome = func()
    except NonHyperbolicMap as e:
        logger.info(f"{name} refused: {e.message}")
        results[name] = {'status': 'refused', **e.to_dict()}
        return None
    except TooFewCells as e:
        logger.warning(f"{name}: {e.message}")
        results[name] = {'status': 'error', **e.to_dict(),
                         'estimate': e.estimate.to_dict() if e.estimate is not None else None}
        return None
    except LabError as e:
        logger.error(f"{name} failed: {e.message}", exc_info=True)
        results[name] = {'status': 'error', **e.to_dict()}
        return None
    results[name] = {'status': 'ok', 'report': outcome.to_dict()}
    return outcome


def run_validators(config: RunConfig, config_class=Config) -> RunManifest:
    """The validator suite for the configured map: validators.json (and boxcount.csv)."""
    ctx = make_context(config, 'validate', config_class)
    v = config.validators
    fmap, z0, seed = ctx.fmap, ctx.z0, config.seed
    results: Dict[str, Dict] = {}
    holds: List[bool] = []

    _attempt(results, 'singular_orbits', lambda: singular_orbit_report(fmap))

    def koebe_check():
        center, radius = koebe_disc(fmap, z0, v.koebe_radius, v.koebe_depth)
        return koebe_scaling_check(fmap, center, radius, depth=v.koebe_depth,
                                   samples=v.samples, seed=seed)

    koebe = _attempt(results, 'koebe_scaling', koebe_check)
    if koebe is not None:
        holds.append(koebe.scaling_holds)

    for name, check in (('tract_modulus', tract_modulus_ratio_check),
                        ('tract_derivative', tract_derivative_ratio_check)):
        fitted = _attempt(results, name, lambda: check(fmap, v.tract_R, v.tract_L, v.samples, seed))
        if fitted is None:
            continue
        holds.append(fitted.bound_holds)
        # the constant fitted at the smallest scale is reused one decade further out
        if v.tract_R * v.tract_L * 10.0 < 1e6:
            reused = _attempt(results, f"{name}_reused",
                              lambda: check(fmap, v.tract_R, v.tract_L * 10.0, v.samples, seed + 1,
                                            c=fitted.fitted_c))
            if reused is not None:
                holds.append(reused.bound_holds)

    for t in (1.0, 2.0):
        report = _attempt(results, f"one_step_t{t:g}",
                          lambda: one_step_lower_bound_check(fmap, t, default_one_step_samples()))
        if report is not None:
            holds.append(report.passed)

    t_chain = float(sorted(config.pressure.t_grid)[len(config.pressure.t_grid) // 2])

    def chained():
        tree = PreimageTree(fmap, z0, t_chain, v.chained_depth + 1, config.pressure.cutoff,
                            settings=ctx.settings, seed=seed).build()
        return chained_bound_check(tree, depths=range(1, v.chained_depth + 1))

    report = _attempt(results, 'chained_bounds', chained)
    if report is not None:
        holds.append(report.all_hold)

    estimate = _attempt(results, 'boxcount',
                        lambda: boxcount_nonescaping(fmap, v.boxcount_window, v.eps_list,
                                                     v.max_iter, config.map.bound_radius,
                                                     config.map.escape_radius))
    if estimate is not None:
        ctx.manifest.write_csv('boxcount.csv', estimate.to_frame())
    lebesgue = _attempt(results, 'lebesgue_null',
                        lambda: lebesgue_null_check(fmap, v.boxcount_window, v.eps_list[0],
                                                    max_iter=v.max_iter,
                                                    R_bnd=config.map.bound_radius,
                                                    escape_radius=config.map.escape_radius))
    if lebesgue is not None:
        holds.append(lebesgue.monotone)

    payload = {
        'family': fmap.family.value,
        'lambda': [fmap.lam.real, fmap.lam.imag],
        'z0': [z0.real, z0.imag],
        'all_bounds_hold': bool(holds) and all(holds),
        'validators': results,
    }
    ctx.capture('validators', {'samples': v.samples},
                {name: r['status'] for name, r in results.items()})
    ctx.manifest.write_json('validators.json', payload)
    ctx.manifest.write()
    ctx.state.close()
    return ctx.manifest


COMMANDS = {
    'pressure-scan': run_pressure_scan,
    'bowen': run_bowen,
    'measure': run_measure,
    'validate': run_validators,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='pressure-lab',
        description='Pressure and conformal measures of transcendental maps')
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest='command', required=True)
    for name, func in COMMANDS.items():
        cmd = sub.add_parser(name, help=(func.__doc__ or '').strip().splitlines()[0])
        cmd.add_argument('--config', required=True, metavar='PATH', help='INI run configuration')
        cmd.add_argument('--out', metavar='DIR',
                         help='output directory (overrides [output] directory)')
        cmd.add_argument('--seed', type=int, metavar='N',
                         help='sampling seed (overrides [run] seed)')
        cmd.add_argument('--threads', type=int, metavar='N',
                         help=f"worker threads (fallback: {THREADS_ENV}, then [run] threads)")
        cmd.add_argument('--log-level', default=None, help='logging level (default INFO)')
    return parser


def _error_report(error: Exception) -> str:
    if isinstance(error, LabError):
        body = error.to_dict()
    else:
        body = {'type': type(error).__name__, 'error': str(error), 'context': {}}
    return json.dumps(dict(success=False, **body), sort_keys=True)


def load_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config)
    if args.out:
        config.output.directory = args.out
    if args.seed is not None:
        config.seed = args.seed
    if args.threads is not None or os.environ.get(THREADS_ENV):
        config.threads = resolve_threads(args.threads)
    ok, message = ConfigValidator(config).validate_run()
    if not ok:
        raise ConfigError(message)
    return config


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    try:
        config_class = get_config_class()
        config = load_config(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e.message}")
        print(_error_report(e), file=sys.stderr)
        return EXIT_CONFIG

    try:
        manifest = COMMANDS[args.command](config, config_class)
    except ConfigError as e:
        logger.error(f"Configuration error: {e.message}")
        print(_error_report(e), file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        logger.error(f"Error in {args.command}: {str(e)}", exc_info=True)
        print(_error_report(e), file=sys.stderr)
        return EXIT_COMPUTATION

    logger.info(f"{args.command} wrote {len(manifest.files)} files to {manifest.directory}")
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
