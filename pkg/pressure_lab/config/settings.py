import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from pressure_lab.core.enums import BRule, MapFamily
from pressure_lab.core.errors import ConfigError


class Config:
    """Base configuration: numerical defaults shared by every run."""
    DEBUG = False
    TESTING = False

    # maps
    ROOT_TOLERANCE = 1e-12          # relative, scaled by (1 + |w|)
    ESCAPE_RADIUS = 1e6
    BOUND_RADIUS = 1e3
    POLE_SWITCH = 1e8               # |f| above which f* uses the reciprocal map
    NEWTON_MAX_STEPS = 50

    # trees
    EPS_TRUNC = 1e-4
    MAX_TAIL_BOUND = 5e-2
    NODE_BUDGET = 10_000_000
    PRUNE_RATIO = 1e-16
    BEAM_WIDTH: Optional[int] = 1500
    K_MIN = 4
    K_MAX = 400
    ADAPTIVE_CUTOFF = True

    # measures
    MAX_LOG_MASS = 690.0            # log of the largest mass accepted by reweighting

    STATE_LOG_DIR = 'debug_logs'


class DevelopmentConfig(Config):
    """Development configuration."""
    DEBUG = True


class ProductionConfig(Config):
    """Production configuration."""
    BEAM_WIDTH = 4000
    K_MAX = 1000


class TestingConfig(Config):
    """Testing configuration."""
    TESTING = True
    BEAM_WIDTH = 300
    K_MAX = 60
    NODE_BUDGET = 2_000_000


CONFIG_CLASSES = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': Config,
}


def get_config_class(name: Optional[str] = None):
    """Config class named by the argument or PRESSURE_LAB_ENV (default: Config)."""
    name = (name or os.environ.get('PRESSURE_LAB_ENV') or 'default').lower()
    if name not in CONFIG_CLASSES:
        raise ConfigError(f"Unknown environment: {name}", environment=name)
    return CONFIG_CLASSES[name]


@dataclass(frozen=True)
class TreeSettings:
    """Truncation policy for preimage trees."""
    eps_trunc: float = Config.EPS_TRUNC
    max_tail_bound: float = Config.MAX_TAIL_BOUND
    node_budget: int = Config.NODE_BUDGET
    prune_ratio: float = Config.PRUNE_RATIO
    beam_width: Optional[int] = Config.BEAM_WIDTH
    k_min: int = Config.K_MIN
    adaptive_cutoff: bool = Config.ADAPTIVE_CUTOFF
    threads: int = 1

    @classmethod
    def from_config(cls, config_class=Config, **overrides: Any) -> 'TreeSettings':
        values = dict(
            eps_trunc=config_class.EPS_TRUNC,
            max_tail_bound=config_class.MAX_TAIL_BOUND,
            node_budget=config_class.NODE_BUDGET,
            prune_ratio=config_class.PRUNE_RATIO,
            beam_width=config_class.BEAM_WIDTH,
            k_min=config_class.K_MIN,
            adaptive_cutoff=config_class.ADAPTIVE_CUTOFF,
        )
        values.update(overrides)
        return cls(**values)

    def replace(self, **changes: Any) -> 'TreeSettings':
        data = asdict(self)
        data.update(changes)
        return TreeSettings(**data)


# Run configuration ---------------------------------------------------------

AUTO_Z0 = 'auto'


@dataclass
class MapConfig:
    family: MapFamily = MapFamily.EXP
    lam: complex = 0.3 + 0j
    z0: Optional[complex] = None          # None means the repelling fixed point default
    escape_radius: float = Config.ESCAPE_RADIUS
    bound_radius: float = Config.BOUND_RADIUS


@dataclass
class PressureConfig:
    t_grid: List[float] = field(default_factory=lambda: [1.5])
    n_max: int = 8
    cutoff: int = Config.K_MAX
    eps_trunc: float = Config.EPS_TRUNC
    beam_width: Optional[int] = Config.BEAM_WIDTH
    node_budget: int = Config.NODE_BUDGET


@dataclass
class BowenConfig:
    bracket: Tuple[float, float] = (1.0, 2.0)
    tol: float = 0.02


@dataclass
class MeasureConfig:
    t: Optional[float] = None              # None means use the Bowen zero
    s_grid: List[float] = field(default_factory=lambda: [0.2, 0.1, 0.05])
    depth: int = 6
    cutoff: int = 100
    b_rule: BRule = BRule.CONSTANT_ONE
    b_beta: float = 1.0
    k_max: int = 16
    panel_size: int = 5
    dirac: bool = False                    # use delta_0 instead of mu_s (ZEXP only)
    t2_diagnostic: bool = False


@dataclass
class ValidatorConfig:
    samples: int = 1000
    tract_R: float = 10.0
    tract_L: float = 10.0
    koebe_radius: float = 0.5
    koebe_depth: int = 1
    boxcount_window: Tuple[float, float, float, float] = (0.0, 4.0, 0.0, 6.283185307179586)
    eps_list: List[float] = field(default_factory=lambda: [2.0 ** -k for k in range(3, 11)])
    max_iter: int = 40
    chained_depth: int = 3


@dataclass
class OutputConfig:
    directory: str = 'out'
    plots: bool = False
    state_log_dir: str = Config.STATE_LOG_DIR


@dataclass
class RunConfig:
    """Everything a CLI run needs; equal configs and seeds give equal outputs."""
    map: MapConfig = field(default_factory=MapConfig)
    pressure: PressureConfig = field(default_factory=PressureConfig)
    bowen: BowenConfig = field(default_factory=BowenConfig)
    measure: MeasureConfig = field(default_factory=MeasureConfig)
    validators: ValidatorConfig = field(default_factory=ValidatorConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    threads: int = 1

    def to_dict(self) -> Dict[str, Any]:
        return _canonical(asdict(self))

    def config_hash(self) -> str:
        payload = dict(self.to_dict())
        # output location and threading do not change results
        payload.pop('output', None)
        payload.pop('threads', None)
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode('utf-8')).hexdigest()

    def tree_settings(self, config_class=Config) -> TreeSettings:
        return TreeSettings.from_config(
            config_class,
            eps_trunc=self.pressure.eps_trunc,
            beam_width=self.pressure.beam_width,
            node_budget=self.pressure.node_budget,
            threads=self.threads,
        )


def _canonical(value: Any) -> Any:
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, (MapFamily, BRule)):
        return value.value
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


# INI loading ---------------------------------------------------------------

def _parse_complex(text: str) -> complex:
    try:
        return complex(text.replace(' ', '').replace('i', 'j'))
    except ValueError as e:
        raise ConfigError(f"Invalid complex number: {text}") from e


def _get(parser: configparser.ConfigParser, section: str, key: str) -> Optional[str]:
    if parser.has_section(section) and parser.has_option(section, key):
        return parser.get(section, key).strip()
    return None


def load_run_config(path: str) -> RunConfig:
    """
    Load a RunConfig from an INI file.

    Unknown sections or keys are rejected so that typos fail loudly.

    Args:
        path: Path to the configuration file

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: If the file cannot be read, parsed or validated
    """
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}", path=path)

    parser = configparser.ConfigParser()
    try:
        with open(path, 'r') as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"Error parsing config file: {str(e)}", path=path) from e

    return run_config_from_parser(parser)


def run_config_from_parser(parser: configparser.ConfigParser) -> RunConfig:
    from pressure_lab.core.validation_engine import ConfigValidator
    from pressure_lab.utils.grid_parser import parse_bracket, parse_grid, parse_window

    allowed = {
        'map': {'family', 'lambda', 'z0', 'escape_radius', 'bound_radius'},
        'pressure': {'t_grid', 'n_max', 'cutoff', 'eps_trunc', 'beam_width', 'node_budget'},
        'bowen': {'bracket', 'tol'},
        'measure': {'t', 's_grid', 'depth', 'cutoff', 'b_rule', 'b_beta', 'k_max',
                    'panel_size', 'dirac', 't2_diagnostic'},
        'validators': {'samples', 'tract_r', 'tract_l', 'koebe_radius', 'koebe_depth',
                       'window', 'eps_list', 'max_iter', 'chained_depth'},
        'output': {'directory', 'plots', 'state_log_dir'},
        'run': {'seed', 'threads'},
    }
    for section in parser.sections():
        if section not in allowed:
            raise ConfigError(f"Unknown config section: [{section}]", section=section)
        unknown = set(parser.options(section)) - allowed[section]
        if unknown:
            raise ConfigError(f"Unknown keys in [{section}]: {', '.join(sorted(unknown))}",
                              section=section)

    config = RunConfig()
    try:
        family = _get(parser, 'map', 'family')
        if family is not None:
            config.map.family = MapFamily(family.lower())
        lam = _get(parser, 'map', 'lambda')
        if lam is not None:
            config.map.lam = _parse_complex(lam)
        z0 = _get(parser, 'map', 'z0')
        if z0 is not None and z0.lower() != AUTO_Z0:
            config.map.z0 = _parse_complex(z0)
        for key, attr in (('escape_radius', 'escape_radius'), ('bound_radius', 'bound_radius')):
            value = _get(parser, 'map', key)
            if value is not None:
                setattr(config.map, attr, float(value))

        t_grid = _get(parser, 'pressure', 't_grid')
        if t_grid is not None:
            config.pressure.t_grid = parse_grid(t_grid)
        for key, cast in (('n_max', int), ('cutoff', int), ('eps_trunc', float),
                          ('node_budget', int)):
            value = _get(parser, 'pressure', key)
            if value is not None:
                setattr(config.pressure, key, cast(value))
        beam = _get(parser, 'pressure', 'beam_width')
        if beam is not None:
            config.pressure.beam_width = None if beam.lower() == 'none' else int(beam)

        bracket = _get(parser, 'bowen', 'bracket')
        if bracket is not None:
            config.bowen.bracket = parse_bracket(bracket)
        tol = _get(parser, 'bowen', 'tol')
        if tol is not None:
            config.bowen.tol = float(tol)

        t = _get(parser, 'measure', 't')
        if t is not None:
            config.measure.t = None if t.lower() == AUTO_Z0 else float(t)
        s_grid = _get(parser, 'measure', 's_grid')
        if s_grid is not None:
            config.measure.s_grid = parse_grid(s_grid, allow_empty=True)
        for key, cast in (('depth', int), ('cutoff', int), ('b_beta', float), ('k_max', int),
                          ('panel_size', int)):
            value = _get(parser, 'measure', key)
            if value is not None:
                setattr(config.measure, key, cast(value))
        b_rule = _get(parser, 'measure', 'b_rule')
        if b_rule is not None:
            config.measure.b_rule = BRule(b_rule.lower())
        if parser.has_section('measure'):
            for key in ('dirac', 't2_diagnostic'):
                if parser.has_option('measure', key):
                    setattr(config.measure, key, parser.getboolean('measure', key))

        for key, attr, cast in (('samples', 'samples', int), ('tract_r', 'tract_R', float),
                                ('tract_l', 'tract_L', float),
                                ('koebe_radius', 'koebe_radius', float),
                                ('koebe_depth', 'koebe_depth', int),
                                ('max_iter', 'max_iter', int),
                                ('chained_depth', 'chained_depth', int)):
            value = _get(parser, 'validators', key)
            if value is not None:
                setattr(config.validators, attr, cast(value))
        window = _get(parser, 'validators', 'window')
        if window is not None:
            config.validators.boxcount_window = parse_window(window)
        eps_list = _get(parser, 'validators', 'eps_list')
        if eps_list is not None:
            config.validators.eps_list = parse_grid(eps_list, order='decreasing')

        directory = _get(parser, 'output', 'directory')
        if directory is not None:
            config.output.directory = directory
        state_dir = _get(parser, 'output', 'state_log_dir')
        if state_dir is not None:
            config.output.state_log_dir = state_dir
        if parser.has_section('output') and parser.has_option('output', 'plots'):
            config.output.plots = parser.getboolean('output', 'plots')

        seed = _get(parser, 'run', 'seed')
        if seed is not None:
            config.seed = int(seed)
        threads = _get(parser, 'run', 'threads')
        if threads is not None:
            config.threads = int(threads)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"Invalid config value: {str(e)}") from e

    ok, message = ConfigValidator(config).validate()
    if not ok:
        raise ConfigError(message)
    return config
