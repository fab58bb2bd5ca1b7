"""
Text specifications for parameter grids.

    "1.0:2.0:0.1"      inclusive range with a step (negative steps count down)
    "0.2, 0.1, 0.05"   explicit list
    "2^-3:2^-10"       powers of two, one per integer exponent
"""

import math
import re
from decimal import Decimal, InvalidOperation
from typing import List, Optional, Tuple

from pressure_lab.core.errors import ConfigError

_POWER = re.compile(r'^\s*2\s*\^\s*(-?\d+)\s*$')


def _number(token: str) -> float:
    token = token.strip()
    match = _POWER.match(token)
    if match:
        return 2.0 ** int(match.group(1))
    try:
        value = float(token)
    except ValueError as e:
        raise ConfigError(f"Invalid number in grid: {token!r}", token=token) from e
    if not math.isfinite(value):
        raise ConfigError(f"Grid values must be finite: {token!r}", token=token)
    return value


def _range(text: str) -> List[float]:
    parts = [p.strip() for p in text.split(':')]
    if len(parts) == 2 and all(_POWER.match(p) for p in parts):
        a, b = (int(_POWER.match(p).group(1)) for p in parts)
        step = 1 if b >= a else -1
        return [2.0 ** k for k in range(a, b + step, step)]
    if len(parts) != 3:
        raise ConfigError(f"Range must be start:stop:step, got {text!r}", grid=text)
    try:
        start, stop, step = (Decimal(p) for p in parts)
    except InvalidOperation as e:
        raise ConfigError(f"Invalid range {text!r}", grid=text) from e
    if step == 0 or (stop - start) * step < 0:
        raise ConfigError(f"Step {step} does not lead from {start} to {stop}", grid=text)
    # decimal arithmetic keeps "1.0:2.0:0.1" at exactly eleven points
    count = int((stop - start) / step) + 1
    return [float(start + i * step) for i in range(count)]


def parse_grid(text: str, allow_empty: bool = False, order: Optional[str] = None) -> List[float]:
    """
    Parse a grid specification.

    Args:
        text: Range or comma separated list
        allow_empty: Accept an empty specification
        order: 'increasing' or 'decreasing' to sort, None to keep the given order

    Returns:
        List of floats

    Raises:
        ConfigError: If the text is malformed or empty when not allowed
    """
    text = (text or '').strip()
    if not text:
        if allow_empty:
            return []
        raise ConfigError("Grid specification is empty")
    if ':' in text:
        values = _range(text)
    else:
        values = [_number(t) for t in text.split(',') if t.strip()]
        if not values and not allow_empty:
            raise ConfigError("Grid specification is empty")
    if order == 'increasing':
        values = sorted(values)
    elif order == 'decreasing':
        values = sorted(values, reverse=True)
    elif order is not None:
        raise ValueError(f"Unknown order: {order}")
    return values


def parse_bracket(text: str) -> Tuple[float, float]:
    values = parse_grid(text.strip().strip('()[]'))
    if len(values) != 2:
        raise ConfigError(f"Bracket needs two values, got {text!r}", bracket=text)
    return values[0], values[1]


def parse_window(text: str) -> Tuple[float, float, float, float]:
    """x0, x1, y0, y1; the token 'pi' and multiples like '2pi' are accepted."""
    tokens = [t.strip() for t in text.strip().strip('()[]').split(',')]
    if len(tokens) != 4:
        raise ConfigError(f"Window needs x0, x1, y0, y1, got {text!r}", window=text)
    values = []
    for token in tokens:
        if token.endswith('pi'):
            factor = token[:-2].strip().rstrip('*').strip()
            if factor in ('', '+', '-'):
                factor += '1'
            values.append(_number(factor) * math.pi)
        else:
            values.append(_number(token))
    return values[0], values[1], values[2], values[3]
