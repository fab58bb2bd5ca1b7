from enum import Enum


class MapFamily(Enum):
    """Supported transcendental map families."""
    EXP = "exp"    # lambda * e^z
    SIN = "sin"    # lambda * sin z
    TAN = "tan"    # lambda * tan z
    ZEXP = "zexp"  # z * e^z


class OrbitFate(Enum):
    """Empirical fate of a forward orbit."""
    ESCAPING = "escaping"
    BOUNDED_RETURNS = "bounded_returns"
    HIT_POLE = "hit_pole"
    UNDECIDED = "undecided"


class PressureRegime(Enum):
    """Empirical label for the three possible shapes of t -> P(f, t)."""
    A = "finite_zero_above_divergence"
    B = "finite_at_t_inf_with_zero"
    C = "no_zero_jump_below_zero"


class BRule(Enum):
    """Weight sequence b_n used in the Patterson-Sullivan sums."""
    CONSTANT_ONE = "constant_one"
    POLY = "poly"


class SupportVerdict(Enum):
    """Outcome of the support dichotomy check."""
    POSITIVE_ON_PANEL = "positive_on_panel"
    PARTIAL = "partial"
    CONCENTRATED = "concentrated"
    VACUOUS = "vacuous"
