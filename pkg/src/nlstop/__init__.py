"""Optimal single and multiple stopping under nonlinear expectations on finite trees."""

from .engines import GDriver, Linear, UpperPrior, axiom_check, cond_exp, domination_check, upper_envelope
from .multi import Additive, RefractionSwing, TableReward, freeze, prec_d, solve_d
from .numeric import EqMode
from .single import check_optimality, eps_optimality_report, minimal_optimal, snell
from .tree import FiltrationTree, NodeProcess, StoppingRule, build_binomial, build_tree

__version__ = "0.1.0"

__all__ = [
    "Additive",
    "EqMode",
    "FiltrationTree",
    "GDriver",
    "Linear",
    "NodeProcess",
    "RefractionSwing",
    "StoppingRule",
    "TableReward",
    "UpperPrior",
    "axiom_check",
    "build_binomial",
    "build_tree",
    "check_optimality",
    "cond_exp",
    "domination_check",
    "eps_optimality_report",
    "freeze",
    "minimal_optimal",
    "prec_d",
    "snell",
    "solve_d",
    "upper_envelope",
]
