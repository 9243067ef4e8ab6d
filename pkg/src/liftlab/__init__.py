"""liftlab: lift-and-project experiments for set cover and knapsack.

Exact-rational instances and brute-force oracles, greedy baselines, a
guess-then-greedy set cover approximation, hierarchy liftings with a
conditioning-based rounding for set cover, an exact feasibility certificate
for the lifted covering LP, and a PSD-lift rounding for knapsack.
"""

from .instances import (
    GenerationConfig,
    KnapsackInstance,
    Rational,
    SetCoverInstance,
    exact_knapsack_opt,
    exact_setcover_opt,
    gen_uniform_frequency_instance,
    harmonic,
    parse_knapsack,
    parse_setcover,
)

__all__ = [
    "GenerationConfig",
    "KnapsackInstance",
    "Rational",
    "SetCoverInstance",
    "exact_knapsack_opt",
    "exact_setcover_opt",
    "gen_uniform_frequency_instance",
    "harmonic",
    "parse_knapsack",
    "parse_setcover",
]
