"""Solver toolkit for two-player zero-sum imperfect-information games:
blueprint equilibrium finding, exploitability measurement, safe subgame
re-solving, and nested solving against action translation."""

from .efg import (
    CHANCE,
    PLAYER1,
    PLAYER2,
    TERMINAL,
    BehavioralStrategy,
    BuildError,
    GameError,
    GameTree,
    Infoset,
    Node,
    StrategyProfile,
    Subgame,
    TreeBuilder,
    UndefinedValueError,
    build_game,
    identify_subgame,
    infoset_value,
    load_game,
    load_strategy,
    node_values,
    reach_probabilities,
    save_game,
    save_strategy,
    subgames_at_public,
    validate,
)
from .equilibrium import (
    CfrSolver,
    SolveResult,
    SolverConfig,
    abstract_cbv_estimates,
    best_response,
    cbv,
    cfr_solve,
    counterfactual_best_response,
    exploitability,
    game_value,
    profile_gap,
    run_cbr,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
