from .core import (
    CommGraph,
    GameContractError,
    MultiTeamGame,
    StepResult,
    TeamSpec,
    Transition,
    complete_graph,
    proximity_graph,
    random_sparse_graph,
)
from .lqr import LinearQuadraticGame, LQRConfig, lqr_cost, random_pd_matrix
from .navigation import NavigationConfig, UnicycleNavigationGame, navigation_cost, proximity_penalty
from .pursuit import PursuitConfig, PursuitEvasionGame, catches, pursuit_cost

__all__ = [
    "CommGraph",
    "GameContractError",
    "LQRConfig",
    "LinearQuadraticGame",
    "MultiTeamGame",
    "NavigationConfig",
    "PursuitConfig",
    "PursuitEvasionGame",
    "StepResult",
    "TeamSpec",
    "Transition",
    "UnicycleNavigationGame",
    "catches",
    "complete_graph",
    "lqr_cost",
    "navigation_cost",
    "proximity_graph",
    "proximity_penalty",
    "pursuit_cost",
    "random_pd_matrix",
    "random_sparse_graph",
]
