"""Neural emulators of dissipative dynamics with a certified energy projection."""

from .dynamics import KSConfig, Trajectory, build_pairs, simulate_ks, simulate_lorenz
from .metrics import evaluate
from .energy import QuadraticEnergy, alpha_threshold
from .projection import dissipative_project
from .rollout import rollout, verify_dissipativity
from .training import TrainConfig, TrainState, init_state, train

__version__ = "0.1.0"

__all__ = [
    "KSConfig", "QuadraticEnergy", "TrainConfig", "TrainState", "Trajectory", "alpha_threshold",
    "build_pairs", "dissipative_project", "evaluate", "init_state", "rollout", "simulate_ks", "simulate_lorenz", "train", "verify_dissipativity",
]
