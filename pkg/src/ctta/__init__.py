"""Online continual test-time adaptation on drifting toy streams.

An uncertainty-gated replay buffer, a class-relation preservation loss and an
EMA teacher-student pair adapt a small numpy MLP batch by batch.
"""

from .adapter import AdaptationConfig, adapt_step, init_state, run_stream
from .buffer import UncertaintyBuffer, UncertaintyThreshold, entropy, sample_replay
from .errors import CTTAError
from .relation import build_intrinsic_graph, crp_loss, estimate_target_graph

__all__ = [
    "AdaptationConfig",
    "CTTAError",
    "UncertaintyBuffer",
    "UncertaintyThreshold",
    "adapt_step",
    "build_intrinsic_graph",
    "crp_loss",
    "entropy",
    "estimate_target_graph",
    "init_state",
    "run_stream",
    "sample_replay",
]
