"""Mini-batch Markovian actor-critic and natural actor-critic on finite MDPs,
with exact linear-algebra oracles for checking them."""

__version__ = "0.1.0"

from .actor import ActorConfig, RunTrace, ac_step, nac_step, run  # noqa: E402
from .critic import CriticModel, LinearSaProblem, linear_sa, minibatch_td  # noqa: E402
from .generators import generate_mdp, random_garnet, two_state_chain  # noqa: E402
from .mdp import FiniteMdp, KernelChoice, PathCursor, Trajectory, TransitionSample  # noqa: E402
from .policy import PolicyFeatures, SoftmaxPolicy  # noqa: E402

__all__ = [
    "ActorConfig", "CriticModel", "FiniteMdp", "KernelChoice", "LinearSaProblem", "PathCursor",
    "PolicyFeatures", "RunTrace", "SoftmaxPolicy", "Trajectory", "TransitionSample", "ac_step",
    "generate_mdp", "linear_sa", "minibatch_td", "nac_step", "random_garnet", "run",
    "two_state_chain",
]
