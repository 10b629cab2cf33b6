"""Tabular agents behind a common step-wise interface, plus the REINFORCE agent."""

from ..errors import InvalidArgument
from .base import ALGORITHMS, Agent, AgentConfig, ModelEstimate
from .qlearning import DynaQ, ModelNStepTD, QAgent
from .rho import RhoLearner

_KINDS = {
    "rho_on": RhoLearner,
    "rho_off": RhoLearner,
    "q_on": QAgent,
    "q_off": QAgent,
    "dyna": DynaQ,
    "nstep_td": ModelNStepTD,
}


def make_agent(n_states, n_actions, config: AgentConfig) -> Agent:
    if config.algorithm not in _KINDS:
        raise InvalidArgument(f"unknown algorithm {config.algorithm!r}", parameter="algorithm")
    return _KINDS[config.algorithm](n_states, n_actions, config)


__all__ = [
    "ALGORITHMS",
    "Agent",
    "AgentConfig",
    "DynaQ",
    "ModelEstimate",
    "ModelNStepTD",
    "QAgent",
    "RhoLearner",
    "make_agent",
]
