"""Average-reward analysis and learning on scalable gridworlds.

Submodules: :mod:`polymix.mdp` (tabular MDPs and chains), :mod:`polymix.analysis`
(mixing times, diameters, bottlenecks), :mod:`polymix.envs` (environment
families), :mod:`polymix.agents` (rho-learning, Q baselines, REINFORCE),
:mod:`polymix.harness` (regret runs, sweeps, scaling fits) and
:mod:`polymix.cli`.
"""

__version__ = "0.1.0"
