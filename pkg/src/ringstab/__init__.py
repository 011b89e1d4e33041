"""Stability analysis and simulation of a stochastic ring automaton with
entry queues, its multiclass-network twin, fluid scaling, overload growth
rates and slotted-ring LANs."""

from .analytics import (InfiniteDwellError, ParameterError, ParameterSetting,
                        StabilityReport, Verdict, dwell_distribution, load_profile,
                        marginal_distribution, stability_region, stability_verdict,
                        traffic_solution, visit_matrix)
from .randomness import UniformField
from .sim_mcn import McnState, audit, run_mcn, step_mcn
from .sim_ring import RingState, estimate_marginals, queue_growth_slopes, run, step

__version__ = "0.1.0"
