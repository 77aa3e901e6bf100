"""Distributed online primal-dual push-sum optimization.

Simulates multi-agent online convex optimization with coupled inequality
constraints over time-varying directed communication graphs, measures
regret and constraint violation against a certified hindsight comparator,
and ships the vehicle-charging benchmark used in the experiments.
"""

from .algorithm import (AgentState, StepSchedule, balanced_baseline_step,
                        centralized_step, dual_step, init_states, mix,
                        primal_step, schedule_values, tracking_step)
from .engine import (RunConfig, RunTrace, SweepResult, config_from_specs, run,
                     run_sweep, trace_filename, write_trace_csv)
from .geometry import (Box, ConvexSet, Halfspace, NonnegOrthant, Polyhedron,
                       project, project_dykstra)
from .graph import (Assumption1Report, GraphSequence, WeightMatrix,
                    check_assumption1, generate_switching_cycle,
                    load_graph_sequence, make_column_stochastic,
                    save_graph_sequence)
from .metrics import (OfflineOptimum, RateFit, constraint_violation, fit_rate,
                      regret, solve_offline, theoretical_exponents)
from .problem import (BoundEstimates, ConstantLinearProblem, OnlineProblem,
                      PevInstance, QuadraticTracking, estimate_bounds,
                      load_problem, make_pev, save_problem)

__version__ = "0.1.0"
