"""Kelley-like method for nonsmooth convex minimization with certified bounds."""

from .core import (Bundle, Cut, OracleFault, OracleSample, ProblemSpec, RunRecord,
                   bundle_append, evaluate)
from .dual import (DualNonconvergence, DualProblem, HardStepSolution, HorizonError,
                   SimplexPoint, build_dual, certify, dual_objective, recover_primal,
                   solve_dual, solve_hard_step, solve_kelley_subproblem)
from .klm import (EveryK, GapDriven, KlmState, PureEasy, PureHard, RunResult, StepPolicy,
                  aggregate_output, easy_step, hard_step, kelley_baseline, klm_run,
                  parse_policy, subgradient_baseline)

__version__ = "0.1.0"
