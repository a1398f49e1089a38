"""Direction-concentration gradient correction, congruency analytics and
small experiments around them."""

from .dcl import DclConfig, DclState, MemoryBank, build_constraint_rows, dcl_apply, should_reset
from .numerics import DegenerateInputError, DimensionError, NumericError, cosine_sim, dot, gram
from .optim import OptimizerConfig, OptimizerState, schedule_lr
from .qp import NnqpProblem, NnqpSolution, correct_gradient, kkt_residual, solve_nnqp

__version__ = "0.1.0"
