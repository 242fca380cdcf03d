"""Coverage-guided fuzzing with Shapley attribution of input byte positions.

Byte positions that helped discover new edges accumulate credit, families of
length-preserving descendants share that credit, and a LinUCB bandit turns
it into a byte-selection distribution for havoc mutation.
"""

from byteshap.coverage import CoverageMap, absorb, diff_new, gain
from byteshap.errors import ExecutionError, StructuralError, TargetTimeout

__all__ = [
    "CoverageMap",
    "ExecutionError",
    "StructuralError",
    "TargetTimeout",
    "absorb",
    "diff_new",
    "gain",
]

__version__ = "0.1.0"
