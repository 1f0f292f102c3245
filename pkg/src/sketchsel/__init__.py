"""Joint sample selection and operator sketching for streams of graph signals."""
__version__ = "0.1.0"

from .errors import GenerationError, ModelError, NumericError, RankDeficiencyError, SketchError  # noqa: E402
from .sketch import (  # noqa: E402
    DIRECT,
    INVERSE,
    DesignOutcome,
    Selection,
    SketchProblem,
    apply_sketch,
    make_problem,
    objective_direct,
    objective_inverse,
    sketch_direct,
    sketch_inverse,
)
from .samplers import METHODS, select  # noqa: E402

__all__ = [
    "__version__", "SketchError", "ModelError", "NumericError", "RankDeficiencyError",
    "GenerationError", "DIRECT", "INVERSE", "DesignOutcome", "Selection", "SketchProblem",
    "apply_sketch", "make_problem", "objective_direct", "objective_inverse", "sketch_direct",
    "sketch_inverse", "METHODS", "select",
]
