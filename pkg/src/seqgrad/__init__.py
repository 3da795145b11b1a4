"""Sequential (block-coordinate) gradient dynamics on real analytic Morse systems."""
from .expr import (AnalyticFunction, AnalyticMap, EvaluationError, compose,
                   parse_function)

__version__ = "0.1.0"

__all__ = ["AnalyticFunction", "AnalyticMap", "EvaluationError", "compose",
           "parse_function", "__version__"]
