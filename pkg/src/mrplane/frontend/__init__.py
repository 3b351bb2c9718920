"""Map-reduce language front-end: parsing, validation, reference interpretation."""

from .ast import Program, pattern_depth
from .interp import Interpreter, Tensor, interpret, load_weights, resolve_lut
from .parser import FrontendError, ParseError, parse_file, parse_program
from .printer import format_program
from .reference import ReferenceInterpreter, interpret_real
from .validate import TypedProgram, ValidationError, validate

__all__ = [
    "FrontendError", "Interpreter", "ParseError", "Program", "Tensor", "TypedProgram",
    "ReferenceInterpreter", "ValidationError", "format_program", "interpret", "interpret_real", "load_weights", "parse_file",
    "parse_program", "pattern_depth", "resolve_lut", "validate",
]
