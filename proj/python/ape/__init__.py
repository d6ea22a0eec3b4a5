"""Python surface of the task-contract harness core."""

from ._ape import (
    ApeError,
    ContentStore,
    Retrieval,
    count_effective_lines,
    efficiency_curve,
    glob_error,
    glob_match,
    majority_vote,
    parse_contract,
    render_unified,
    sha256_hex,
    toy_check,
    validate_contract,
)

__all__ = [
    "ApeError",
    "ContentStore",
    "Retrieval",
    "count_effective_lines",
    "efficiency_curve",
    "glob_error",
    "glob_match",
    "majority_vote",
    "parse_contract",
    "render_unified",
    "sha256_hex",
    "toy_check",
    "validate_contract",
]

__version__ = "0.1.0"
