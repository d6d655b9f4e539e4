"""Exception types shared across the package.

Each maps to one failure family so callers (and tests) can distinguish
bad shapes from bad numerics from bad files without string matching.
"""


class ContractError(ValueError):
    """A precondition on arguments or object state was violated."""


class ShapeError(ContractError):
    """Operands have incompatible shapes; message reports both."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class ParseError(ValueError):
    """Malformed input file; message includes the offending line number."""


class IntegrityError(ValueError):
    """Checkpoint bytes are corrupt, truncated, or not a checkpoint."""


class VersionError(IntegrityError):
    """Checkpoint was written by an incompatible format version."""
