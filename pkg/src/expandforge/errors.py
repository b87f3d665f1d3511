"""Exception taxonomy shared across the package.

Each class maps to one failure kind named in the public contracts, so tests
and the CLI can match on type rather than message text.
"""


class ExpandForgeError(Exception):
    """Base class for all package errors."""


class ParameterError(ExpandForgeError):
    """An argument value is outside its documented range."""


class ShapeError(ExpandForgeError):
    """Array dimensions do not line up."""


class SimplexError(ExpandForgeError):
    """A vector that must be a probability distribution is not one."""


class NumericInputError(ExpandForgeError):
    """Non-finite values where finite reals are required."""


class DegenerateVectorError(ExpandForgeError):
    """A vector with near-zero norm where a direction is required."""


class RankError(ExpandForgeError):
    """Training data rank is too low for the requested basis size."""


class CoverageError(ExpandForgeError):
    """A class is missing exemplars or samples it must have."""


class FormatError(ExpandForgeError):
    """A serialized file does not follow its container format."""


class InputError(ExpandForgeError):
    """An input collection is empty or otherwise unusable."""


class NumericDivergenceError(ExpandForgeError):
    """The optimization objective became non-finite."""
