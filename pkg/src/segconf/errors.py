"""Exception hierarchy.

Every error carries a ``category`` used by the CLI to pick its exit code:
``io`` -> 1, ``validation`` -> 2, ``degenerate`` -> 3.
"""


class SegConfError(Exception):
    category = "validation"


class MissingFile(SegConfError, FileNotFoundError):
    category = "io"


class ShapeMismatch(SegConfError):
    pass


class NotADistribution(SegConfError):
    pass


class NegativeProbability(SegConfError):
    pass


class InvalidClassIndex(SegConfError):
    pass


class InvalidClassSet(SegConfError):
    pass


class DimensionMismatch(SegConfError):
    pass


class ClassSetMismatch(SegConfError):
    pass


class UnknownSegment(SegConfError, KeyError):
    pass


class MissingStatistic(SegConfError):
    pass


class InvalidSpec(SegConfError):
    pass


class DegenerateStatistic(SegConfError):
    category = "degenerate"


class TooFewPixels(SegConfError):
    category = "degenerate"


class NoValidPixels(SegConfError):
    category = "degenerate"


class DegenerateVariance(SegConfError):
    category = "degenerate"


class EmptyPopulation(SegConfError):
    category = "degenerate"
