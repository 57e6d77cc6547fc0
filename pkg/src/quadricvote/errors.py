"""Exception hierarchy shared by the fitting, voting and detection layers."""


class QuadricError(Exception):
    """Base class for all library errors."""


class NoPolar(QuadricError):
    """The polar plane of a point does not exist (Q p = 0)."""


class NotCentral(QuadricError):
    """The quadric has no finite center."""


class DegenerateConfiguration(QuadricError):
    """A fit has no unique solution for the given points."""


class DegenerateBasis(DegenerateConfiguration):
    """A basis does not yield the expected null-space dimension."""


class RankDeficient(QuadricError):
    """Extra constraints add nothing along the null-space directions."""


class NoConsensus(QuadricError):
    """The accumulator peak did not reach the minimum vote count."""


class ImaginaryRadius(QuadricError):
    """Sphere coefficients describe an empty real locus."""


class Exhausted(QuadricError):
    """Basis sampling gave up after its attempt budget."""


class EmptyCloud(QuadricError):
    """An operation received a point cloud without points."""


class DegenerateNeighborhood(QuadricError):
    """A local neighborhood is too flat to define a normal."""


class UnsampleableSurface(QuadricError):
    """Random rays rarely hit the surface inside the unit ball."""


class ParseError(QuadricError):
    """A point-cloud file is malformed."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class FormatUnsupported(QuadricError):
    """The file extension or PLY layout is not supported."""
