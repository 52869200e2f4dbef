r"""
Exceptions raised by the library.

All errors derive from :class:`RssgeoError`, which is a :class:`ValueError` so that
callers that only guard against invalid input keep working.
"""

__all__ = [
    "RssgeoError",
    "ScenarioError",
    "ZeroDistance",
    "DimensionMismatch",
    "ZeroVector",
    "ZeroColumn",
    "DegenerateSupport",
    "NoAdmissibleColumn",
    "ZeroSignature",
    "Degenerate",
    "QuadratureFailure",
    "EmptyStream",
    "NonpositiveRss",
    "InsufficientPoints",
    "CollinearDegenerate",
]


class RssgeoError(ValueError):
    pass


class ScenarioError(RssgeoError):
    """Invalid or unreadable scenario description."""


class ZeroDistance(RssgeoError):
    """A sensor coincides with a location, so the pathloss gain is unbounded."""


class DimensionMismatch(RssgeoError):
    pass


class ZeroVector(RssgeoError):
    pass


class ZeroColumn(RssgeoError):
    pass


class DegenerateSupport(RssgeoError):
    r"""
    The measurement columns on a support are rank-deficient.

    Attributes
    ----------
    index : int | None
        The newest offending grid index, which the solver drops.
    """

    def __init__(self, msg: str, index: int | None = None) -> None:
        super().__init__(msg)
        self.index = index


class NoAdmissibleColumn(RssgeoError):
    """No column is left to extend the support with."""


class ZeroSignature(RssgeoError):
    pass


class Degenerate(RssgeoError):
    """Two candidate locations produce indistinguishable normalized signatures."""


class QuadratureFailure(RssgeoError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance within budget."""


class EmptyStream(RssgeoError):
    pass


class NonpositiveRss(RssgeoError):
    pass


class InsufficientPoints(RssgeoError):
    pass


class CollinearDegenerate(RssgeoError):
    """All regression abscissae coincide."""
