"""Exception hierarchy. Every error is a ``ValueError`` so callers that only
care about bad input can catch that."""


class FracbumpError(ValueError):
    pass


class CapacityError(FracbumpError):
    """Requested structure exceeds a memory/size guard."""


class DomainError(FracbumpError):
    """Point or cube outside the region a structure covers."""


class ParameterError(FracbumpError):
    pass


class MismatchError(FracbumpError):
    """Objects that must share a tree (or family) do not."""


class ZeroMassError(FracbumpError):
    """Average over a cube of zero weight mass."""


class DegenerateInputError(FracbumpError):
    pass


class ConfigError(FracbumpError):
    pass
