"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class PreconditionError(ValueError):
    """A documented precondition on the inputs does not hold."""


class EocInfeasibleError(ValueError):
    """Edge-of-chaos parameters would require a negative bias variance."""

    def __init__(self, kind, s, m, q_star, sigma_b2):
        self.kind = kind
        self.s = s
        self.m = m
        self.q_star = q_star
        self.sigma_b2 = sigma_b2
        super().__init__(
            f"EoC infeasible: bias variance negative (sigma_b2={sigma_b2:.6g}) "
            f"for kind={kind}, s={s}, m={m}, q*={q_star}"
        )


class NoSolutionError(RuntimeError):
    """A root-finding problem has no solution in the search bracket."""


class IdxFormatError(ValueError):
    """Base class for malformed IDX files."""


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    def __init__(self, path, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"{path}: truncated payload, expected {expected} bytes, got {actual}"
        )


class CountMismatchError(IdxFormatError):
    pass


class ShapeError(ValueError):
    """Array dimensions do not match the network or dataset."""
