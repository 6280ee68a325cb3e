"""Exception hierarchy shared by all sa_lab modules."""


class SALabError(Exception):
    """Base class for runtime failures raised by the laboratory."""


class ConfigError(SALabError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None, path=None):
        self.key = key
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}: "
        if key is not None:
            where += f"[{key}] "
        super().__init__(where + message)


# spectral-core
class NotHurwitz(SALabError):
    pass


class SolverDivergence(SALabError):
    pass


class NotPSD(SALabError):
    pass


class NotSPD(SALabError):
    pass


# noise-models
class Reducible(SALabError):
    pass


class NotCentered(SALabError):
    pass


class SingularSystem(SALabError):
    pass


# sa-engine
class NumericalBlowup(SALabError):
    def __init__(self, message, trajectory=None, step=None):
        self.trajectory = trajectory
        self.step = step
        super().__init__(message)


class DegeneratePartition(SALabError):
    pass


class SingularGamma(SALabError):
    pass


class MissingPath(SALabError):
    pass


# ou-reference
class StepTooLarge(SALabError):
    pass


# transport-metrics
class UnequalSizes(SALabError):
    pass


class SizeLimit(SALabError):
    pass


# experiments
class InsufficientCheckpoints(SALabError):
    pass


class BadExponent(SALabError):
    pass


class EnsembleTooSmall(SALabError):
    pass


class WrongNoiseKind(SALabError):
    pass


class NotStronglyConvex(SALabError):
    pass


class BadParameters(SALabError):
    pass
