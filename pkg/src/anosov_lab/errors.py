"""Exception and warning types shared across the package."""


class AnosovLabError(Exception):
    """Base class for all library errors."""


class NoConvergence(AnosovLabError):
    pass


class NotDiffeomorphism(AnosovLabError):
    pass


class ConeViolation(AnosovLabError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DegenerateFrame(AnosovLabError):
    pass


class OrderViolation(AnosovLabError):
    pass


class BudgetExceeded(AnosovLabError):
    pass


class Overflow(AnosovLabError):
    pass


class LostOrbit(AnosovLabError):
    def __init__(self, message, seed=None, residual=None):
        super().__init__(message)
        self.seed = seed
        self.residual = residual


class Collision(AnosovLabError):
    pass


class TangentDrift(AnosovLabError):
    pass


class NoIntersection(AnosovLabError):
    pass


class DegenerateTriangle(AnosovLabError):
    pass


class EigenNoConvergence(AnosovLabError):
    pass


class Underflow(AnosovLabError):
    pass


class NormalizationDegenerate(AnosovLabError):
    pass


class ConfigError(AnosovLabError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class TruncationWarning(UserWarning):
    pass


class AliasWarning(UserWarning):
    pass
