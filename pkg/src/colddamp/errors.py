"""Exception types shared across the package."""


class ColdDampError(Exception):
    """Base class for all package errors."""


class NoConvergence(ColdDampError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NotStable(ColdDampError):
    def __init__(self, max_real_part):
        super().__init__(
            f"drift matrix not Hurwitz: max Re(eigenvalue) = {max_real_part:.6g}"
        )
        self.max_real_part = max_real_part


class SolveFailed(ColdDampError):
    pass


class Unstable(ColdDampError):
    def __init__(self, message, damping=None):
        super().__init__(message)
        self.damping = damping


class Degenerate(ColdDampError):
    pass


class QuadratureDiverged(ColdDampError):
    pass


class AllZeroCouplings(ColdDampError):
    pass


class FitFailed(ColdDampError):
    pass


class NoStableDelay(ColdDampError):
    pass


class EigenFailure(ColdDampError):
    pass
