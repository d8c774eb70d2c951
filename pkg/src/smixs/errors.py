"""Exception types raised across the package."""


class SmixsError(Exception):
    """Base class for every error raised by smixs."""


class TooFewKnots(SmixsError, ValueError):
    pass


class NonIncreasingKnots(SmixsError, ValueError):
    pass


class DimensionMismatch(SmixsError, ValueError):
    pass


class NotPositiveDefinite(SmixsError, ArithmeticError):
    pass


class DegenerateWeight(SmixsError, ArithmeticError):
    """A cluster's total responsibility fell below the weight floor."""


class EmptyCluster(DegenerateWeight):
    def __init__(self, k, weight=None):
        self.k = k
        self.weight = weight
        msg = f"cluster {k} lost all of its members"
        if weight is not None:
            msg += f" (total responsibility {weight:.3g})"
        super().__init__(msg)


class NonPositiveVariance(SmixsError, ValueError):
    pass


class AllClustersUnderflow(SmixsError, ArithmeticError):
    pass


class NonFiniteObjective(SmixsError, ArithmeticError):
    pass


class LeverageSingularity(SmixsError, ArithmeticError):
    """Leave-one-out denominator ``1 - S_jj z_ik`` is numerically zero."""


class NonFiniteCv(SmixsError, ArithmeticError):
    pass


class AllCandidatesFailed(SmixsError, ArithmeticError):
    pass


class TooManyClusters(SmixsError, ValueError):
    pass


class AllRestartsFailed(SmixsError, RuntimeError):
    def __init__(self, failures):
        self.failures = list(failures)
        detail = "; ".join(f"restart {r}: {msg}" for r, msg in self.failures[:5])
        super().__init__(f"all {len(self.failures)} restarts failed ({detail})")


class BadLevel(SmixsError, ValueError):
    pass


class UnpairedResults(SmixsError, ValueError):
    pass
