"""Exception hierarchy shared by all modules."""


class EgoAlignError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(EgoAlignError, ValueError):
    pass


class CriticalConfigurationError(EgoAlignError):
    """The relative pan is (numerically) zero, so ``s`` diverges."""


class UnderConstrainedError(EgoAlignError):
    def __init__(self, required, provided, detail=""):
        self.required = required
        self.provided = provided
        msg = f"need at least {required} correspondences, got {provided}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NoSolutionError(EgoAlignError):
    pass


class SolverDegenerateError(EgoAlignError):
    pass


class InternalConsistencyError(EgoAlignError):
    pass


class RobustFailureError(EgoAlignError):
    def __init__(self, msg, best=None, mask=None):
        self.best = best
        self.mask = mask
        super().__init__(msg)

    @property
    def best_inliers(self):
        return 0 if self.mask is None else int(sum(self.mask))


class InputConsistencyError(EgoAlignError):
    pass


class GaugeDeficiencyError(EgoAlignError):
    pass
