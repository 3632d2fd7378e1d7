"""Exception hierarchy. The CLI maps each class to an exit code."""


class ReconError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1


class DomainError(ReconError, ValueError):
    """A kernel was evaluated at its singularity or a precondition failed."""


class ParseError(ReconError):
    exit_code = 2

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


class ResourceError(ReconError, MemoryError):
    """A dense matrix would exceed the configured memory budget."""

    exit_code = 3

    def __init__(self, message, max_points=None):
        if max_points is not None:
            message += f" (largest feasible point count: {max_points})"
        super().__init__(message)
        self.max_points = max_points


class NumericalBreakdown(ReconError, ArithmeticError):
    exit_code = 4

    def __init__(self, iteration):
        super().__init__(f"non-finite value encountered in CG at iteration {iteration}")
        self.iteration = iteration


class NoSurfaceError(ReconError):
    exit_code = 5

    def __init__(self, message="no surface crossed: no cell straddles the iso-value; "
                 "try a different alpha or depth"):
        super().__init__(message)


class StageError(ReconError):
    """Wraps an error raised inside a pipeline stage, keeping the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


class ConvergenceWarning(UserWarning):
    pass
