"""Exception types shared across the package."""


class CindesError(Exception):
    """Base class for package-specific failures."""


class DataFormatError(CindesError):
    """Malformed input data (CSV schema, row length, non-numeric fields)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CoverageError(CindesError):
    """Reference distribution does not cover the observed responses."""


class TrainingDivergedError(CindesError):
    """Non-finite loss or gradients encountered during optimization."""


class SamplerDivergedError(CindesError):
    """Non-finite state encountered in the reverse diffusion recursion."""

    def __init__(self, step):
        super().__init__(f"non-finite sampler state at step {step}")
        self.step = step
