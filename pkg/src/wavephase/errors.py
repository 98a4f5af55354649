"""Exception hierarchy shared by every wavephase module."""


class WavePhaseError(Exception):
    pass


class InvalidArgument(WavePhaseError, ValueError):
    pass


class SolverError(WavePhaseError):
    """Iterative solve did not reach tolerance."""

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class TrainingDivergence(WavePhaseError):
    def __init__(self, step, last_finite_loss):
        super().__init__(
            f"non-finite loss at step {step}; last finite loss was {last_finite_loss!r}"
        )
        self.step = step
        self.last_finite_loss = last_finite_loss


class FormatError(WavePhaseError, ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class ConfigError(WavePhaseError, ValueError):
    pass
