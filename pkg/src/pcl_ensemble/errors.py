"""Exception hierarchy; each top-level class maps to one CLI exit code."""


class PipelineError(Exception):
    exit_code = 1


class InputError(PipelineError):
    """Bad or missing input file, malformed data, invalid configuration."""

    exit_code = 2


class SelectionError(PipelineError):
    """Registry too small for the requested ensemble."""

    exit_code = 3


class LabelAvailabilityError(PipelineError):
    exit_code = 4


class AlignmentError(InputError):
    """Prediction sets / label maps that do not cover the same par_ids."""

    def __init__(self, message: str, only_left=(), only_right=()):
        self.only_left = sorted(only_left)
        self.only_right = sorted(only_right)
        detail = []
        if self.only_left:
            detail.append(f"only in first: {', '.join(self.only_left[:20])}")
        if self.only_right:
            detail.append(f"only in second: {', '.join(self.only_right[:20])}")
        super().__init__(message + ("; " + "; ".join(detail) if detail else ""))


class TrainingError(PipelineError):
    pass
