"""Exception and warning types shared across the package."""

from __future__ import annotations


class OOGError(Exception):
    """Base class for every error raised by oogkit."""


# --- input validation -----------------------------------------------------

class ValidationError(OOGError):
    """Input failed validation; the CLI maps these to exit code 2."""


class ParseError(ValidationError):
    pass


class SchemaError(ValidationError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class VersionError(ValidationError):
    pass


# --- algorithmic failures -------------------------------------------------

class AlgorithmError(OOGError):
    """A well-formed input the algorithms could not handle (exit code 3)."""


class TooFewPoints(AlgorithmError):
    pass


class DegenerateCloud(AlgorithmError):
    pass


class NoVisibleKeypoints(AlgorithmError):
    pass


class SeriesTooShort(AlgorithmError):
    pass


class NoMotion(AlgorithmError):
    pass


class NoMatch(AlgorithmError):
    pass


class AtFinal(AlgorithmError):
    """The observed contact set is the plan's final state."""

    def __init__(self, index: int):
        super().__init__(f"observed state matches final keyframe {index}")
        self.index = index


class RegistrationFailed(AlgorithmError):
    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class DegenerateTrajectory(AlgorithmError):
    pass


class DegenerateAxis(AlgorithmError):
    def __init__(self, axis: int):
        super().__init__(f"trajectory span along axis {'xyz'[axis]} is below epsilon")
        self.axis = axis


class NonFiniteGradient(AlgorithmError):
    pass


class DidNotConverge(AlgorithmError):
    """Optimization finished above tolerance. ``result`` still holds the best iterate."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class PlacementFailure(AlgorithmError):
    pass


# --- warnings -------------------------------------------------------------

class MergeWarning(UserWarning):
    pass


class AmbiguousMatchWarning(UserWarning):
    pass


class AmbiguousReference(UserWarning):
    pass
