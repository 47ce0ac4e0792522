from typing import Optional


class MapMatchError(Exception):
    """Base class for all map matching errors. `exit_code` is used by the CLI."""

    exit_code = 1


class InputError(MapMatchError):
    exit_code = 2


class ParseError(InputError):
    """A malformed record in an input file."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class MapFormatError(InputError):
    pass


class InvalidCoordinate(InputError):
    pass


class InvalidSpline(InputError):
    pass


class DuplicateLane(InputError):
    pass


class InvalidRoute(InputError):
    pass


class ConfigError(InputError):
    pass


class UnknownRoad(InputError):
    def __init__(self, road_id: int):
        self.road_id = road_id
        super().__init__(f"Unknown road id: {road_id}")


class EmptyLattice(MapMatchError):
    exit_code = 3


class EvaluationError(MapMatchError):
    exit_code = 4


class LengthMismatch(EvaluationError):
    pass


class DegenerateEval(EvaluationError):
    pass


class RegistrationDegenerate(MapMatchError):
    """ICP could not find enough correspondences; callers fall back to the raw pose."""
