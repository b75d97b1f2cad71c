"""Exception hierarchy shared by every roofmetrics module."""


class RoofMetricsError(Exception):
    """Base class; ``module`` names the subsystem that raised it."""

    module = "roofmetrics"

    def to_dict(self):
        return {"module": self.module, "error": type(self).__name__, "message": str(self)}


class GeometryError(RoofMetricsError, ValueError):
    module = "geometry"


class EmptySurfaceError(GeometryError):
    pass


class EmptyCloudError(GeometryError):
    pass


class FlightPlanError(RoofMetricsError, ValueError):
    module = "flightplan"


class RegistrationError(RoofMetricsError, ValueError):
    module = "registration"


class UnderdeterminedError(RegistrationError):
    pass


class NoOverlapError(RegistrationError):
    """ICP lost every correspondence; ``result`` holds the last valid state."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class MetricsError(RoofMetricsError, ValueError):
    module = "metrics"


class SceneError(RoofMetricsError, ValueError):
    module = "synth"


class ParseError(RoofMetricsError, ValueError):
    """Malformed input file. ``line`` or ``offset`` locate the problem when known."""

    module = "formats"

    def __init__(self, message, path=None, line=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.path = path
        self.line = line
        self.offset = offset

    def to_dict(self):
        d = super().to_dict()
        d.update(path=None if self.path is None else str(self.path), line=self.line, offset=self.offset)
        return d


class ConfigError(RoofMetricsError, ValueError):
    module = "config"
