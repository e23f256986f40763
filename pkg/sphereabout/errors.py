class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key(s)."""


class DegenerateArcError(ValueError):
    """Arc requested between antipodal (or coincident) nodes."""


class InfeasiblePairError(ValueError):
    """Entry/exit pair outside the feasibility set, or unknown to the conflict graph."""


class EmptyPolylineError(ValueError):
    """Distance query on a polyline without points."""
