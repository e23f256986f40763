"""Sphereabout layout, clearance validation and candidate path construction.

Frame: sphere-centered, x East, y North, z zenith, meters.
"""

import itertools
import math
from enum import IntEnum, StrEnum
from functools import cached_property
from typing import Any, Self

import numpy as np
from pydantic import BaseModel, ConfigDict, computed_field, model_validator

from .errors import ConfigError, DegenerateArcError, InfeasiblePairError

Vec3 = tuple[float, float, float]

# Rotor-diameter multiples for downwash separation at cruise speed
LATERAL_ROTOR_FACTOR = 4.0
VERTICAL_ROTOR_FACTOR = 1.5


class FlowDirection(StrEnum):
    X_POS = "x+"
    X_NEG = "x-"
    Y_POS = "y+"
    Y_NEG = "y-"
    Z_POS = "z+"
    Z_NEG = "z-"

    @property
    def opposite(self) -> "FlowDirection":
        return _OPPOSITE[self]

    @property
    def is_axial(self) -> bool:
        return self in (FlowDirection.Z_POS, FlowDirection.Z_NEG)

    @property
    def compass(self) -> str:
        return _COMPASS[self]


_OPPOSITE = {
    FlowDirection.X_POS: FlowDirection.X_NEG,
    FlowDirection.X_NEG: FlowDirection.X_POS,
    FlowDirection.Y_POS: FlowDirection.Y_NEG,
    FlowDirection.Y_NEG: FlowDirection.Y_POS,
    FlowDirection.Z_POS: FlowDirection.Z_NEG,
    FlowDirection.Z_NEG: FlowDirection.Z_POS,
}

_COMPASS = {
    FlowDirection.X_POS: "eastbound",
    FlowDirection.X_NEG: "westbound",
    FlowDirection.Y_POS: "northbound",
    FlowDirection.Y_NEG: "southbound",
    FlowDirection.Z_POS: "climbing",
    FlowDirection.Z_NEG: "descending",
}

# Heading azimuth of each horizontal flow, degrees counterclockwise from East
_HEADING_DEG = {
    FlowDirection.X_POS: 0.0,
    FlowDirection.Y_POS: 90.0,
    FlowDirection.X_NEG: 180.0,
    FlowDirection.Y_NEG: 270.0,
}

DIRECTION_ORDER: tuple[FlowDirection, ...] = tuple(FlowDirection)


class Side(StrEnum):
    IN = "in"
    OUT = "out"


class Circulation(StrEnum):
    COUNTERCLOCKWISE = "counterclockwise"
    CLOCKWISE = "clockwise"


class PathKind(IntEnum):
    DIRECT = 1
    SHORT_ARC = 2
    LONG_ARC = 3


class NodeId(BaseModel):
    model_config = ConfigDict(frozen=True)

    flow_direction: FlowDirection
    side: Side

    @property
    def label(self) -> str:
        return f"{self.flow_direction}_{self.side}"

    def __str__(self) -> str:
        return self.label

    @classmethod
    def parse(cls, label: str) -> "NodeId":
        direction, _, side = label.partition("_")
        return cls(flow_direction=FlowDirection(direction), side=Side(side))


def entry(direction: FlowDirection) -> NodeId:
    return NodeId(flow_direction=direction, side=Side.IN)


def exit_(direction: FlowDirection) -> NodeId:
    return NodeId(flow_direction=direction, side=Side.OUT)


ENTRIES: tuple[NodeId, ...] = tuple(entry(d) for d in DIRECTION_ORDER)
EXITS: tuple[NodeId, ...] = tuple(exit_(d) for d in DIRECTION_ORDER)


class ClearanceSpec(BaseModel):
    """Downwash clearance inputs; unspecified clearances default to the rotor-based minima."""

    model_config = ConfigDict(frozen=True)

    rotor_diameter_m: float = 1.375
    cruise_speed_mps: float = 5.0
    lateral_clearance_m: float | None = None
    vertical_clearance_m: float | None = None
    tube_inner_radius_m: float = 2.0
    tube_buffer_m: float = 1.0

    @model_validator(mode="before")
    @classmethod
    def _fill_rotor_minima(cls, data: Any) -> Any:
        if isinstance(data, dict):
            data = dict(data)
            diameter = data.get("rotor_diameter_m", 1.375)
            if not isinstance(diameter, (int, float)):
                return data
            if data.get("lateral_clearance_m") is None:
                data["lateral_clearance_m"] = LATERAL_ROTOR_FACTOR * diameter
            if data.get("vertical_clearance_m") is None:
                data["vertical_clearance_m"] = VERTICAL_ROTOR_FACTOR * diameter
        return data

    @model_validator(mode="after")
    def _check(self) -> Self:
        if self.rotor_diameter_m <= 0:
            raise ValueError("rotor_diameter_m must be positive")
        if self.cruise_speed_mps <= 0:
            raise ValueError("cruise_speed_mps must be positive")
        assert self.lateral_clearance_m is not None
        assert self.vertical_clearance_m is not None
        if self.lateral_clearance_m < self.required_lateral_m:
            raise ValueError(
                f"lateral_clearance_m must be at least {LATERAL_ROTOR_FACTOR:g} x rotor_diameter_m"
            )
        if self.vertical_clearance_m < self.required_vertical_m:
            raise ValueError(
                f"vertical_clearance_m must be at least {VERTICAL_ROTOR_FACTOR:g} x rotor_diameter_m"
            )
        if self.tube_inner_radius_m <= 0:
            raise ValueError("tube_inner_radius_m must be positive")
        if self.tube_buffer_m < 0:
            raise ValueError("tube_buffer_m must be non-negative")
        return self

    @property
    def required_lateral_m(self) -> float:
        return LATERAL_ROTOR_FACTOR * self.rotor_diameter_m

    @property
    def required_vertical_m(self) -> float:
        return VERTICAL_ROTOR_FACTOR * self.rotor_diameter_m


class SphereLayout(BaseModel):
    model_config = ConfigDict(frozen=True)

    radius_m: float
    equatorial_offset_deg: float
    polar_offset_deg: float
    circulation: Circulation
    # keyed by NodeId.label
    nodes: dict[str, Vec3]

    @model_validator(mode="after")
    def _check_nodes(self) -> Self:
        expected = {n.label for n in ENTRIES + EXITS}
        if set(self.nodes) != expected:
            raise ValueError(f"layout must define exactly the nodes {sorted(expected)}")
        for label, xyz in self.nodes.items():
            if abs(math.hypot(*xyz) - self.radius_m) > 1e-9 * self.radius_m:
                raise ValueError(f"node {label} is off the sphere surface")
        return self

    def position(self, node: NodeId) -> np.ndarray:
        return np.asarray(self.nodes[node.label], dtype=float)

    @property
    def node_ids(self) -> list[NodeId]:
        return list(ENTRIES + EXITS)

    @property
    def equatorial_nodes(self) -> list[NodeId]:
        return [n for n in self.node_ids if not n.flow_direction.is_axial]

    @property
    def polar_nodes(self) -> list[NodeId]:
        return [n for n in self.node_ids if n.flow_direction.is_axial]

    def azimuth_deg(self, node: NodeId) -> float:
        x, y, _ = self.nodes[node.label]
        return math.degrees(math.atan2(y, x)) % 360.0

    def adjacent_equatorial_chord_m(self) -> float:
        """Smallest chord between neighbouring equatorial tubes."""
        azimuths = sorted(self.azimuth_deg(n) for n in self.equatorial_nodes)
        gaps = [b - a for a, b in itertools.pairwise(azimuths)]
        gaps.append(360.0 - azimuths[-1] + azimuths[0])
        return chord_length(self.radius_m, math.radians(min(gaps)))


def chord_length(radius_m: float, angle_rad: float) -> float:
    return 2.0 * radius_m * math.sin(angle_rad / 2.0)


def _on_equator(radius_m: float, azimuth_deg: float) -> Vec3:
    az = math.radians(azimuth_deg)
    return (radius_m * math.cos(az), radius_m * math.sin(az), 0.0)


def build_layout(
    radius_m: float,
    equatorial_offset_deg: float = 22.5,
    polar_offset_deg: float = 22.5,
    circulation: Circulation = Circulation.COUNTERCLOCKWISE,
) -> SphereLayout:
    """Place the 12 tube nodes on the sphere.

    Horizontal flows use right-hand circulation: with a counterclockwise layout an x+ UAV enters
    at azimuth 180 + offset and leaves at 360 - offset, sweeping azimuth counterclockwise.
    Axial flows enter and leave through vertically aligned nodes, z+ on the +x side and z- on
    the -x side, each offset from the poles by ``polar_offset_deg``.
    """
    if not radius_m > 0:
        raise ConfigError(f"radius_m: must be positive, got {radius_m!r}")
    if not 0 < equatorial_offset_deg < 45:
        raise ConfigError(
            f"equatorial_offset_deg: must be in (0, 45), got {equatorial_offset_deg!r}"
        )
    if not 0 < polar_offset_deg < 45:
        raise ConfigError(f"polar_offset_deg: must be in (0, 45), got {polar_offset_deg!r}")
    circulation = Circulation(circulation)

    sense = 1.0 if circulation == Circulation.COUNTERCLOCKWISE else -1.0
    nodes: dict[str, Vec3] = {}
    for direction, heading in _HEADING_DEG.items():
        entry_az = (heading + 180.0 + sense * equatorial_offset_deg) % 360.0
        exit_az = (heading - sense * equatorial_offset_deg) % 360.0
        nodes[entry(direction).label] = _on_equator(radius_m, entry_az)
        nodes[exit_(direction).label] = _on_equator(radius_m, exit_az)

    a = radius_m * math.sin(math.radians(polar_offset_deg))
    c = radius_m * math.cos(math.radians(polar_offset_deg))
    nodes[entry(FlowDirection.Z_POS).label] = (a, 0.0, -c)
    nodes[exit_(FlowDirection.Z_POS).label] = (a, 0.0, c)
    nodes[entry(FlowDirection.Z_NEG).label] = (-a, 0.0, c)
    nodes[exit_(FlowDirection.Z_NEG).label] = (-a, 0.0, -c)

    return SphereLayout(
        radius_m=radius_m,
        equatorial_offset_deg=equatorial_offset_deg,
        polar_offset_deg=polar_offset_deg,
        circulation=circulation,
        nodes=nodes,
    )


class ValidationCheck(BaseModel):
    name: str
    measured: float
    threshold: float
    passed: bool
    detail: str = ""


class ValidationReport(BaseModel):
    checks: list[ValidationCheck]

    @computed_field
    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def validate_clearances(
    layout: SphereLayout, clearance: ClearanceSpec, d_min_m: float
) -> ValidationReport:
    checks: list[ValidationCheck] = []

    adjacent = layout.adjacent_equatorial_chord_m()
    assert clearance.lateral_clearance_m is not None
    checks.append(
        ValidationCheck(
            name="lateral_clearance",
            measured=adjacent,
            threshold=clearance.lateral_clearance_m,
            passed=adjacent >= clearance.lateral_clearance_m,
            detail="adjacent equatorial tube chord vs lateral downwash gap",
        )
    )

    vertical = min(abs(layout.nodes[n.label][2]) for n in layout.polar_nodes)
    assert clearance.vertical_clearance_m is not None
    checks.append(
        ValidationCheck(
            name="vertical_clearance",
            measured=vertical,
            threshold=clearance.vertical_clearance_m,
            passed=vertical >= clearance.vertical_clearance_m,
            detail="axial tube height above the equatorial tube plane",
        )
    )

    envelope = 2.0 * clearance.tube_buffer_m
    checks.append(
        ValidationCheck(
            name="safety_envelope",
            measured=d_min_m,
            threshold=envelope,
            passed=d_min_m >= envelope,
            detail="d_min vs two radial buffer zones",
        )
    )

    closest = math.inf
    offenders: list[str] = []
    for a, b in itertools.combinations(layout.node_ids, 2):
        dist = float(np.linalg.norm(layout.position(a) - layout.position(b)))
        closest = min(closest, dist)
        if dist < d_min_m:
            offenders.append(f"{a}/{b}")
    checks.append(
        ValidationCheck(
            name="node_separation",
            measured=closest,
            threshold=d_min_m,
            passed=not offenders,
            detail=", ".join(offenders),
        )
    )
    return ValidationReport(checks=checks)


def feasible_pairs(layout: SphereLayout) -> list[tuple[NodeId, NodeId]]:
    """Entry/exit pairs without a U-turn, entries then exits in direction order."""
    return [
        (i, j)
        for i in ENTRIES
        for j in EXITS
        if j.flow_direction != i.flow_direction.opposite
    ]


def is_feasible(entry_node: NodeId, exit_node: NodeId) -> bool:
    return (
        entry_node.side == Side.IN
        and exit_node.side == Side.OUT
        and exit_node.flow_direction != entry_node.flow_direction.opposite
    )


class PathSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    entry: NodeId
    exit: NodeId
    kind: PathKind
    length_m: float
    central_angle_rad: float
    start: Vec3
    end: Vec3

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.entry.label, self.exit.label, int(self.kind))

    def __str__(self) -> str:
        return f"{self.entry}->{self.exit}#{int(self.kind)}"

    def point_at(self, fraction: np.ndarray | float) -> np.ndarray:
        """Positions at path fractions in [0, 1]; shape (..., 3)."""
        f = np.asarray(fraction, dtype=float)[..., np.newaxis]
        a = np.asarray(self.start)
        b = np.asarray(self.end)
        if self.kind == PathKind.DIRECT:
            return a + f * (b - a)
        radius = float(np.linalg.norm(a))
        u, w = _arc_basis(a, b, self.central_angle_rad)
        if self.kind == PathKind.SHORT_ARC:
            theta = f * self.central_angle_rad
        else:
            theta = -f * (2.0 * math.pi - self.central_angle_rad)
        return radius * (np.cos(theta) * u + np.sin(theta) * w)


def _arc_basis(a: np.ndarray, b: np.ndarray, omega: float) -> tuple[np.ndarray, np.ndarray]:
    u = a / np.linalg.norm(a)
    v = b / np.linalg.norm(b)
    w = (v - math.cos(omega) * u) / math.sin(omega)
    return u, w / np.linalg.norm(w)


def make_path(
    layout: SphereLayout, entry_node: NodeId, exit_node: NodeId, kind: PathKind
) -> PathSpec:
    if not is_feasible(entry_node, exit_node):
        raise InfeasiblePairError(f"Pair {entry_node}->{exit_node} is not in the feasibility set")
    kind = PathKind(kind)
    a = layout.position(entry_node)
    b = layout.position(exit_node)
    r = layout.radius_m
    cos_omega = float(np.clip(np.dot(a, b) / (r * r), -1.0, 1.0))
    omega = math.acos(cos_omega)

    if kind == PathKind.DIRECT:
        length = float(np.linalg.norm(b - a))
    else:
        if math.sin(omega) < 1e-9:
            raise DegenerateArcError(
                f"No unique great circle through {entry_node} and {exit_node}; "
                "perturb the layout or use the direct path"
            )
        length = r * omega if kind == PathKind.SHORT_ARC else r * (2.0 * math.pi - omega)

    return PathSpec(
        entry=entry_node,
        exit=exit_node,
        kind=kind,
        length_m=length,
        central_angle_rad=omega,
        start=(float(a[0]), float(a[1]), float(a[2])),
        end=(float(b[0]), float(b[1]), float(b[2])),
    )


def candidate_paths(layout: SphereLayout) -> list[PathSpec]:
    """All 90 candidates: feasible pairs in order, three kinds each."""
    return [
        make_path(layout, i, j, kind)
        for i, j in feasible_pairs(layout)
        for kind in PathKind
    ]


class SampledPath(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    spec: PathSpec
    points: np.ndarray
    spacing_m: float

    @cached_property
    def cumulative_m(self) -> np.ndarray:
        steps = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate(([0.0], np.cumsum(steps)))

    def point_at_distance(self, distance_m: np.ndarray) -> np.ndarray:
        """Positions along the polyline at travelled distances, clamped to its ends."""
        cum = self.cumulative_m
        # rescale so the polyline end coincides with the analytic length
        s = np.clip(np.asarray(distance_m, dtype=float), 0.0, self.spec.length_m)
        s = s * (cum[-1] / self.spec.length_m)
        return np.stack(
            [np.interp(s, cum, self.points[:, axis]) for axis in range(3)], axis=-1
        )


def sample_path(spec: PathSpec, layout: SphereLayout, max_spacing_m: float) -> SampledPath:
    if not max_spacing_m > 0:
        raise ValueError(f"max_spacing_m must be positive, got {max_spacing_m!r}")
    count = math.ceil(spec.length_m / max_spacing_m) + 1
    fractions = np.linspace(0.0, 1.0, count)
    points = spec.point_at(fractions)
    points[0] = layout.position(spec.entry)
    points[-1] = layout.position(spec.exit)
    return SampledPath(spec=spec, points=points, spacing_m=max_spacing_m)
