import json
import logging
import os
import tomllib
import types
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Literal, Self, Union, get_args, get_origin

from packaging.requirements import Requirement
from packaging.version import InvalidVersion, Version
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .conflict import DEFAULT_DT_S, ConflictPolicy, SharedNodeRule
from .errors import ConfigError
from .experiments import ExperimentConfig
from .geometry import Circulation, ClearanceSpec, SphereLayout
from .sensitivity import McConfig, TargetSet

logger = logging.getLogger(__name__)

TOOL_NAME = "sphereabout"
try:
    TOOL_VERSION = version(TOOL_NAME)
except PackageNotFoundError:
    TOOL_VERSION = "0.0.0"

CONFIG_ENV = "SPHEREABOUT_CONFIG"


class SphereaboutConfig(BaseModel):
    """Resolved run configuration; every module's knobs in one flat table."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    radius_m: float = Field(gt=0)
    d_min_m: float = Field(ge=0)

    equatorial_offset_deg: float = Field(default=22.5, gt=0, lt=45)
    polar_offset_deg: float = Field(default=22.5, gt=0, lt=45)
    circulation: Circulation = Circulation.COUNTERCLOCKWISE

    rotor_diameter_m: float = 1.375
    cruise_speed_mps: float = 5.0
    lateral_clearance_m: float | None = None
    vertical_clearance_m: float | None = None
    tube_inner_radius_m: float = 2.0
    tube_buffer_m: float = 1.0

    max_spacing_m: float = Field(default=0.1, gt=0)
    shared_node_rule: SharedNodeRule = SharedNodeRule.MASK_NEAR_SHARED_NODE
    shared_node_mask_radius_m: float | None = None
    dt_s: float = Field(default=DEFAULT_DT_S, gt=0)

    n_uavs: int = Field(default=6, ge=2, le=6)
    direct_check_rule: SharedNodeRule | None = None

    montecarlo_mode: Literal["fixed_lag", "random_velocity"] = "fixed_lag"
    n_experiments: int = Field(default=3000, gt=0)
    seed: int = Field(default=2024, ge=0, lt=2**64)
    velocity_min_mps: float = Field(default=1.0, gt=0)
    velocity_max_mps: float = Field(default=5.0, gt=0)
    target_set: TargetSet = TargetSet.COLLISION_SCENARIOS

    travel_radii_m: list[float] = [13.0, 26.0]
    travel_velocities_mps: list[float] = [1.0, 2.0, 3.0, 4.0, 5.0]

    @model_validator(mode="after")
    def _check(self) -> Self:
        if self.velocity_min_mps > self.velocity_max_mps:
            raise ValueError("velocity_min_mps must not exceed velocity_max_mps")
        return self

    @property
    def mask_radius_m(self) -> float:
        if self.shared_node_mask_radius_m is None:
            return 2 * self.tube_inner_radius_m
        return self.shared_node_mask_radius_m

    def clearance(self) -> ClearanceSpec:
        values: dict[str, Any] = {
            "rotor_diameter_m": self.rotor_diameter_m,
            "cruise_speed_mps": self.cruise_speed_mps,
            "tube_inner_radius_m": self.tube_inner_radius_m,
            "tube_buffer_m": self.tube_buffer_m,
        }
        if self.lateral_clearance_m is not None:
            values["lateral_clearance_m"] = self.lateral_clearance_m
        if self.vertical_clearance_m is not None:
            values["vertical_clearance_m"] = self.vertical_clearance_m
        return ClearanceSpec(**values)

    def policy(self) -> ConflictPolicy:
        return ConflictPolicy(
            d_min_m=self.d_min_m,
            max_spacing_m=self.max_spacing_m,
            shared_node_mask_radius_m=self.mask_radius_m,
            shared_node_rule=self.shared_node_rule,
        )

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            radius_m=self.radius_m,
            d_min_m=self.d_min_m,
            n_uavs=self.n_uavs,
            policy=self.policy(),
            equatorial_offset_deg=self.equatorial_offset_deg,
            polar_offset_deg=self.polar_offset_deg,
            circulation=self.circulation,
            direct_check_rule=self.direct_check_rule,
        )

    def layout(self) -> SphereLayout:
        return self.experiment().layout()

    def montecarlo(self) -> McConfig:
        return McConfig(
            n_experiments=self.n_experiments,
            seed=self.seed,
            velocity_range_mps=(self.velocity_min_mps, self.velocity_max_mps),
            dt_s=self.dt_s,
            target_set=self.target_set,
            reference_speed_mps=self.cruise_speed_mps,
        )


def _type_name(annotation: Any) -> str:
    origin = get_origin(annotation)
    if origin in (Union, types.UnionType):
        return " or ".join(_type_name(a) for a in get_args(annotation) if a is not type(None))
    if origin is Literal:
        return " | ".join(repr(a) for a in get_args(annotation))
    if origin is list:
        (inner,) = get_args(annotation)
        return f"list of {_type_name(inner)}"
    if isinstance(annotation, type) and issubclass(annotation, str):
        members = getattr(annotation, "__members__", None)
        if members:
            return " | ".join(repr(m.value) for m in members.values())
    return getattr(annotation, "__name__", str(annotation))


def format_validation_error(source: str, exc: ValidationError) -> str:
    fields = SphereaboutConfig.model_fields
    lines = []
    for err in exc.errors():
        loc = [str(part) for part in err["loc"]]
        key = loc[0] if loc else "<root>"
        if err["type"] == "missing":
            problem = "missing required key"
        elif err["type"] == "extra_forbidden":
            lines.append(f"{source}: {key}: unknown key")
            continue
        else:
            problem = err["msg"]
        if key in fields:
            expected = _type_name(fields[key].annotation)
            lines.append(f"{source}: {'.'.join(loc)}: {problem} (expected {expected})")
        else:
            lines.append(f"{source}: {key}: {problem}")
    return "\n".join(lines)


def check_manifest_version(source: str, tool_version: str) -> bool:
    """Whether a manifest written by ``tool_version`` is compatible with this build."""
    running = Version(TOOL_VERSION)
    requirement = Requirement(f"{TOOL_NAME}~={running.major}.{running.minor}")
    try:
        compatible = Version(tool_version) in requirement.specifier
    except InvalidVersion:
        compatible = False
    if not compatible:
        logger.warning(
            "%s was written by %s %s, running %s", source, TOOL_NAME, tool_version, TOOL_VERSION
        )
    return compatible


def read_config_file(path: Path) -> dict[str, Any]:
    try:
        text = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read: {e.strerror}") from e
    try:
        if path.suffix == ".toml":
            data = tomllib.loads(text.decode())
        else:
            data = json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ConfigError(f"{path}: malformed {path.suffix.lstrip('.') or 'file'}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: <root>: not a table (expected object)")
    # a run manifest carries its resolved config
    if "config" in data and "tool_version" in data:
        check_manifest_version(str(path), str(data["tool_version"]))
        data = data["config"]
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config: not a table (expected object)")
    return data


def resolve_config_path(path: str | Path | None) -> Path:
    if path is None:
        path = os.getenv(CONFIG_ENV)
    if not path:
        raise ConfigError(f"no configuration given; pass --config or set {CONFIG_ENV}")
    return Path(path)


def load_config(
    path: str | Path | None, overrides: dict[str, Any] | None = None
) -> tuple[SphereaboutConfig, Path]:
    """Read, merge command-line overrides, and validate. Returns the config and its path."""
    resolved = resolve_config_path(path)
    data = read_config_file(resolved)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        config = SphereaboutConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(format_validation_error(str(resolved), e)) from e
    logger.debug("Loaded configuration from %s", resolved)
    return config, resolved
