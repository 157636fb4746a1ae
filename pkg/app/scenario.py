"""
Scenario files: one YAML per closed-loop experiment under config/scenarios/.

Each scenario names its track (built-in library, boundary CSV or generator
seed), how the envelope is obtained, the initial pose, weight/bound/vehicle
overrides and the termination rule. Sections are merged over the
`defaults:` block of the vehicle file (config/vehicle.yaml by default).
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .costs import CostWeights
from .envelope import LinearBounds, SpatialEnvelope, load_envelope
from .errors import ConfigurationError
from .planner import PlannerConfig, plan_envelope
from .road import RoadBoundary, generate_road, load_track
from .settings import load_yaml, merged, settings
from .tracks import Obstacle, build_track, cis_envelope
from .vehicle import VehicleParams, VehicleState


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    return settings.config_dir / p


class TrackSource(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Optional[str] = None  # built-in library track
    path: Optional[str] = None  # boundary CSV
    seed: Optional[int] = None  # generated road
    options: Dict[str, Any] = Field(default_factory=dict)
    spacing: float = 2.0

    @model_validator(mode="after")
    def _one_source(self) -> "TrackSource":
        given = [v is not None for v in (self.name, self.path, self.seed)]
        if sum(given) != 1:
            raise ValueError("track needs exactly one of name, path, seed")
        if self.path is not None and not _resolve(self.path).exists():
            raise ValueError(f"track file not found: {self.path}")
        return self

    def build(self) -> RoadBoundary:
        if self.name is not None:
            return build_track(self.name, **self.options)
        if self.path is not None:
            return load_track(_resolve(self.path), spacing=self.spacing)
        return generate_road(int(self.seed), **self.options)


class ObstacleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    s_start: float
    length: float = 4.5
    lane: Literal["left", "right"] = "right"
    lane_width: float = 3.7
    lead: float = 40.0

    def obstacle(self) -> Obstacle:
        return Obstacle(self.s_start, self.s_start + self.length, self.lane)


class EnvelopeSource(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["planned", "file", "cis"] = "planned"
    path: Optional[str] = None
    block_norm_p: int = 4
    rho_lse: float = -15.0
    planner: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _file_exists(self) -> "EnvelopeSource":
        if self.kind == "file":
            if not self.path:
                raise ValueError("envelope kind 'file' needs a path")
            if not _resolve(self.path).exists():
                raise ValueError(f"envelope file not found: {self.path}")
        return self


class InitialCondition(BaseModel):
    """Pose on the track (arc length, lateral offset left-positive) plus speed."""

    model_config = ConfigDict(extra="forbid")

    s: float = 0.0
    lateral: float = 0.0
    ux: float = Field(10.0, gt=0)
    heading_offset: float = 0.0

    def state(self, road: RoadBoundary) -> VehicleState:
        c = road.point_at(self.s)
        psi = road.heading_at(self.s)
        x = c[0] - math.sin(psi) * self.lateral
        y = c[1] + math.cos(psi) * self.lateral
        return VehicleState(x=float(x), y=float(y), v=0.0, r=0.0, psi=psi + self.heading_offset, ux=self.ux, delta_f=0.0, ax=0.0)


class Termination(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["lap", "goal_x", "time"] = "lap"
    goal_x: Optional[float] = None
    max_time: float = Field(180.0, gt=0)

    @model_validator(mode="after")
    def _well_formed(self) -> "Termination":
        if self.kind == "goal_x" and self.goal_x is None:
            raise ValueError("termination kind 'goal_x' needs goal_x")
        return self


class ControllerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    budget_ms: Optional[float] = Field(default_factory=lambda: settings.solve_budget_ms)
    window: int = Field(default_factory=lambda: settings.block_window)
    max_failures: int = Field(default_factory=lambda: settings.max_failures)
    control_period: float = Field(default_factory=lambda: settings.control_period)
    plant_dt: float = Field(default_factory=lambda: settings.plant_dt)
    envelope_margin: float = Field(0.0, ge=0)
    max_iter: int = 200
    cost_to_go_speed: Optional[float] = None
    cost_to_go_cadence: int = Field(1, ge=1)
    fault_rate: float = Field(0.0, ge=0, le=1)
    realtime_strict: bool = False
    csv_every: int = Field(10, ge=1)  # plant samples per CSV row


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    description: str = ""
    seed: int = 0
    track: TrackSource
    envelope: EnvelopeSource = Field(default_factory=EnvelopeSource)
    initial: InitialCondition = Field(default_factory=InitialCondition)
    vehicle: Dict[str, Any] = Field(default_factory=dict)
    bounds: Dict[str, Any] = Field(default_factory=dict)
    weights: Dict[str, Any] = Field(default_factory=dict)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    termination: Termination = Field(default_factory=Termination)
    obstacle: Optional[ObstacleConfig] = None

    @model_validator(mode="after")
    def _cis_needs_obstacle(self) -> "Scenario":
        if self.envelope.kind == "cis" and self.obstacle is None:
            raise ValueError("envelope kind 'cis' needs an obstacle section")
        return self

    # ---- derived objects ----

    def vehicle_params(self) -> VehicleParams:
        return VehicleParams.from_mapping(self.vehicle)

    def linear_bounds(self, params: VehicleParams) -> LinearBounds:
        try:
            return LinearBounds.from_params(params, **self.bounds)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid bounds in scenario {self.name!r}: {e}")

    def cost_weights(self) -> CostWeights:
        try:
            return CostWeights(**self.weights)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid weights in scenario {self.name!r}: {e}")

    def build_envelope(self, road: RoadBoundary) -> SpatialEnvelope:
        src = self.envelope
        if src.kind == "file":
            return load_envelope(_resolve(src.path))
        if src.kind == "cis":
            obs = self.obstacle
            return cis_envelope(road, obs.obstacle(), lane_width=obs.lane_width, p=src.block_norm_p, rho_lse=src.rho_lse, lead=obs.lead)
        return plan_envelope(road, src.block_norm_p, src.rho_lse, PlannerConfig.from_mapping(src.planner))


def scenario_from_mapping(raw: Dict[str, Any], defaults: Dict[str, Any] | None = None) -> Scenario:
    """Merge each section over its defaults, then validate."""
    defaults = defaults or {}
    data = dict(raw)
    for section in ("vehicle", "bounds", "weights", "controller", "termination", "envelope"):
        if section in defaults or section in data:
            data[section] = merged(defaults.get(section, {}), data.get(section))
    try:
        return Scenario(**data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid scenario {raw.get('name', '?')!r}: {e}")


def load_scenario(path: str | Path, vehicle_file: str | Path = "vehicle.yaml") -> Scenario:
    """
    Read a scenario YAML. The vehicle file contributes the `vehicle:` mapping
    and the `defaults:` block every scenario section is merged over.
    """
    base = load_yaml(vehicle_file)
    defaults = dict(base.get("defaults") or {})
    defaults["vehicle"] = merged(base.get("vehicle") or {}, defaults.get("vehicle"))
    raw = load_yaml(path)
    return scenario_from_mapping(raw.get("scenario", raw), defaults)
