from pathlib import Path
from typing import Dict, List, Literal, Optional, Union, get_origin

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from exceptions import InvalidParams, ParseError


# Flat key = value text format
def parse_flat(text: str) -> Dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment. Values stay strings."""
    entries = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw!r}", number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ParseError("empty key", number)
        if key in entries:
            raise ParseError(f"duplicate key {key!r}", number)
        entries[key] = value
    return entries


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def format_flat(values: Dict[str, object]) -> str:
    return "".join(f"{key} = {format_value(value)}\n" for key, value in values.items())


def _list_fields(model_cls) -> set:
    names = set()
    for name, info in model_cls.model_fields.items():
        if get_origin(info.annotation) is list:
            names.add(name)
    return names


def _coerce_flat(model_cls, entries: Dict[str, str]) -> Dict[str, object]:
    list_fields = _list_fields(model_cls)
    data = {}
    for key, value in entries.items():
        if key in list_fields:
            data[key] = [v.strip() for v in value.split(",") if v.strip()]
        else:
            data[key] = value
    return data


def _validated(model_cls, data: dict):
    try:
        return model_cls(**data)
    except ValidationError as exc:
        fields = sorted({".".join(str(p) for p in err["loc"]) for err in exc.errors()})
        raise InvalidParams(f"invalid {model_cls.__name__}: {', '.join(fields)}") from exc


class FlatFileModel(BaseModel):
    """Base for models stored in the flat key = value format."""
    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    @classmethod
    def from_text(cls, text: str):
        return _validated(cls, _coerce_flat(cls, parse_flat(text)))

    @classmethod
    def load(cls, path: Union[str, Path]):
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        return format_flat(self.model_dump())

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text())

    def updated(self, **changes):
        return _validated(type(self), {**self.model_dump(), **changes})


# Pipeline configuration
class PipelineConfig(FlatFileModel):
    # noise sigmas
    pixel_sigma_px: float = 0.5
    gyro_sigma_rad_s: float = 0.002
    accel_sigma_m_s2: float = 0.02
    gyro_bias_rw_sigma_rad_s: float = 1e-3
    accel_bias_rw_sigma_m_s2: float = 1e-3
    angular_rate_sigma_rad_s: float = 0.01
    gps_sigma_m: float = 0.02
    gp_qc: float = 1.0
    gravity_m_s2: List[float] = [0.0, 0.0, -9.81]

    # anchoring of the first state of every row-session
    anchor_rotation_sigma_rad: float = 0.1
    anchor_position_sigma_m: float = 1.0
    anchor_velocity_sigma_m_s: float = 1.0
    anchor_angular_rate_sigma_rad_s: float = 1.0
    bias_prior_sigma: float = 0.05
    gps_factors_enabled: bool = True

    # thresholds stated by the method
    reprojection_gate_px: float = 10.0
    initial_gate_px: float = 30.0  # vision tracks checked against the inertial/GPS fit
    baseline_switch_m: float = 0.5
    min_track_images: int = 7  # accept tracks seen in more than 6 images

    # front end / association
    track_window_frames: int = 5
    ratio_test: float = 0.8
    ransac_iterations: int = 2000
    ransac_threshold_px: float = 2.0
    bbox_half_width_px: float = 20.0
    max_descriptor_l2: float = 1.0
    plane_neighbors: int = 12
    plane_radius_m: float = 0.5
    min_shared_inliers: int = 8
    association_stride: int = 3
    track_ransac_iterations: int = 500

    # solver
    max_gate_rounds: int = 5
    lm_max_iterations: int = 100
    gps_offset_sigma_m: float = 0.1  # per-session GPS offset in the joint solve

    # canopy analysis
    exg_threshold: float = 0.1
    ground_radius_m: float = 1.5
    ground_inlier_m: float = 0.02
    min_vegetation_points: int = 20

    # field layout
    row_filter: Literal["all", "odd", "even"] = "all"
    partition_rows: int = 0  # 0 keeps the whole field in one partition
    seed: int = 7

    @field_validator(
        "pixel_sigma_px", "gyro_sigma_rad_s", "accel_sigma_m_s2", "gyro_bias_rw_sigma_rad_s",
        "accel_bias_rw_sigma_m_s2", "angular_rate_sigma_rad_s", "gps_sigma_m", "gp_qc",
        "anchor_rotation_sigma_rad", "anchor_position_sigma_m", "anchor_velocity_sigma_m_s",
        "anchor_angular_rate_sigma_rad_s", "bias_prior_sigma", "reprojection_gate_px",
        "baseline_switch_m", "ratio_test", "ransac_threshold_px", "bbox_half_width_px",
        "max_descriptor_l2", "plane_radius_m", "initial_gate_px", "gps_offset_sigma_m", "ground_radius_m",
        "ground_inlier_m",
    )
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("must be positive")
        return v

    @field_validator(
        "min_track_images", "track_window_frames", "ransac_iterations", "plane_neighbors",
        "min_shared_inliers", "association_stride", "max_gate_rounds", "lm_max_iterations",
        "track_ransac_iterations", "min_vegetation_points",
    )
    @classmethod
    def validate_positive_int(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator("partition_rows")
    @classmethod
    def validate_partition(cls, v: int) -> int:
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @field_validator("gravity_m_s2")
    @classmethod
    def validate_gravity(cls, v: List[float]) -> List[float]:
        if len(v) != 3:
            raise ValueError("gravity needs three components")
        return v


def load_config(path: Optional[Union[str, Path]] = None, **overrides) -> PipelineConfig:
    config = PipelineConfig.load(path) if path else PipelineConfig()
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return config.updated(**overrides) if overrides else config


# Simulation
class SimulationParams(FlatFileModel):
    rows: int = 3
    sessions: int = 3
    row_length_m: float = 30.0
    row_spacing_m: float = 1.0
    session_interval_days: int = 14
    session_heights_m: List[float] = []  # overrides the growth curve when given

    # vehicle and camera
    speed_m_s: float = 1.0
    lateral_offset_m: float = 1.2
    camera_height_m: float = 1.2
    camera_pitch_deg: float = 40.0
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 400.0
    cy: float = 300.0
    width: int = 800
    height: int = 600
    max_depth_m: float = 4.0
    lateral_wiggle_m: float = 0.04
    vertical_wiggle_m: float = 0.01
    attitude_wiggle_rad: float = 0.02

    # sensor rates
    camera_rate_hz: float = 7.5
    imu_rate_hz: float = 167.0
    gps_rate_hz: float = 5.0
    gps_time_offset_s: float = 0.037

    # noise
    pixel_sigma_px: float = 0.5
    gyro_sigma_rad_s: float = 0.002
    accel_sigma_m_s2: float = 0.02
    gyro_bias_sigma_rad_s: float = 5e-4
    accel_bias_sigma_m_s2: float = 5e-3
    gps_sigma_m: float = 0.02
    gps_session_offsets_m: List[float] = []  # vertical offset per session

    # field content
    ground_slope: List[float] = [0.01, 0.02]
    ground_undulation_m: float = 0.005
    ground_landmarks_per_m2: float = 6.0
    plant_spacing_m: float = 0.3
    plant_jitter_m: float = 0.03
    plant_landmarks: int = 16
    height_min_m: float = 0.05
    height_max_m: float = 0.60
    growth_midpoint_day: float = 14.0
    growth_rate_per_day: float = 0.25
    clutter_fraction: float = 0.1
    descriptor_drift: float = 0.05
    prototype_fraction: float = 0.25
    prototypes: int = 8

    # geodetic datum of the local ENU frame
    datum_lat_deg: float = 31.4752
    datum_lon_deg: float = -83.5285
    datum_alt_m: float = 110.0

    @field_validator("rows", "sessions", "width", "height", "prototypes")
    @classmethod
    def validate_count(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    @field_validator(
        "row_length_m", "row_spacing_m", "speed_m_s", "camera_height_m", "fx", "fy",
        "max_depth_m", "camera_rate_hz", "imu_rate_hz", "gps_rate_hz", "plant_spacing_m",
        "height_max_m", "growth_rate_per_day",
    )
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("must be positive")
        return v

    @field_validator(
        "pixel_sigma_px", "gyro_sigma_rad_s", "accel_sigma_m_s2", "gyro_bias_sigma_rad_s",
        "accel_bias_sigma_m_s2", "gps_sigma_m", "ground_undulation_m", "lateral_wiggle_m",
        "vertical_wiggle_m", "attitude_wiggle_rad", "clutter_fraction", "descriptor_drift",
        "prototype_fraction", "ground_landmarks_per_m2", "plant_jitter_m", "height_min_m",
    )
    @classmethod
    def validate_non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("must be non-negative")
        return v

    @field_validator("ground_slope")
    @classmethod
    def validate_slope(cls, v: List[float]) -> List[float]:
        if len(v) != 2:
            raise ValueError("slope needs two components")
        return v

    @property
    def session_days(self) -> List[int]:
        return [k * self.session_interval_days for k in range(self.sessions)]


# Dataset header (dataset.cfg)
class DatasetInfo(FlatFileModel):
    rows: int
    sessions: int
    session_days: List[int]
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    camera_rate_hz: float
    imu_rate_hz: float
    gps_rate_hz: float
    datum_lat_deg: float
    datum_lon_deg: float
    datum_alt_m: float
    descriptor_length: int = 64


# Sites
class SiteSpec(BaseModel):
    site_id: str
    x_m: float
    y_m: float
    radius_m: float = 0.5

    @field_validator("radius_m")
    @classmethod
    def validate_radius(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("radius must be positive")
        return v


# Reports
class SolveSummary(BaseModel):
    initial_error: float
    final_error: float
    iterations: int
    reason: str
    deactivated: int = 0
    rounds: int = 1


class RowSessionReport(BaseModel):
    session: int
    row: int
    status: Literal["ok", "failed"] = "ok"
    detail: Optional[str] = None
    frames: int = 0
    tracks: int = 0
    landmarks: int = 0
    solve: Optional[SolveSummary] = None


class AssociationReport(BaseModel):
    source_session: int
    source_row: int
    target_session: int
    target_row: int
    image_pairs: int = 0
    failed_pairs: int = 0
    candidate_pairs: int = 0
    inlier_pairs: int = 0


class Manifest(BaseModel):
    dataset: str
    config: Dict[str, Union[float, int, str, bool, List[float]]]
    rows: int
    sessions: int
    session_days: List[int]
    row_sessions: List[RowSessionReport] = []
    associations: List[AssociationReport] = []
    joint: List[SolveSummary] = []
    shared_landmarks: int = 0
    clouds: Dict[str, str] = {}
    trajectories: Dict[str, str] = {}
