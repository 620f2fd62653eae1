"""Domain containers shared by the pipeline stages."""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, NamedTuple, Optional, Protocol, Tuple

import numpy as np

from geometry import CameraIntrinsics

CAMERA = "x"
LANDMARK = "l"
VECTOR = "v"


@dataclass(frozen=True, order=True)
class VariableKey:
    kind: str
    session: int
    row: int
    index: int

    def __str__(self):
        return f"{self.kind}<{self.session},{self.row}>{self.index}"


@dataclass(frozen=True, order=True)
class RowSessionKey:
    session: int
    row: int

    @property
    def label(self) -> str:
        return f"s{self.session}_r{self.row}"


class FrameId(NamedTuple):
    session: int
    row: int
    frame: int

    @property
    def row_session(self) -> RowSessionKey:
        return RowSessionKey(self.session, self.row)


def state_key(frame_id: FrameId) -> VariableKey:
    return VariableKey(CAMERA, frame_id.session, frame_id.row, frame_id.frame)


def gps_offset_key(session: int) -> VariableKey:
    return VariableKey(VECTOR, session, -1, 0)


@dataclass(eq=False)
class Frame:
    frame_id: FrameId
    timestamp: float
    pixels: np.ndarray         # (n, 2)
    descriptors: np.ndarray    # (n, d)
    landmark_ids: np.ndarray   # (n,)
    colors: np.ndarray         # (n, 3) uint8
    patch_offset: int = 0      # first row of this frame in the row-session patch stack

    def __len__(self):
        return len(self.pixels)


class PatchSampler(Protocol):
    def sample(self, frame: Frame, feature_index: int, pixels: np.ndarray) -> np.ndarray:
        """Intensities of `frame` at image `pixels`, around feature `feature_index`."""
        ...


@dataclass(eq=False)
class RowSessionData:
    key: RowSessionKey
    intrinsics: CameraIntrinsics
    frames: List[Frame]
    imu_timestamps: np.ndarray
    imu_gyro: np.ndarray
    imu_accel: np.ndarray
    gps_timestamps: np.ndarray
    gps_positions: np.ndarray  # local ENU, meters
    gps_sigmas: np.ndarray
    sampler: Optional[PatchSampler] = None

    def frame_ids(self) -> List[FrameId]:
        return [f.frame_id for f in self.frames]


class FieldDataset(Protocol):
    rows: int
    sessions: int
    session_days: List[int]

    def keys(self) -> List[RowSessionKey]:
        ...

    def load(self, key: RowSessionKey) -> RowSessionData:
        ...


@dataclass(eq=False)
class Track:
    track_id: int
    observations: List[Tuple[FrameId, int]]  # (frame, feature index), one per frame

    def __len__(self):
        return len(self.observations)

    @property
    def frame_ids(self) -> List[FrameId]:
        return [frame_id for frame_id, _ in self.observations]


@dataclass(eq=False)
class Landmark:
    uid: int
    position: np.ndarray
    color: np.ndarray
    track: Track

    def feature_in(self, frame_id: FrameId) -> Optional[int]:
        for fid, index in self.track.observations:
            if fid == frame_id:
                return index
        return None


@dataclass(eq=False)
class MatchSet:
    source: FrameId
    target: FrameId
    pairs: List[Tuple[int, int]]  # (source feature, target feature)
    inliers: np.ndarray
    predicted: Optional[np.ndarray] = None  # back-projected target pixels, per pair

    @property
    def inlier_pairs(self) -> List[Tuple[int, int]]:
        return [p for p, ok in zip(self.pairs, self.inliers) if ok]


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray                # (n, 3)
    colors: np.ndarray                # (n, 3) uint8
    uids: Optional[np.ndarray] = None  # landmark uid per point

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.uint8), np.zeros(0, dtype=np.int64))


@dataclass(eq=False)
class FieldModel4D:
    rows: int
    sessions: int
    session_days: List[int]
    trajectories: Dict[RowSessionKey, Dict[FrameId, object]] = field(default_factory=dict)  # CameraState per frame
    clouds: Dict[RowSessionKey, PointCloud] = field(default_factory=dict)
    shared_links: List[Tuple[RowSessionKey, ...]] = field(default_factory=list)
    row_reports: list = field(default_factory=list)          # schemas.RowSessionReport
    association_reports: list = field(default_factory=list)  # schemas.AssociationReport
    joint_reports: list = field(default_factory=list)        # schemas.SolveSummary

    def keys(self) -> List[RowSessionKey]:
        return sorted(self.clouds)

    def session_cloud(self, session: int) -> PointCloud:
        parts = [self.clouds[k] for k in self.keys() if k.session == session]
        if not parts:
            return PointCloud.empty()
        return PointCloud(np.vstack([p.points for p in parts]),
                          np.vstack([p.colors for p in parts]),
                          np.concatenate([p.uids if p.uids is not None
                                          else np.zeros(len(p), dtype=np.int64) for p in parts]))

    def sessions_present(self) -> Iterator[int]:
        return iter(sorted({k.session for k in self.clouds}))


@dataclass(eq=False)
class HeightSeries:
    site_id: str
    dates: List[int]
    heights: List[Optional[float]]
    n_points: List[int]
    truth: Optional[List[float]] = None
