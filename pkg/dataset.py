"""
Dataset directory format.

    <root>/dataset.cfg
    <root>/session_<k>/row_<j>/observations.csv   frame_id,timestamp,landmark_id,u,v,d0..d63,red,green,blue
    <root>/session_<k>/row_<j>/imu.csv            timestamp,gx,gy,gz,ax,ay,az
    <root>/session_<k>/row_<j>/gps.csv            timestamp,latitude_deg,longitude_deg,altitude_m,sigma_m
    <root>/session_<k>/row_<j>/patches.npy        uint8 (n, 16, 16), rows in observations.csv order
    <root>/ground_truth/                          simulated datasets only

Frames without observations are not represented.
"""
import logging
import warnings
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from analysis import sites_from_truth, write_site_truth, write_sites
from exceptions import DatasetError, FourDError
from frontend import StoredPatchSampler
from geometry import CameraIntrinsics, rot_exp
from models import Frame, FrameId, RowSessionData, RowSessionKey
from schemas import DatasetInfo, SimulationParams
from sensorfactors import CameraState

logger = logging.getLogger(__name__)

WGS84_A = 6378137.0
WGS84_E2 = 6.69437999014e-3

EXACT = "%.17g"
DESCRIPTOR_FORMAT = "%.7g"
IMU_COLUMNS = ["timestamp", "gx", "gy", "gz", "ax", "ay", "az"]
GPS_COLUMNS = ["timestamp", "latitude_deg", "longitude_deg", "altitude_m", "sigma_m"]
STATE_COLUMNS = (["frame_id", "timestamp", "x", "y", "z", "rx", "ry", "rz", "vx", "vy", "vz",
                  "wx", "wy", "wz", "bgx", "bgy", "bgz", "bax", "bay", "baz"])


# Geodetic <-> local ENU (linearized about the datum)
def _radii(lat_deg: float):
    s = np.sin(np.deg2rad(lat_deg))
    w = 1.0 - WGS84_E2 * s * s
    return WGS84_A / np.sqrt(w), WGS84_A * (1.0 - WGS84_E2) / w**1.5


def enu_to_geodetic(enu, datum) -> np.ndarray:
    lat0, lon0, alt0 = datum
    normal, meridian = _radii(lat0)
    enu = np.atleast_2d(np.asarray(enu, dtype=float))
    lat = lat0 + np.rad2deg(enu[:, 1] / (meridian + alt0))
    lon = lon0 + np.rad2deg(enu[:, 0] / ((normal + alt0) * np.cos(np.deg2rad(lat0))))
    return np.column_stack([lat, lon, alt0 + enu[:, 2]])


def geodetic_to_enu(geodetic, datum) -> np.ndarray:
    lat0, lon0, alt0 = datum
    normal, meridian = _radii(lat0)
    g = np.atleast_2d(np.asarray(geodetic, dtype=float))
    east = np.deg2rad(g[:, 1] - lon0) * (normal + alt0) * np.cos(np.deg2rad(lat0))
    north = np.deg2rad(g[:, 0] - lat0) * (meridian + alt0)
    return np.column_stack([east, north, g[:, 2] - alt0])


def row_session_dir(root: Union[str, Path], key: RowSessionKey) -> Path:
    return Path(root) / f"session_{key.session}" / f"row_{key.row}"


def _read_table(path: Path, columns: int) -> np.ndarray:
    if not path.exists():
        raise DatasetError("file not found", str(path))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise DatasetError(f"malformed table: {exc}", str(path)) from exc
    if table.size == 0:
        return np.zeros((0, columns))
    if table.shape[1] != columns:
        raise DatasetError(f"expected {columns} columns, found {table.shape[1]}", str(path))
    if not np.all(np.isfinite(table)):
        raise DatasetError("non-finite values", str(path))
    return table


# Writing
def dataset_info(params: SimulationParams) -> DatasetInfo:
    return DatasetInfo(rows=params.rows, sessions=params.sessions, session_days=params.session_days,
                       fx=params.fx, fy=params.fy, cx=params.cx, cy=params.cy,
                       width=params.width, height=params.height, camera_rate_hz=params.camera_rate_hz,
                       imu_rate_hz=params.imu_rate_hz, gps_rate_hz=params.gps_rate_hz,
                       datum_lat_deg=params.datum_lat_deg, datum_lon_deg=params.datum_lon_deg,
                       datum_alt_m=params.datum_alt_m)


def write_row_session(root: Union[str, Path], data: RowSessionData, datum, descriptor_length: int = 64) -> Path:
    folder = row_session_dir(root, data.key)
    folder.mkdir(parents=True, exist_ok=True)

    blocks = []
    for frame in data.frames:
        n = len(frame)
        if n == 0:
            continue
        blocks.append(np.column_stack([
            np.full(n, frame.frame_id.frame), np.full(n, frame.timestamp), frame.landmark_ids,
            frame.pixels, frame.descriptors, frame.colors.astype(float)]))
    table = np.vstack(blocks) if blocks else np.zeros((0, 8 + descriptor_length))
    header = ",".join(["frame_id", "timestamp", "landmark_id", "u", "v"]
                      + [f"d{i}" for i in range(descriptor_length)] + ["red", "green", "blue"])
    fmt = ["%d", EXACT, "%d", EXACT, EXACT] + [DESCRIPTOR_FORMAT] * descriptor_length + ["%d", "%d", "%d"]
    np.savetxt(folder / "observations.csv", table, fmt=fmt, delimiter=",", header=header, comments="")

    imu = np.column_stack([data.imu_timestamps, data.imu_gyro, data.imu_accel])
    np.savetxt(folder / "imu.csv", imu, fmt=EXACT, delimiter=",", header=",".join(IMU_COLUMNS), comments="")

    geodetic = enu_to_geodetic(data.gps_positions, datum) if len(data.gps_positions) else np.zeros((0, 3))
    gps = np.column_stack([data.gps_timestamps, geodetic, data.gps_sigmas]).reshape(-1, 5)
    np.savetxt(folder / "gps.csv", gps, fmt=EXACT, delimiter=",", header=",".join(GPS_COLUMNS), comments="")

    patches = getattr(data.sampler, "patches", None)
    if patches is None:
        patches = np.zeros((len(table), 16, 16), dtype=np.uint8)
    np.save(folder / "patches.npy", np.asarray(patches, dtype=np.uint8))
    return folder


def write_dataset(field, root: Union[str, Path], params: SimulationParams) -> DatasetInfo:
    """Write every row-session of `field` plus dataset.cfg."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    info = dataset_info(params)
    datum = (info.datum_lat_deg, info.datum_lon_deg, info.datum_alt_m)
    for key in field.keys():
        write_row_session(root, field.load(key), datum, info.descriptor_length)
        logger.debug("Wrote %s", key.label)
    info.save(root / "dataset.cfg")
    return info


def _state_rows(states: Sequence[CameraState], frame_ids: Sequence[FrameId]) -> np.ndarray:
    return np.array([
        np.concatenate([[fid.frame, s.timestamp], s.position, s.rotation.log(), s.velocity,
                        s.angular_rate, s.bias])
        for s, fid in zip(states, frame_ids)]).reshape(-1, len(STATE_COLUMNS))


def write_states(path: Union[str, Path], states: Sequence[CameraState], frame_ids: Sequence[FrameId]) -> None:
    np.savetxt(path, _state_rows(states, frame_ids), fmt=["%d"] + [EXACT] * (len(STATE_COLUMNS) - 1),
               delimiter=",", header=",".join(STATE_COLUMNS), comments="")


def write_ground_truth(field, root: Union[str, Path]) -> Path:
    """True states, landmarks and sites of a simulated field."""
    folder = Path(root) / "ground_truth"
    folder.mkdir(parents=True, exist_ok=True)
    scene = field.scene
    scene.params.save(folder / "simulation.cfg")
    for key in field.keys():
        data = field.load(key)
        write_states(folder / f"states_{key.label}.csv", field.truth(key).states, data.frame_ids())
    table = np.column_stack([np.arange(len(scene.landmark_positions)), scene.landmark_positions,
                             scene.landmark_labels, scene.landmark_sessions])
    np.savetxt(folder / "landmarks.csv", table, fmt=["%d", EXACT, EXACT, EXACT, "%d", "%d"], delimiter=",",
               header="landmark_id,x,y,z,label,session", comments="")
    sites = sites_from_truth(scene)
    write_sites([s for s, _ in sites], folder / "sites.csv")
    write_site_truth(sites, scene.session_days, folder / "site_heights.csv")
    return folder


# Reading
def read_states(path: Union[str, Path], key: RowSessionKey) -> Dict[FrameId, CameraState]:
    table = _read_table(Path(path), len(STATE_COLUMNS))
    states = {}
    for row in table:
        states[FrameId(key.session, key.row, int(row[0]))] = CameraState(
            rot_exp(row[5:8]), row[2:5].copy(), row[8:11].copy(), row[11:14].copy(), row[14:20].copy(),
            float(row[1]))
    return states


class DatasetReader:
    """FieldDataset backed by the directory format."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        cfg = self.root / "dataset.cfg"
        if not cfg.exists():
            raise DatasetError("dataset.cfg not found", str(cfg))
        try:
            self.info = DatasetInfo.load(cfg)
        except FourDError as exc:
            raise DatasetError(exc.detail, str(cfg)) from exc
        self.intrinsics = CameraIntrinsics(self.info.fx, self.info.fy, self.info.cx, self.info.cy,
                                           self.info.width, self.info.height)

    @property
    def rows(self) -> int:
        return self.info.rows

    @property
    def sessions(self) -> int:
        return self.info.sessions

    @property
    def session_days(self) -> List[int]:
        return self.info.session_days

    @property
    def datum(self):
        return (self.info.datum_lat_deg, self.info.datum_lon_deg, self.info.datum_alt_m)

    def keys(self) -> List[RowSessionKey]:
        return [RowSessionKey(s, r) for s in range(self.sessions) for r in range(self.rows)]

    def load(self, key: RowSessionKey) -> RowSessionData:
        folder = row_session_dir(self.root, key)
        if not folder.is_dir():
            raise DatasetError("row-session directory missing", str(folder))
        width = 8 + self.info.descriptor_length
        obs = _read_table(folder / "observations.csv", width)
        imu = _read_table(folder / "imu.csv", len(IMU_COLUMNS))
        gps = _read_table(folder / "gps.csv", len(GPS_COLUMNS))

        patch_path = folder / "patches.npy"
        if not patch_path.exists():
            raise DatasetError("file not found", str(patch_path))
        try:
            patches = np.load(patch_path)
        except ValueError as exc:
            raise DatasetError(f"unreadable patches: {exc}", str(patch_path)) from exc
        if patches.shape != (len(obs), 16, 16):
            raise DatasetError(f"patch stack shape {patches.shape} does not match {len(obs)} observations",
                               str(patch_path))

        frames = []
        frame_ids = obs[:, 0].astype(int)
        starts = np.flatnonzero(np.r_[True, frame_ids[1:] != frame_ids[:-1]]) if len(obs) else []
        bounds = list(starts) + [len(obs)]
        for start, stop in zip(bounds[:-1], bounds[1:]):
            block = obs[start:stop]
            frames.append(Frame(
                frame_id=FrameId(key.session, key.row, int(block[0, 0])),
                timestamp=float(block[0, 1]),
                pixels=block[:, 3:5].copy(),
                descriptors=block[:, 5:-3].copy(),
                landmark_ids=block[:, 2].astype(np.int64),
                colors=block[:, -3:].astype(np.uint8),
                patch_offset=int(start),
            ))
        times = [f.timestamp for f in frames]
        if np.any(np.diff(times) <= 0):
            raise DatasetError("frames out of time order", str(folder / "observations.csv"))

        return RowSessionData(
            key=key, intrinsics=self.intrinsics, frames=frames,
            imu_timestamps=imu[:, 0].copy(), imu_gyro=imu[:, 1:4].copy(), imu_accel=imu[:, 4:7].copy(),
            gps_timestamps=gps[:, 0].copy(), gps_positions=geodetic_to_enu(gps[:, 1:4], self.datum).reshape(-1, 3),
            gps_sigmas=gps[:, 4].copy(), sampler=StoredPatchSampler(patches),
        )

    def truth_states(self, key: RowSessionKey) -> Dict[FrameId, CameraState]:
        return read_states(self.root / "ground_truth" / f"states_{key.label}.csv", key)
