"""Canopy height from registered point clouds."""
import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from exceptions import DegenerateGeometry, NoGroundPlane, ParseError
from geometry import PlaneEstimate, fit_plane_local
from models import FieldModel4D, HeightSeries, PointCloud
from schemas import SiteSpec

logger = logging.getLogger(__name__)

EXG_THRESHOLD = 0.1
HEIGHT_PERCENTILE = 95.0
MIN_VEGETATION_POINTS = 20
GROUND_RADIUS_M = 1.5


def excess_green(colors) -> np.ndarray:
    """2G - R - B on channels normalized to [0, 1]; uint8 input is scaled by 1/255."""
    c = np.atleast_2d(np.asarray(colors))
    c = c.astype(float) / 255.0 if np.issubdtype(c.dtype, np.integer) else c.astype(float)
    return 2.0 * c[:, 1] - c[:, 0] - c[:, 2]


def _subset(cloud: PointCloud, mask: np.ndarray) -> PointCloud:
    return PointCloud(cloud.points[mask], cloud.colors[mask],
                      None if cloud.uids is None else cloud.uids[mask])


def segment_vegetation(cloud: PointCloud, threshold: float = EXG_THRESHOLD) -> Tuple[PointCloud, PointCloud]:
    """(vegetation, ground) split by excess green."""
    if len(cloud) == 0:
        return cloud, cloud
    green = excess_green(cloud.colors) > threshold
    return _subset(cloud, green), _subset(cloud, ~green)


def ransac_ground_plane(points, iterations: int = 500, inlier_dist: float = 0.02,
                        seed: int = 7, chunk: int = 250) -> PlaneEstimate:
    """Max-inlier plane over random 3-point samples, refined by least squares on
    the inliers. The normal points up, so signed distances are heights."""
    pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 3)
    n = len(pts)
    if n < 3:
        raise DegenerateGeometry(f"ground plane needs at least 3 points, got {n}")
    rng = np.random.default_rng(seed)
    samples = np.argpartition(rng.random((iterations, n)), 2, axis=1)[:, :3]

    best_count, best_mask = 0, None
    for start in range(0, iterations, chunk):
        tri = pts[samples[start:start + chunk]]                  # (c, 3, 3)
        normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norms = np.linalg.norm(normals, axis=1)
        valid = norms > 1e-12 * max(1.0, float(np.max(np.abs(pts))))**2
        if not valid.any():
            continue
        normals = normals[valid] / norms[valid, None]
        offsets = -np.einsum("ck,ck->c", normals, tri[valid, 0])
        inliers = np.abs(pts @ normals.T + offsets) < inlier_dist   # (n, c)
        counts = inliers.sum(axis=0)
        top = int(np.argmax(counts))
        if counts[top] > best_count:
            best_count, best_mask = int(counts[top]), inliers[:, top]
    if best_mask is None:
        raise DegenerateGeometry("all ground-plane samples are collinear")

    plane = fit_plane_local(pts[best_mask]) if best_count >= 3 else None
    if plane is None:
        raise DegenerateGeometry("too few ground-plane inliers")
    normal, distance = plane.normal, plane.distance
    if normal[2] < 0:
        normal, distance = -normal, -distance
    logger.debug("Ground plane: %d/%d inliers, normal %s", best_count, n, np.round(normal, 4))
    return PlaneEstimate(normal, float(distance))


def _within(points: np.ndarray, x: float, y: float, radius: float) -> np.ndarray:
    return np.hypot(points[:, 0] - x, points[:, 1] - y) <= radius


def estimate_height(site: SiteSpec, model: FieldModel4D, ground_radius_m: float = GROUND_RADIUS_M,
                    min_points: int = MIN_VEGETATION_POINTS, exg_threshold: float = EXG_THRESHOLD,
                    inlier_dist: float = 0.02, iterations: int = 500, seed: int = 7,
                    truth: Optional[List[float]] = None) -> HeightSeries:
    """Per session, the 95th percentile of vegetation heights above the ground
    plane fitted once to the first session's ground points around the site."""
    sessions = list(model.sessions_present())
    if not sessions:
        raise NoGroundPlane(f"site {site.site_id}: model holds no clouds")
    _, ground = segment_vegetation(model.session_cloud(sessions[0]), exg_threshold)
    near = ground.points[_within(ground.points, site.x_m, site.y_m, ground_radius_m)] \
        if len(ground) else np.zeros((0, 3))
    try:
        plane = ransac_ground_plane(near, iterations, inlier_dist, seed)
    except DegenerateGeometry as exc:
        raise NoGroundPlane(f"site {site.site_id}: {exc.detail}") from exc

    heights, counts = [], []
    for session in range(model.sessions):
        vegetation, _ = segment_vegetation(model.session_cloud(session), exg_threshold)
        pts = vegetation.points[_within(vegetation.points, site.x_m, site.y_m, site.radius_m)] \
            if len(vegetation) else np.zeros((0, 3))
        counts.append(len(pts))
        if len(pts) < min_points:
            heights.append(None)
            continue
        top = float(np.percentile(plane.signed_distance(pts), HEIGHT_PERCENTILE))
        heights.append(max(0.0, top))
    return HeightSeries(site.site_id, list(model.session_days), heights, counts, truth)


def estimate_heights(sites: Sequence[SiteSpec], model: FieldModel4D,
                     truth: Optional[Dict[str, List[float]]] = None, **kwargs) -> Tuple[List[HeightSeries], List[str]]:
    """Height series for every site; sites without a ground plane are reported and skipped."""
    series, failures = [], []
    for site in sites:
        try:
            series.append(estimate_height(site, model, truth=(truth or {}).get(site.site_id), **kwargs))
        except NoGroundPlane as exc:
            logger.warning("Skipping site: %s", exc.detail)
            failures.append(site.site_id)
    return series, failures


# Sites
def sites_from_truth(scene, every: int = 10, radius_m: float = 0.5,
                     margin_m: float = 1.0) -> List[Tuple[SiteSpec, List[float]]]:
    """Sites centered on every `every`-th plant, with the tallest plant inside as truth."""
    sites = []
    length = scene.params.row_length_m
    for row in range(scene.params.rows):
        plants = np.flatnonzero(scene.plant_rows == row)
        plants = [p for p in plants if margin_m <= scene.plant_xy[p, 0] <= length - margin_m]
        for p in plants[every // 2::every]:
            x, y = scene.plant_xy[p]
            inside = np.flatnonzero(np.hypot(scene.plant_xy[:, 0] - x, scene.plant_xy[:, 1] - y) <= radius_m)
            truth = [float(np.max(scene.plant_heights[s, inside])) for s in range(scene.params.sessions)]
            sites.append((SiteSpec(site_id=f"r{row}_p{p}", x_m=float(x), y_m=float(y), radius_m=radius_m), truth))
    return sites


def write_sites(sites: Sequence[SiteSpec], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["site_id", "x_m", "y_m", "radius_m"])
        for s in sites:
            writer.writerow([s.site_id, repr(s.x_m), repr(s.y_m), repr(s.radius_m)])


def load_sites(path: Union[str, Path]) -> List[SiteSpec]:
    sites = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for number, row in enumerate(reader, start=2):
            try:
                fields = {k: v for k, v in row.items() if v not in (None, "")}
                sites.append(SiteSpec(**fields))
            except (ValidationError, TypeError) as exc:
                raise ParseError(f"bad site row in {path}: {exc}", number) from exc
    return sites


def write_site_truth(sites: Sequence[Tuple[SiteSpec, List[float]]], days: Sequence[int],
                     path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["site_id", "date", "true_height_m"])
        for site, heights in sites:
            for day, h in zip(days, heights):
                writer.writerow([site.site_id, day, repr(h)])


def load_site_truth(path: Union[str, Path]) -> Dict[str, List[float]]:
    truth: Dict[str, List[Tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        for number, row in enumerate(csv.DictReader(fh), start=2):
            try:
                truth.setdefault(row["site_id"], []).append((int(row["date"]), float(row["true_height_m"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad truth row in {path}: {exc}", number) from exc
    return {site: [h for _, h in sorted(rows)] for site, rows in truth.items()}


# Output
def write_height_csv(series: Sequence[HeightSeries], path: Union[str, Path]) -> None:
    with_truth = any(s.truth is not None for s in series)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["site", "date", "height_m", "n_points"] + (["true_height_m"] if with_truth else []))
        for s in series:
            for k, date in enumerate(s.dates):
                height = "" if s.heights[k] is None else f"{s.heights[k]:.4f}"
                row = [s.site_id, date, height, s.n_points[k]]
                if with_truth:
                    row.append("" if s.truth is None else f"{s.truth[k]:.4f}")
                writer.writerow(row)


def write_gnuplot(series: Sequence[HeightSeries], path: Union[str, Path]) -> None:
    """One data block per site (`plot ... index i`), sessions without an estimate omitted."""
    blocks = []
    for s in series:
        lines = [f"# site {s.site_id}", "# date height_m"]
        lines += [f"{d} {h:.4f}" for d, h in zip(s.dates, s.heights) if h is not None]
        blocks.append("\n".join(lines))
    Path(path).write_text("\n\n\n".join(blocks) + ("\n" if blocks else ""))
