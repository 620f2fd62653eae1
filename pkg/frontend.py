"""
Feature tracks within a row-session and robust cross-row / cross-session
data association by plane-induced homography warping.
"""
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.ndimage import map_coordinates
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from exceptions import DegenerateGeometry, InsufficientCorrespondences, InvalidParams, NonPositiveDepth
from geometry import (CameraIntrinsics, Pose3, fit_plane_local, induced_homography,
                      local_neighborhood, project, relative_pose, transfer)
from models import Frame, FrameId, Landmark, MatchSet, Track

logger = logging.getLogger(__name__)

DESCRIPTOR_SIZE = 8
DESCRIPTOR_SPACING_PX = 2.0
PATCH_SIZE = 16

Camera = Tuple[CameraIntrinsics, Pose3]


# Descriptors
def _grid_offsets(size: int, spacing: float) -> np.ndarray:
    steps = (np.arange(size) - (size - 1) / 2.0) * spacing
    vv, uu = np.meshgrid(steps, steps, indexing="ij")
    return np.column_stack([uu.ravel(), vv.ravel()])


def descriptor_grid(center, spacing: float = DESCRIPTOR_SPACING_PX) -> np.ndarray:
    """Pixel positions of the 8x8 descriptor samples, row-major (v, then u)."""
    return np.asarray(center, dtype=float) + _grid_offsets(DESCRIPTOR_SIZE, spacing)


def patch_grid(center, spacing: float = DESCRIPTOR_SPACING_PX) -> np.ndarray:
    """Pixel positions of the stored 16x16 patch raster."""
    return np.asarray(center, dtype=float) + _grid_offsets(PATCH_SIZE, spacing)


def patch_descriptor(intensities) -> np.ndarray:
    v = np.asarray(intensities, dtype=float).ravel()
    v = v - v.mean()
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


class StoredPatchSampler:
    """Cubic-spline resampling of the per-observation patch rasters of a row-session."""

    def __init__(self, patches: np.ndarray, spacing: float = DESCRIPTOR_SPACING_PX):
        self.patches = patches
        self.spacing = spacing

    def sample(self, frame: Frame, feature_index: int, pixels: np.ndarray) -> np.ndarray:
        raster = self.patches[frame.patch_offset + feature_index].astype(float) / 255.0
        center = frame.pixels[feature_index]
        px = np.atleast_2d(pixels)
        half = (PATCH_SIZE - 1) / 2.0
        cols = (px[:, 0] - center[0]) / self.spacing + half
        rows = (px[:, 1] - center[1]) / self.spacing + half
        return map_coordinates(raster, [rows, cols], order=3, mode="nearest")


# Matching
def match_descriptors_nn(a, b, ratio: float = 0.8) -> np.ndarray:
    """Mutual nearest neighbours under L2 passing the ratio test; (k, 2) index pairs."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((0, 2), dtype=int)
    if a.shape[1] != b.shape[1]:
        raise InvalidParams("descriptor lengths differ")
    D = cdist(a, b)
    rows = np.arange(len(a))
    best = np.argmin(D, axis=1)
    best_d = D[rows, best]
    second = np.partition(D, 1, axis=1)[:, 1] if len(b) > 1 else np.full(len(a), np.inf)
    mutual = np.argmin(D, axis=0)[best] == rows
    keep = mutual & (best_d < ratio * second)
    return np.column_stack([rows[keep], best[keep]]).astype(int)


def _hartley(points: np.ndarray) -> np.ndarray:
    centroid = points.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(points - centroid, axis=1))
    s = np.sqrt(2.0) / mean_dist if mean_dist > 0 else 1.0
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _homogeneous(points: np.ndarray) -> np.ndarray:
    return np.column_stack([points, np.ones(len(points))])


def _design_rows(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    u1, v1 = x1[..., 0], x1[..., 1]
    u2, v2 = x2[..., 0], x2[..., 1]
    one = np.ones_like(u1)
    return np.stack([u2 * u1, u2 * v1, u2, v2 * u1, v2 * v1, v2, u1, v1, one], axis=-1)


def _rank2(F: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(F)
    s[..., 2] = 0.0
    return u @ (s[..., :, None] * vt)


def eight_point(pts1, pts2) -> np.ndarray:
    """Normalized 8-point fundamental matrix with x2^T F x1 = 0."""
    pts1 = np.asarray(pts1, dtype=float)
    pts2 = np.asarray(pts2, dtype=float)
    if len(pts1) < 8:
        raise InsufficientCorrespondences(f"8-point needs 8 pairs, got {len(pts1)}")
    T1, T2 = _hartley(pts1), _hartley(pts2)
    x1 = (_homogeneous(pts1) @ T1.T)[:, :2]
    x2 = (_homogeneous(pts2) @ T2.T)[:, :2]
    _, _, vt = np.linalg.svd(_design_rows(x1, x2))
    F = _rank2(vt[-1].reshape(3, 3))
    return T2.T @ F @ T1


def epipolar_distances(F: np.ndarray, pts1, pts2) -> Tuple[np.ndarray, np.ndarray]:
    """Point-to-epipolar-line distances in image 1 and image 2. F may be batched (c, 3, 3)."""
    x1 = _homogeneous(np.asarray(pts1, dtype=float))
    x2 = _homogeneous(np.asarray(pts2, dtype=float))
    l2 = np.einsum("...ij,nj->...ni", F, x1)
    l1 = np.einsum("...ji,nj->...ni", F, x2)
    e = np.abs(np.sum(x2 * l2, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = e / np.hypot(l2[..., 0], l2[..., 1])
        d1 = e / np.hypot(l1[..., 0], l1[..., 1])
    return np.nan_to_num(d1, nan=np.inf), np.nan_to_num(d2, nan=np.inf)


def _inliers(F, pts1, pts2, threshold_px) -> np.ndarray:
    d1, d2 = epipolar_distances(F, pts1, pts2)
    return (d1 < threshold_px) & (d2 < threshold_px)


def ransac_8point(pts1, pts2, iterations: int = 2000, threshold_px: float = 2.0,
                  seed: int = 7, chunk: int = 250) -> Tuple[np.ndarray, np.ndarray]:
    """Best fundamental matrix over random minimal samples; returns (F, inlier mask).

    Pairs are put in a canonical order before sampling so the result does not
    depend on input order for a given seed.
    """
    pts1 = np.asarray(pts1, dtype=float).reshape(-1, 2)
    pts2 = np.asarray(pts2, dtype=float).reshape(-1, 2)
    n = len(pts1)
    if n < 8:
        raise InsufficientCorrespondences(f"RANSAC needs at least 8 pairs, got {n}")
    order = np.lexsort((pts2[:, 1], pts2[:, 0], pts1[:, 1], pts1[:, 0]))
    p1, p2 = pts1[order], pts2[order]

    T1, T2 = _hartley(p1), _hartley(p2)
    x1 = (_homogeneous(p1) @ T1.T)[:, :2]
    x2 = (_homogeneous(p2) @ T2.T)[:, :2]
    rng = np.random.default_rng(seed)
    samples = np.argpartition(rng.random((iterations, n)), 7, axis=1)[:, :8]

    best_count = -1
    best_F = None
    for start in range(0, iterations, chunk):
        idx = samples[start:start + chunk]
        A = _design_rows(x1[idx], x2[idx])                     # (c, 8, 9)
        _, _, vt = np.linalg.svd(A)
        F = _rank2(vt[:, -1, :].reshape(-1, 3, 3))
        F = np.einsum("ji,cjk,kl->cil", T2, F, T1)
        counts = _inliers(F, p1, p2, threshold_px).sum(axis=1)
        top = int(np.argmax(counts))
        if counts[top] > best_count:
            best_count = int(counts[top])
            best_F = F[top]

    mask = _inliers(best_F, p1, p2, threshold_px)
    if mask.sum() >= 8:
        refined = eight_point(p1[mask], p2[mask])
        refined_mask = _inliers(refined, p1, p2, threshold_px)
        if refined_mask.sum() >= mask.sum():
            best_F, mask = refined, refined_mask

    result = np.zeros(n, dtype=bool)
    result[order] = mask
    return best_F, result


# Tracks
def build_tracks(matches: Iterable[Tuple[FrameId, int, FrameId, int]], min_images: int = 7) -> List[Track]:
    """Transitive closure of pairwise matches. Components holding two features
    of one image are discarded, as are those seen in fewer than `min_images`."""
    node_index: Dict[Tuple[FrameId, int], int] = {}
    edges = []
    for frame_a, index_a, frame_b, index_b in matches:
        a = node_index.setdefault((frame_a, int(index_a)), len(node_index))
        b = node_index.setdefault((frame_b, int(index_b)), len(node_index))
        edges.append((a, b))
    if not edges:
        return []
    rows, cols = zip(*edges)
    n = len(node_index)
    graph = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)

    groups: Dict[int, List[Tuple[FrameId, int]]] = {}
    for node, index in node_index.items():
        groups.setdefault(int(labels[index]), []).append(node)

    accepted = []
    for members in groups.values():
        members.sort()
        frames = [frame_id for frame_id, _ in members]
        if len(set(frames)) != len(frames):
            continue
        if len(frames) < min_images:
            continue
        accepted.append(members)
    accepted.sort(key=lambda m: m[0])
    return [Track(track_id, members) for track_id, members in enumerate(accepted)]


def match_pair(frame_a: Frame, frame_b: Frame, ratio: float = 0.8, iterations: int = 500,
               threshold_px: float = 2.0, seed: int = 7) -> np.ndarray:
    """Descriptor matches between two frames that survive RANSAC."""
    pairs = match_descriptors_nn(frame_a.descriptors, frame_b.descriptors, ratio)
    if len(pairs) < 8:
        return np.zeros((0, 2), dtype=int)
    _, mask = ransac_8point(frame_a.pixels[pairs[:, 0]], frame_b.pixels[pairs[:, 1]],
                            iterations, threshold_px, seed)
    return pairs[mask]


def track_features(frames: Sequence[Frame], window: int = 5, ratio: float = 0.8,
                   iterations: int = 500, threshold_px: float = 2.0, min_images: int = 7,
                   seed: int = 7) -> List[Track]:
    """Front end of single-row SLAM: match each frame against the next `window`."""
    matches = []
    for i, frame_a in enumerate(frames):
        for frame_b in frames[i + 1:i + 1 + window]:
            for a, b in match_pair(frame_a, frame_b, ratio, iterations, threshold_px, seed):
                matches.append((frame_a.frame_id, int(a), frame_b.frame_id, int(b)))
    tracks = build_tracks(matches, min_images)
    logger.debug("%d pairwise matches -> %d tracks", len(matches), len(tracks))
    return tracks


# Robust association
def warped_descriptor(frame1: Frame, feature_index: int, H: np.ndarray, sampler) -> np.ndarray:
    """Descriptor of feature f1 as it would appear in view 2, given the 1->2 homography."""
    center = transfer(H, frame1.pixels[feature_index])[0]
    source = transfer(np.linalg.inv(H), descriptor_grid(center))
    return patch_descriptor(sampler.sample(frame1, feature_index, source))


def associate_robust(frame1: Frame, frame2: Frame, camera1: Camera, camera2: Camera,
                     landmarks: Sequence[Landmark], sampler=None, cloud: Optional[np.ndarray] = None,
                     baseline_switch_m: float = 0.5, bbox_half_width_px: float = 20.0,
                     plane_neighbors: int = 12, plane_radius_m: float = 0.5,
                     max_descriptor_l2: float = 1.0, ransac_iterations: int = 2000,
                     ransac_threshold_px: float = 2.0, seed: int = 7,
                     use_homography: bool = True) -> MatchSet:
    """Back-projection bounded search with homography-warped descriptors, then RANSAC.

    `landmarks` are the landmarks visible in frame1, each carrying its feature in
    frame1; `cloud` is the landmark point cloud used for local plane fits
    (defaults to the landmark positions themselves).
    """
    K1, pose1 = camera1
    K2, pose2 = camera2
    if cloud is None:
        cloud = np.array([lm.position for lm in landmarks]).reshape(-1, 3)
    tree = cKDTree(cloud) if len(cloud) else None
    baseline = float(np.linalg.norm(pose1.translation - pose2.translation))
    warp = use_homography and baseline >= baseline_switch_m
    if warp and sampler is None:
        raise InvalidParams("homography warping needs a patch sampler")
    relative = relative_pose(pose1, pose2)

    pairs, predicted = [], []
    skipped = 0
    for lm in landmarks:
        f1 = lm.feature_in(frame1.frame_id)
        if f1 is None:
            continue
        try:
            p2 = project(K2, pose2, lm.position)
        except NonPositiveDepth:
            skipped += 1
            continue
        if not K2.contains(p2)[0]:
            continue
        if warp:
            try:
                neighborhood = cloud[local_neighborhood(tree, lm.position, plane_neighbors, plane_radius_m)]
                plane = fit_plane_local(neighborhood, reference=pose1)
                H = induced_homography(K1, K2, relative, plane)
            except DegenerateGeometry:
                skipped += 1
                continue
            descriptor = warped_descriptor(frame1, f1, H, sampler)
        else:
            descriptor = frame1.descriptors[f1]

        in_box = np.all(np.abs(frame2.pixels - p2) <= bbox_half_width_px, axis=1)
        candidates = np.flatnonzero(in_box)
        if len(candidates) == 0:
            continue
        distances = np.linalg.norm(frame2.descriptors[candidates] - descriptor, axis=1)
        best = int(np.argmin(distances))
        if distances[best] > max_descriptor_l2:
            continue
        target = int(candidates[best])
        pairs.append((f1, target))
        predicted.append(p2)

    if len(pairs) < 8:
        raise InsufficientCorrespondences(
            f"{frame1.frame_id} -> {frame2.frame_id}: {len(pairs)} candidate pairs")
    pair_array = np.array(pairs)
    _, mask = ransac_8point(frame1.pixels[pair_array[:, 0]], frame2.pixels[pair_array[:, 1]],
                            ransac_iterations, ransac_threshold_px, seed)
    logger.debug("%s -> %s: %d candidates, %d inliers, %d skipped (warp=%s)",
                 frame1.frame_id, frame2.frame_id, len(pairs), int(mask.sum()), skipped, warp)
    return MatchSet(frame1.frame_id, frame2.frame_id, pairs, mask, np.array(predicted))


def match_naive(frame1: Frame, frame2: Frame, ratio: float = 0.8, ransac_iterations: int = 2000,
                ransac_threshold_px: float = 2.0, seed: int = 7) -> MatchSet:
    """Plain descriptor NN + ratio test + RANSAC over whole images."""
    pairs = match_descriptors_nn(frame1.descriptors, frame2.descriptors, ratio)
    if len(pairs) < 8:
        raise InsufficientCorrespondences(
            f"{frame1.frame_id} -> {frame2.frame_id}: {len(pairs)} candidate pairs")
    _, mask = ransac_8point(frame1.pixels[pairs[:, 0]], frame2.pixels[pairs[:, 1]],
                            ransac_iterations, ransac_threshold_px, seed)
    return MatchSet(frame1.frame_id, frame2.frame_id, [tuple(p) for p in pairs.tolist()], mask)


def association_metrics(matches: Optional[MatchSet], frame1: Frame, frame2: Frame) -> Dict[str, float]:
    """Recall and precision of inlier pairs against simulator correspondence ids."""
    ids1 = frame1.landmark_ids[frame1.landmark_ids >= 0]
    possible = int(np.intersect1d(ids1, frame2.landmark_ids[frame2.landmark_ids >= 0]).size)
    correct = found = 0
    if matches is not None:
        for a, b in matches.inlier_pairs:
            found += 1
            if frame1.landmark_ids[a] >= 0 and frame1.landmark_ids[a] == frame2.landmark_ids[b]:
                correct += 1
    return {
        "possible": possible,
        "found": found,
        "correct": correct,
        "recall": correct / possible if possible else 0.0,
        "precision": correct / found if found else 1.0,
    }
