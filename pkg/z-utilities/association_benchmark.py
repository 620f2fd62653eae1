"""
Association Benchmark Script
Compares plain descriptor matching, bounded search, and bounded search with
plane-homography warped descriptors on wide-baseline image pairs of a
simulated field, using true camera poses.
"""

import os
import sys
import time
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from exceptions import FourDError
from frontend import association_metrics, associate_robust, match_naive
from models import Landmark, RowSessionKey, Track
from schemas import SimulationParams
from simulator import simulate_dataset

# Configuration
SEED = 7
ROW_LENGTH_M = 8.0
BASELINES_M = [0.6, 0.9, 1.2]
PAIRS_PER_BASELINE = 6
SESSION_PAIRS = [(0, 0), (0, 1)]
METHODS = ["naive", "bounded", "homography"]


@dataclass
class BenchmarkResult:
    pairs: int = 0
    failed: int = 0
    possible: int = 0
    found: int = 0
    correct: int = 0
    seconds: float = 0.0
    errors: List[str] = field(default_factory=list)

    @property
    def recall(self) -> float:
        return self.correct / self.possible if self.possible else 0.0

    @property
    def precision(self) -> float:
        return self.correct / self.found if self.found else 1.0


def truth_landmarks(scene, frame) -> List[Landmark]:
    """One landmark per truth-labelled feature of `frame`, placed at its true position."""
    landmarks = []
    for index in np.flatnonzero(frame.landmark_ids >= 0):
        uid = int(frame.landmark_ids[index])
        track = Track(uid, [(frame.frame_id, int(index))])
        landmarks.append(Landmark(uid, scene.landmark_positions[uid], frame.colors[index], track))
    return landmarks


def wide_baseline_pairs(states_a, states_b, baseline_m: float, count: int):
    """Frame pairs whose true camera centers are about `baseline_m` apart along the row."""
    centers_a = np.array([s.position for s in states_a])
    centers_b = np.array([s.position for s in states_b])
    pairs = []
    for i in np.linspace(0, len(centers_a) - 1, count + 2).astype(int)[1:-1]:
        gaps = np.abs(np.linalg.norm(centers_b - centers_a[i], axis=1) - baseline_m)
        j = int(np.argmin(gaps))
        if gaps[j] < 0.1:
            pairs.append((int(i), j))
    return pairs


def run_method(method: str, scene, data_a, data_b, states_a, states_b, pairs, result: BenchmarkResult):
    cloud = scene.landmark_positions[scene.session_landmarks(data_a.key.session)]
    for i, j in pairs:
        frame1, frame2 = data_a.frames[i], data_b.frames[j]
        camera1 = (data_a.intrinsics, states_a[i].pose)
        camera2 = (data_b.intrinsics, states_b[j].pose)
        start = time.time()
        try:
            if method == "naive":
                matches = match_naive(frame1, frame2, seed=SEED)
            else:
                matches = associate_robust(frame1, frame2, camera1, camera2, truth_landmarks(scene, frame1),
                                           data_a.sampler, cloud, seed=SEED,
                                           use_homography=method == "homography")
        except FourDError as e:
            matches = None
            result.failed += 1
            result.errors.append(f"{type(e).__name__}: {e.detail}")
        result.seconds += time.time() - start
        metrics = association_metrics(matches, frame1, frame2)
        result.pairs += 1
        result.possible += metrics["possible"]
        result.found += metrics["found"]
        result.correct += metrics["correct"]


def run_benchmark() -> Dict[str, BenchmarkResult]:
    print("\n" + "="*60)
    print("🚀 ASSOCIATION BENCHMARK")
    print("="*60)
    print(f"📊 Baselines: {BASELINES_M} m, {PAIRS_PER_BASELINE} pairs each")
    print(f"🌱 Session pairs: {SESSION_PAIRS}")
    print("="*60 + "\n")

    print("📥 Simulating field...")
    params = SimulationParams(rows=1, sessions=2, row_length_m=ROW_LENGTH_M)
    field_data = simulate_dataset(params, SEED)
    scene = field_data.scene
    print("✅ Field ready\n")

    results = {method: BenchmarkResult() for method in METHODS}
    for session_a, session_b in SESSION_PAIRS:
        key_a, key_b = RowSessionKey(session_a, 0), RowSessionKey(session_b, 0)
        data_a, data_b = field_data.load(key_a), field_data.load(key_b)
        states_a, states_b = field_data.truth(key_a).states, field_data.truth(key_b).states
        for baseline in BASELINES_M:
            pairs = wide_baseline_pairs(states_a, states_b, baseline, PAIRS_PER_BASELINE)
            print(f"🔄 {key_a.label} -> {key_b.label}, {baseline} m: {len(pairs)} pairs")
            for method in METHODS:
                run_method(method, scene, data_a, data_b, states_a, states_b, pairs, results[method])

    print("\n" + "="*60)
    print("📈 RESULTS")
    print("="*60)
    for method, result in results.items():
        print(f"{method:>11}: recall {result.recall:.3f}  precision {result.precision:.3f}  "
              f"({result.correct}/{result.found} correct, {result.possible} possible, "
              f"{result.failed}/{result.pairs} failed, {result.seconds:.1f}s)")
    print("="*60)

    errors = sorted({e for r in results.values() for e in r.errors})
    if errors:
        print(f"\n⚠️  Sample Errors ({len(errors)} unique):")
        for err in errors[:5]:
            print(f"   • {err}")
    print()
    return results


if __name__ == "__main__":
    run_benchmark()
