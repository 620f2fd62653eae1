import csv

import numpy as np
import pytest

from analysis import (estimate_height, estimate_heights, excess_green, load_site_truth, load_sites,
                      ransac_ground_plane, segment_vegetation, sites_from_truth, write_gnuplot,
                      write_height_csv, write_site_truth, write_sites)
from exceptions import DegenerateGeometry, NoGroundPlane, ParseError
from fourd import reconstruct_4d
from models import FieldModel4D, HeightSeries, PointCloud, RowSessionKey
from schemas import PipelineConfig, SimulationParams, SiteSpec
from simulator import simulate_dataset

BROWN = [115, 89, 64]
GREEN = [51, 153, 51]


def _ground(rng, slope=(0.0, 0.0), count=400, half=2.0):
    xy = rng.uniform(-half, half, (count, 2))
    z = slope[0] * xy[:, 0] + slope[1] * xy[:, 1]
    return np.column_stack([xy, z])


def _plant(height, count=101, center=(0.0, 0.0)):
    angle = np.linspace(0.0, 2 * np.pi, count)
    return np.column_stack([center[0] + 0.1 * np.cos(angle), center[1] + 0.1 * np.sin(angle),
                            np.linspace(0.0, height, count)])


def _cloud(*parts):
    points = np.vstack([p for p, _ in parts])
    colors = np.vstack([np.tile(c, (len(p), 1)) for p, c in parts]).astype(np.uint8)
    return PointCloud(points, colors)


def _model(clouds):
    model = FieldModel4D(rows=1, sessions=len(clouds), session_days=[14 * k for k in range(len(clouds))])
    for session, cloud in enumerate(clouds):
        model.clouds[RowSessionKey(session, 0)] = cloud
    return model


class TestSegmentation:
    def test_excess_green(self):
        np.testing.assert_allclose(excess_green(np.array([[0, 255, 0], [255, 255, 255]], dtype=np.uint8)),
                                   [2.0, 0.0])
        np.testing.assert_allclose(excess_green([[0.2, 0.6, 0.2]]), [0.8])

    def test_split(self, rng):
        cloud = _cloud((_ground(rng, count=50), BROWN), (_plant(0.3, count=20), GREEN))
        vegetation, ground = segment_vegetation(cloud)
        assert len(vegetation) == 20 and len(ground) == 50


class TestGroundPlane:
    def test_plane_with_clutter(self, rng):
        ground = _ground(rng, slope=(0.05, -0.02))
        clutter = np.column_stack([rng.uniform(-2, 2, (80, 2)), rng.uniform(0.3, 0.8, 80)])
        plane = ransac_ground_plane(np.vstack([ground, clutter]))
        expected = np.array([-0.05, 0.02, 1.0]) / np.linalg.norm([-0.05, 0.02, 1.0])
        np.testing.assert_allclose(plane.normal, expected, atol=1e-9)
        np.testing.assert_allclose(plane.signed_distance(ground), 0.0, atol=1e-9)
        assert plane.signed_distance([[0.0, 0.0, 1.0]])[0] > 0

    def test_degenerate_inputs(self):
        with pytest.raises(DegenerateGeometry):
            ransac_ground_plane(np.zeros((2, 3)))
        with pytest.raises(DegenerateGeometry):
            ransac_ground_plane(np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)]))


class TestHeights:
    def test_percentile_height_per_session(self, rng):
        ground = (_ground(rng), BROWN)
        model = _model([_cloud(ground, (_plant(0.2), GREEN)),
                        _cloud(ground, (_plant(0.4), GREEN)),
                        _cloud(ground, (_plant(0.6, count=5), GREEN))])
        site = SiteSpec(site_id="a", x_m=0.0, y_m=0.0, radius_m=0.3)
        series = estimate_height(site, model, truth=[0.2, 0.4, 0.6])
        assert series.dates == [0, 14, 28]
        assert series.heights[0] == pytest.approx(0.19, abs=1e-9)
        assert series.heights[1] == pytest.approx(0.38, abs=1e-9)
        assert series.heights[2] is None
        assert series.n_points == [101, 101, 5]

    def test_ground_plane_comes_from_first_session(self, rng):
        first = _cloud((_ground(rng), BROWN), (_plant(0.2), GREEN))
        raised = _ground(rng)
        raised[:, 2] += 0.1
        second = _cloud((raised, BROWN), (_plant(0.2), GREEN))
        series = estimate_height(SiteSpec(site_id="a", x_m=0.0, y_m=0.0), _model([first, second]))
        assert series.heights[0] == pytest.approx(series.heights[1])

    def test_site_without_ground_is_skipped(self, rng):
        model = _model([_cloud((_ground(rng), BROWN), (_plant(0.2), GREEN))])
        far = SiteSpec(site_id="far", x_m=50.0, y_m=0.0)
        near = SiteSpec(site_id="near", x_m=0.0, y_m=0.0)
        with pytest.raises(NoGroundPlane):
            estimate_height(far, model)
        series, failures = estimate_heights([far, near], model, truth={"near": [0.2]})
        assert failures == ["far"]
        assert [s.site_id for s in series] == ["near"]
        assert series[0].truth == [0.2]

    def test_empty_model(self):
        with pytest.raises(NoGroundPlane):
            estimate_height(SiteSpec(site_id="a", x_m=0.0, y_m=0.0), _model([]))

    def test_biased_ground_patch_shifts_every_height(self, rng):
        ground = _ground(rng)
        plants = [(_plant(0.2), GREEN), (_plant(0.4), GREEN)]
        site = SiteSpec(site_id="a", x_m=0.0, y_m=0.0)
        clean = estimate_height(site, _model([_cloud((ground, BROWN), plants[0]),
                                              _cloud((ground, BROWN), plants[1])]))
        raised = ground + [0.0, 0.0, 0.03]
        biased = estimate_height(site, _model([_cloud((raised, BROWN), plants[0]),
                                               _cloud((ground, BROWN), plants[1])]))
        np.testing.assert_allclose(np.subtract(clean.heights, biased.heights), 0.03, atol=1e-9)


class TestFiles:
    def test_sites_file(self, tmp_path):
        sites = [SiteSpec(site_id="r0_p3", x_m=1.25, y_m=0.0, radius_m=0.4), SiteSpec(site_id="b", x_m=2, y_m=1)]
        write_sites(sites, tmp_path / "sites.csv")
        assert load_sites(tmp_path / "sites.csv") == sites

    def test_sites_without_radius_use_default(self, tmp_path):
        (tmp_path / "sites.csv").write_text("site_id,x_m,y_m,radius_m\na,1.0,2.0,\n")
        assert load_sites(tmp_path / "sites.csv")[0].radius_m == 0.5

    def test_bad_site_row(self, tmp_path):
        (tmp_path / "sites.csv").write_text("site_id,x_m,y_m,radius_m\na,1.0,2.0,0.5\nb,east,2.0,0.5\n")
        with pytest.raises(ParseError) as exc:
            load_sites(tmp_path / "sites.csv")
        assert exc.value.line_number == 3

    def test_site_truth_sorted_by_date(self, tmp_path):
        write_site_truth([(SiteSpec(site_id="a", x_m=0, y_m=0), [0.1, 0.3])], [0, 14], tmp_path / "t.csv")
        assert load_site_truth(tmp_path / "t.csv") == {"a": [0.1, 0.3]}
        (tmp_path / "u.csv").write_text("site_id,date,true_height_m\na,14,0.3\na,0,0.1\n")
        assert load_site_truth(tmp_path / "u.csv") == {"a": [0.1, 0.3]}

    def test_height_csv_and_gnuplot(self, tmp_path):
        series = [HeightSeries("a", [0, 14], [0.12346, None], [30, 2], [0.1, 0.2]),
                  HeightSeries("b", [0, 14], [0.2, 0.3], [40, 41])]
        write_height_csv(series, tmp_path / "h.csv")
        with open(tmp_path / "h.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["site", "date", "height_m", "n_points", "true_height_m"]
        assert rows[1] == ["a", "0", "0.1235", "30", "0.1000"]
        assert rows[2] == ["a", "14", "", "2", "0.2000"]
        assert rows[3][4] == ""

        write_gnuplot(series, tmp_path / "h.dat")
        blocks = (tmp_path / "h.dat").read_text().strip().split("\n\n\n")
        assert len(blocks) == 2
        assert blocks[0].splitlines()[-1] == "0 0.1235"
        assert blocks[1].splitlines()[-2:] == ["0 0.2000", "14 0.3000"]


@pytest.mark.slow
class TestSimulatedField:
    HEIGHTS = [0.1, 0.3, 0.6]

    @pytest.fixture(scope="class")
    def estimates(self):
        params = SimulationParams(rows=1, sessions=3, row_length_m=6.0, session_heights_m=self.HEIGHTS)
        field_data = simulate_dataset(params, seed=7)
        model = reconstruct_4d(field_data, PipelineConfig())
        sites = sites_from_truth(field_data.scene, every=3)
        series, failures = estimate_heights([site for site, _ in sites], model,
                                            truth={site.site_id: truth for site, truth in sites})
        return sites, series, failures

    def test_truth_is_the_planted_height(self, estimates):
        sites, _, _ = estimates
        assert len(sites) >= 3
        for _, truth in sites:
            np.testing.assert_allclose(truth, self.HEIGHTS)

    def test_heights_within_tolerance(self, estimates):
        sites, series, failures = estimates
        assert len(series) >= 0.5 * len(sites)
        for session, height in enumerate(self.HEIGHTS):
            errors = [abs(s.heights[session] - s.truth[session]) for s in series if s.heights[session] is not None]
            assert len(errors) >= 0.5 * len(sites)
            assert np.median(errors) <= max(0.1 * height, 0.02)
