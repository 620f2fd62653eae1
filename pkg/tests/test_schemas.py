from typing import List, Literal

import pytest

from exceptions import InvalidParams, ParseError
from schemas import (FlatFileModel, Manifest, PipelineConfig, SimulationParams, SiteSpec, _list_fields,
                     format_flat, load_config, parse_flat)


class TestFlatFormat:
    def test_comments_and_blank_lines(self):
        text = "# header\n\nratio_test = 0.7   # tighter\nrow_filter=odd\n"
        assert parse_flat(text) == {"ratio_test": "0.7", "row_filter": "odd"}

    def test_duplicate_key_reports_line(self):
        with pytest.raises(ParseError) as exc:
            parse_flat("seed = 1\n\nseed = 2\n")
        assert exc.value.line_number == 3
        assert exc.value.detail.startswith("line 3:")

    def test_missing_separator(self):
        with pytest.raises(ParseError):
            parse_flat("seed 1\n")
        with pytest.raises(ParseError):
            parse_flat(" = 1\n")

    def test_format_values(self):
        assert format_flat({"a": True, "b": [1.5, 2.0], "c": 3}) == "a = true\nb = 1.5, 2.0\nc = 3\n"

    def test_only_list_annotations_split_on_commas(self):
        class Layout(FlatFileModel):
            order: Literal["list", "grid"] = "list"
            widths: List[float] = []
            note: str = ""

        assert _list_fields(Layout) == {"widths"}
        assert _list_fields(SimulationParams) == {"session_heights_m", "gps_session_offsets_m", "ground_slope"}
        layout = Layout.from_text("order = list\nwidths = 0.5, 0.75\nnote = a, b\n")
        assert (layout.order, layout.widths, layout.note) == ("list", [0.5, 0.75], "a, b")


class TestPipelineConfig:
    def test_from_text_coerces_types(self):
        config = PipelineConfig.from_text(
            "gps_factors_enabled = false\ngravity_m_s2 = 0, 0, -9.8\npartition_rows = 2\nrow_filter = even\n")
        assert config.gps_factors_enabled is False
        assert config.gravity_m_s2 == [0.0, 0.0, -9.8]
        assert config.partition_rows == 2
        assert config.row_filter == "even"

    def test_invalid_values_raise_invalid_params(self):
        with pytest.raises(InvalidParams) as exc:
            PipelineConfig.from_text("pixel_sigma_px = -1\n")
        assert "pixel_sigma_px" in exc.value.detail
        with pytest.raises(InvalidParams):
            PipelineConfig.from_text("row_filter = diagonal\n")
        with pytest.raises(InvalidParams):
            PipelineConfig.from_text("gravity_m_s2 = 0, -9.81\n")

    def test_unknown_keys_are_rejected(self):
        with pytest.raises(InvalidParams):
            PipelineConfig.from_text("no_such_option = 1\n")

    def test_save_and_load(self, tmp_path):
        config = PipelineConfig(ratio_test=0.75, seed=3, row_filter="odd")
        config.save(tmp_path / "pipeline.cfg")
        assert PipelineConfig.load(tmp_path / "pipeline.cfg") == config

    def test_load_config_ignores_unset_overrides(self, tmp_path):
        (tmp_path / "p.cfg").write_text("seed = 11\nratio_test = 0.6\n")
        config = load_config(tmp_path / "p.cfg", seed=None, ratio_test=0.9)
        assert config.seed == 11
        assert config.ratio_test == 0.9
        assert load_config() == PipelineConfig()

    def test_updated_validates(self):
        with pytest.raises(InvalidParams):
            PipelineConfig().updated(association_stride=0)


class TestSimulationParams:
    def test_session_days(self):
        assert SimulationParams(sessions=4).session_days == [0, 14, 28, 42]
        assert SimulationParams(sessions=2, session_interval_days=7).session_days == [0, 7]

    def test_noise_may_be_zero_but_not_negative(self):
        assert SimulationParams(pixel_sigma_px=0.0, clutter_fraction=0.0).pixel_sigma_px == 0.0
        with pytest.raises(ValueError):
            SimulationParams(gps_sigma_m=-0.1)
        with pytest.raises(ValueError):
            SimulationParams(rows=0)


class TestModels:
    def test_site_radius_must_be_positive(self):
        assert SiteSpec(site_id="a", x_m=1.0, y_m=2.0).radius_m == 0.5
        with pytest.raises(ValueError):
            SiteSpec(site_id="a", x_m=1.0, y_m=2.0, radius_m=0.0)

    def test_manifest_json(self):
        manifest = Manifest(dataset="data", config=PipelineConfig().model_dump(), rows=2, sessions=1,
                            session_days=[0], clouds={"s0_r0": "cloud_s0_r0.ply"})
        again = Manifest.model_validate_json(manifest.model_dump_json())
        assert again.clouds == {"s0_r0": "cloud_s0_r0.ply"}
        assert again.config["seed"] == 7
