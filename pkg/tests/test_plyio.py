import numpy as np
import pytest

from exceptions import ParseError
from models import PointCloud
from plyio import export_ply, import_ply, ply_header

VALID = ply_header(2) + "0.5 1.0 -2.0 10 200 30\n1e-3 2 3 0 0 255\n"


class TestPly:
    def test_export_then_import(self, tmp_path, rng):
        cloud = PointCloud(rng.normal(size=(25, 3)), rng.integers(0, 256, (25, 3)).astype(np.uint8))
        export_ply(cloud, tmp_path / "cloud.ply")
        loaded = import_ply(tmp_path / "cloud.ply")
        np.testing.assert_array_equal(loaded.points, cloud.points)
        np.testing.assert_array_equal(loaded.colors, cloud.colors)

    def test_header_layout(self, tmp_path):
        export_ply(PointCloud.empty(), tmp_path / "empty.ply")
        lines = (tmp_path / "empty.ply").read_text().splitlines()
        assert lines[:3] == ["ply", "format ascii 1.0", "element vertex 0"]
        assert lines[-1] == "end_header"
        assert len(import_ply(tmp_path / "empty.ply")) == 0

    def test_reads_hand_written_file_with_comments(self, tmp_path):
        text = VALID.replace("format ascii 1.0\n", "format ascii 1.0\ncomment made by hand\n")
        (tmp_path / "a.ply").write_text(text)
        cloud = import_ply(tmp_path / "a.ply")
        np.testing.assert_allclose(cloud.points, [[0.5, 1.0, -2.0], [1e-3, 2.0, 3.0]])
        assert cloud.colors.tolist() == [[10, 200, 30], [0, 0, 255]]

    @pytest.mark.parametrize("text, line", [
        ("plyx\n", 1),
        (VALID.replace("ascii", "binary_little_endian"), 2),
        (VALID.replace("element vertex 2", "element vertex two"), 3),
        (VALID.replace("10 200 30", "10 300 30"), 11),
        (VALID.replace("1e-3 2 3 0 0 255", "1e-3 2 3 0 0"), 12),
        (VALID.replace("end_header\n", ""), None),
    ])
    def test_malformed_files(self, tmp_path, text, line):
        (tmp_path / "bad.ply").write_text(text)
        with pytest.raises(ParseError) as exc:
            import_ply(tmp_path / "bad.ply")
        if line is not None:
            assert exc.value.line_number == line

    def test_too_few_vertices(self, tmp_path):
        (tmp_path / "short.ply").write_text(ply_header(3) + "0 0 0 1 1 1\n")
        with pytest.raises(ParseError):
            import_ply(tmp_path / "short.ply")
