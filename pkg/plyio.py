"""ASCII PLY export / import for colored point clouds."""
from pathlib import Path
from typing import Union

import numpy as np

from exceptions import ParseError
from models import PointCloud

VERTEX_PROPERTIES = [
    ("double", "x"), ("double", "y"), ("double", "z"),
    ("uchar", "red"), ("uchar", "green"), ("uchar", "blue"),
]


def ply_header(count: int) -> str:
    lines = ["ply", "format ascii 1.0", f"element vertex {count}"]
    lines += [f"property {kind} {name}" for kind, name in VERTEX_PROPERTIES]
    lines.append("end_header")
    return "\n".join(lines) + "\n"


def export_ply(cloud: PointCloud, path: Union[str, Path]) -> None:
    rows = [
        f"{x!r} {y!r} {z!r} {r} {g} {b}"
        for (x, y, z), (r, g, b) in zip(cloud.points.astype(float).tolist(), cloud.colors.astype(int).tolist())
    ]
    Path(path).write_text(ply_header(len(cloud)) + "".join(row + "\n" for row in rows))


def import_ply(path: Union[str, Path]) -> PointCloud:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1)
    count = None
    properties = []
    body_start = None
    for number, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1:] != ["ascii", "1.0"]:
                raise ParseError(f"unsupported format {' '.join(tokens[1:])!r}", number)
        elif tokens[0] == "element":
            if len(tokens) != 3 or tokens[1] != "vertex" or count is not None:
                raise ParseError(f"unexpected element line {raw!r}", number)
            try:
                count = int(tokens[2])
            except ValueError:
                raise ParseError(f"bad vertex count {tokens[2]!r}", number)
        elif tokens[0] == "property":
            if count is None or len(tokens) != 3:
                raise ParseError(f"unexpected property line {raw!r}", number)
            properties.append((tokens[1], tokens[2]))
        elif tokens[0] == "end_header":
            body_start = number
            break
        else:
            raise ParseError(f"unknown header line {raw!r}", number)
    if body_start is None:
        raise ParseError("missing end_header", len(lines))
    if count is None:
        raise ParseError("missing vertex element", body_start)
    names = [name for _, name in properties]
    if names != [name for _, name in VERTEX_PROPERTIES]:
        raise ParseError(f"unsupported vertex properties {names}", body_start)

    body = lines[body_start:body_start + count]
    if len(body) < count:
        raise ParseError(f"expected {count} vertices, found {len(body)}", len(lines))
    points = np.zeros((count, 3))
    colors = np.zeros((count, 3), dtype=np.uint8)
    for k, raw in enumerate(body):
        tokens = raw.split()
        try:
            if len(tokens) != 6:
                raise ValueError(f"expected 6 values, got {len(tokens)}")
            points[k] = [float(t) for t in tokens[:3]]
            rgb = [int(t) for t in tokens[3:]]
            if min(rgb) < 0 or max(rgb) > 255:
                raise ValueError("color out of range")
            colors[k] = rgb
        except ValueError as exc:
            raise ParseError(str(exc), body_start + k + 1) from exc
    return PointCloud(points, colors)
