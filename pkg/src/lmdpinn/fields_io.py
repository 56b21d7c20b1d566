"""Field export: one CSV and one legacy-VTK file per stored frame.

CSV floats are written with ``repr`` so a reload is bit-equal. VTK output
is for viewers only; uniform grids use STRUCTURED_POINTS, graded grids
RECTILINEAR_GRID.
"""

from __future__ import annotations

import csv
import re
from pathlib import Path

import numpy as np

from .fdm import StructuredGrid, TemperatureField

CSV_HEADER = ["x", "y", "z", "t", "T"]
_FRAME_RE = re.compile(r"^field_(\d{4})\.csv$")


def frame_stem(index: int) -> str:
    return f"field_{index:04d}"


def write_frame_csv(field: TemperatureField, index: int, path) -> Path:
    path = Path(path)
    g = field.grid
    pts = g.points()
    t = repr(float(field.times[index]))
    values = field.temps[index].ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for (x, y, z), T in zip(pts, values):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(z)), t, repr(float(T))])
    return path


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_frame_vtk(field: TemperatureField, index: int, path) -> Path:
    path = Path(path)
    g = field.grid
    nx, ny, nz = g.shape
    lines = [
        "# vtk DataFile Version 3.0",
        f"lmdpinn {field.provenance} temperature t={float(field.times[index])!r}",
        "ASCII",
    ]
    if g.is_uniform:
        dx, dy, dz = (float(d[0]) for d in g.spacings)
        lines += [
            "DATASET STRUCTURED_POINTS",
            f"DIMENSIONS {nx} {ny} {nz}",
            f"ORIGIN {float(g.x[0])!r} {float(g.y[0])!r} {float(g.z[0])!r}",
            f"SPACING {dx!r} {dy!r} {dz!r}",
        ]
    else:
        lines += [
            "DATASET RECTILINEAR_GRID",
            f"DIMENSIONS {nx} {ny} {nz}",
            f"X_COORDINATES {nx} double",
            _fmt(g.x),
            f"Y_COORDINATES {ny} double",
            _fmt(g.y),
            f"Z_COORDINATES {nz} double",
            _fmt(g.z),
        ]
    lines += [f"POINT_DATA {nx * ny * nz}", "SCALARS temperature double 1", "LOOKUP_TABLE default"]
    # VTK wants x varying fastest
    vals = field.temps[index].transpose(2, 1, 0).ravel()
    lines += [_fmt(vals[i : i + nx]) for i in range(0, vals.size, nx)]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_fields(field: TemperatureField, out_dir, vtk: bool = True) -> list[Path]:
    """field_0000.csv (+ .vtk) ... for every stored frame."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(field.times.size):
        stem = frame_stem(i)
        written.append(write_frame_csv(field, i, out_dir / f"{stem}.csv"))
        if vtk:
            written.append(write_frame_vtk(field, i, out_dir / f"{stem}.vtk"))
    return written


def read_frame_csv(path) -> tuple[np.ndarray, float, np.ndarray]:
    """(points (N, 3), t, T (N,)) from one frame file."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    times = np.unique(data[:, 3])
    if times.size != 1:
        raise ValueError(f"{path}: a frame file must hold a single time, found {times.size}")
    return data[:, :3], float(times[0]), data[:, 4]


def read_fields(directory, provenance: str = "FDM") -> TemperatureField:
    """Rebuild a field from the frame CSVs written by ``write_fields``."""
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if _FRAME_RE.match(p.name))
    if not files:
        raise FileNotFoundError(f"no field_NNNN.csv frames in {directory}")
    grid = None
    times, temps = [], []
    for f in files:
        pts, t, T = read_frame_csv(f)
        if grid is None:
            grid = StructuredGrid(*(np.unique(pts[:, a]) for a in range(3)))
            if not np.array_equal(grid.points(), pts):
                raise ValueError(f"{f}: node order is not x-major C order on a rectilinear grid")
            expected = pts
        elif not np.array_equal(pts, expected):
            raise ValueError(f"{f}: node coordinates differ from {files[0].name}")
        times.append(t)
        temps.append(T.reshape(grid.shape))
    return TemperatureField(grid, np.array(times), np.array(temps), provenance)
