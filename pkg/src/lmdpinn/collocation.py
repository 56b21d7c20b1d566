"""Interior, boundary and initial-time collocation points."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .physics import FACE_GEOMETRY, FACES, DomainSpec, ProcessParameters

_OPEN_DENOM = float(2**53)


def _open_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform samples strictly inside (0, 1)."""
    return (rng.integers(0, 2**53, size=n).astype(np.float64) + 0.5) / _OPEN_DENOM


@dataclass(frozen=True)
class CollocationBudget:
    interior: int = 8192
    top: int = 1024
    other_face: int = 512
    initial: int = 2048
    bias: float = 0.5

    def per_face(self) -> dict[str, int]:
        return {f: (self.top if f == "top" else self.other_face) for f in FACES}


@dataclass
class CollocationSet:
    """Point sets as (N, 4) arrays of physical (x, y, z, t)."""

    interior: np.ndarray
    boundary: dict[str, np.ndarray]
    initial: np.ndarray
    seed: int
    counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.counts:
            self.counts = {"interior": len(self.interior), "initial": len(self.initial)}
            self.counts.update({f: len(p) for f, p in self.boundary.items()})

    def total(self) -> int:
        return len(self.interior) + len(self.initial) + sum(len(p) for p in self.boundary.values())


def sample_interior(spec: DomainSpec, n: int, bias: float, seed: int, t_end: float) -> np.ndarray:
    """Points strictly inside the space-time box, denser toward the top.

    z = Lz * u**(1 / (1 + bias)) gives a density proportional to z**bias.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if bias < 0:
        raise ValueError(f"bias must be non-negative, got {bias}")
    rng = np.random.default_rng(seed)
    u = _open_uniform(rng, 4 * n).reshape(4, n)
    x = spec.Lx * u[0]
    y = spec.Ly * u[1]
    z = spec.Lz * u[2] ** (1.0 / (1.0 + bias))
    t = t_end * u[3]
    return np.column_stack([x, y, z, t])


def _top_enriched(
    spec: DomainSpec, proc: ProcessParameters, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(x, y, t) clustered around the moving beam; the Gaussian has std r_b so
    nearly all of it lies within 3 r_b of the center."""
    x0, y0 = proc.laser_start
    t = proc.t_end * rng.random(n)
    x = np.empty(n)
    y = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        cx = x0 + proc.v * t[todo]
        xs = cx + proc.r_b * rng.standard_normal(todo.size)
        ys = np.abs(y0 + proc.r_b * rng.standard_normal(todo.size))
        ok = (xs >= 0) & (xs <= spec.Lx) & (ys <= spec.Ly)
        x[todo[ok]] = xs[ok]
        y[todo[ok]] = ys[ok]
        todo = todo[~ok]
    return x, y, t


def sample_boundary(
    spec: DomainSpec,
    n_per_face: dict[str, int],
    seed: int,
    proc: ProcessParameters,
) -> dict[str, np.ndarray]:
    """Face-tagged points, uniform in space and time on each face.

    Half of the top-face budget is drawn around the laser track instead.
    """
    missing = set(FACES) - set(n_per_face)
    if missing:
        raise ValueError(f"no budget for faces {sorted(missing)}")
    rng = np.random.default_rng(seed)
    out: dict[str, np.ndarray] = {}
    for face in FACES:
        n = int(n_per_face[face])
        if n < 1:
            raise ValueError(f"face {face} needs a positive count, got {n}")
        axis, _, _ = FACE_GEOMETRY[face]
        pts = np.empty((n, 4))
        ext = spec.extents
        for a in range(3):
            pts[:, a] = ext[a] * rng.random(n)
        pts[:, 3] = proc.t_end * rng.random(n)
        if face == "top":
            n_track = n // 2
            xs, ys, ts = _top_enriched(spec, proc, n_track, rng)
            pts[:n_track, 0], pts[:n_track, 1], pts[:n_track, 3] = xs, ys, ts
        pts[:, axis] = spec.face_coordinate(face)
        out[face] = pts
    return out


def sample_initial(spec: DomainSpec, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    pts = sample_interior(spec, n, 0.0, seed, 1.0)
    pts[:, 3] = 0.0
    return pts


def build_collocation(
    spec: DomainSpec, proc: ProcessParameters, budget: CollocationBudget, seed: int
) -> CollocationSet:
    """All three point sets from one seed; each set uses its own derived stream."""
    seeds = np.random.SeedSequence(seed).generate_state(3)
    return CollocationSet(
        interior=sample_interior(spec, budget.interior, budget.bias, int(seeds[0]), proc.t_end),
        boundary=sample_boundary(spec, budget.per_face(), int(seeds[1]), proc),
        initial=sample_initial(spec, budget.initial, int(seeds[2])),
        seed=seed,
    )


def export_csv(points: CollocationSet, path) -> Path:
    """Write x, y, z, t, face_tag rows; interior and initial rows are tagged as such."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y", "z", "t", "face_tag"])
        groups = [("interior", points.interior), ("initial", points.initial)]
        groups += [(face, points.boundary[face]) for face in FACES]
        for tag, arr in groups:
            for row in arr:
                writer.writerow([repr(float(v)) for v in row] + [tag])
    return path


def coverage_gap(points: np.ndarray, spec: DomainSpec, t_end: float, cells=(10, 4, 4, 10)) -> float:
    """Largest distance from a cell center to its nearest point, in cell units.

    Coordinates are scaled so every cell is a unit hypercube; a value below
    half the cell diagonal (sqrt(4) / 2 = 1) means no cell is starved.
    """
    from scipy.spatial import cKDTree

    ext = np.array([spec.Lx, spec.Ly, spec.Lz, t_end])
    cells = np.asarray(cells)
    scaled = points / ext * cells
    axes = [np.arange(c) + 0.5 for c in cells]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 4)
    dist, _ = cKDTree(scaled).query(centers)
    return float(dist.max())
