"""Explicit finite-difference reference solver for the moving-laser heat problem.

Nodes sit on the domain boundary and every node owns a control volume whose
extent is half a spacing on boundary sides. Central differences in the
interior and mirrored ghost nodes on flux faces both reduce to conductive
exchange between neighbouring control volumes, so the discrete scheme is
conservative: the change of stored heat over a step equals the boundary
power applied in that step, to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .physics import DomainSpec, MaterialProperties, ProcessParameters, q_laser

SAFETY_FACTOR = 0.8
BLOWUP_LIMIT = 1e5  # K


class InstabilityError(FloatingPointError):
    pass


def graded_nodes(length: float, n: int, ratio: float) -> np.ndarray:
    """Node coordinates on [0, length] with spacing shrinking by ``ratio`` per cell toward the end."""
    if n < 3:
        raise ValueError("need at least 3 nodes")
    if ratio == 1.0:
        return np.linspace(0.0, length, n)
    widths = ratio ** np.arange(n - 1)
    widths *= length / widths.sum()
    nodes = np.concatenate([[0.0], np.cumsum(widths)])
    nodes[-1] = length
    return nodes


@dataclass
class StructuredGrid:
    """Rectilinear node grid; z may be graded finer toward the top."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "z"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 1 or arr.size < 3:
                raise ValueError(f"{name}: need at least 3 nodes, got {arr.shape}")
            if np.any(np.diff(arr) <= 0):
                raise ValueError(f"{name}: node coordinates must increase strictly")
            setattr(self, name, arr)

    @classmethod
    def uniform(cls, domain: DomainSpec, nx: int = 100, ny: int = 24, nz: int = 16, z_ratio: float = 1.0):
        return cls(
            np.linspace(0.0, domain.Lx, nx),
            np.linspace(0.0, domain.Ly, ny),
            graded_nodes(domain.Lz, nz, z_ratio),
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.x.size, self.y.size, self.z.size)

    @property
    def spacings(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.diff(self.x), np.diff(self.y), np.diff(self.z)

    @property
    def is_uniform(self) -> bool:
        return all(np.allclose(d, d[0], rtol=1e-12, atol=0) for d in self.spacings)

    def widths(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Control-volume extent of each node along each axis."""
        out = []
        for nodes in (self.x, self.y, self.z):
            d = np.diff(nodes)
            w = np.empty(nodes.size)
            w[0], w[-1] = d[0] / 2, d[-1] / 2
            w[1:-1] = (d[:-1] + d[1:]) / 2
            out.append(w)
        return tuple(out)

    def points(self) -> np.ndarray:
        """(nx*ny*nz, 3) node coordinates in C order."""
        X, Y, Z = np.meshgrid(self.x, self.y, self.z, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def same_as(self, other: "StructuredGrid") -> bool:
        return all(a.shape == b.shape and np.array_equal(a, b) for a, b in zip(
            (self.x, self.y, self.z), (other.x, other.y, other.z)))


@dataclass
class TemperatureField:
    """Nodal temperatures (frames, nx, ny, nz) at increasing output times."""

    grid: StructuredGrid
    times: np.ndarray
    temps: np.ndarray
    provenance: str = "FDM"
    energy: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.temps = np.asarray(self.temps, dtype=np.float64)
        if self.temps.shape != (self.times.size,) + self.grid.shape:
            raise ValueError(f"temps shape {self.temps.shape} does not match {self.times.size} frames on {self.grid.shape}")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("output times must increase strictly")

    def frame_index(self, t: float, tol: float = 1e-9) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > tol:
            raise KeyError(f"time {t} is not a stored frame (have {self.times[0]}..{self.times[-1]})")
        return idx

    def frame(self, t: float) -> np.ndarray:
        return self.temps[self.frame_index(t)]


def stable_dt(grid: StructuredGrid, props: MaterialProperties, safety: float = SAFETY_FACTOR) -> float:
    """safety / (2 alpha (1/dx^2 + 1/dy^2 + 1/dz^2)) using the smallest spacing per axis."""
    alpha = props.diffusivity
    inv = sum(1.0 / float(d.min()) ** 2 for d in grid.spacings)
    return safety / (2.0 * alpha * inv)


class _Operator:
    """Precomputed geometry for one grid: capacities, conductances and face areas."""

    def __init__(self, grid: StructuredGrid, props: MaterialProperties, mirrored: bool):
        wx, wy, wz = grid.widths()
        dx, dy, dz = grid.spacings
        k = props.kappa
        self.grid = grid
        self.capacity = props.volumetric_heat_capacity * wx[:, None, None] * wy[None, :, None] * wz[None, None, :]
        self.gx = k * (wy[:, None] * wz[None, :])[None] / dx[:, None, None]
        self.gy = k * (wx[:, None] * wz[None, :])[:, None, :] / dy[None, :, None]
        self.gz = k * (wx[:, None] * wy[None, :])[:, :, None] / dz[None, None, :]
        self.area_x = wy[:, None] * wz[None, :]  # x_min / x_max faces, (ny, nz)
        self.area_y = wx[:, None] * wz[None, :]  # y faces, (nx, nz)
        self.area_z = wx[:, None] * wy[None, :]  # top / bottom faces, (nx, ny)
        self.mirrored = mirrored
        self.top_x, self.top_y = np.meshgrid(grid.x, grid.y, indexing="ij")


def _surface_loss(T, m: MaterialProperties, p: ProcessParameters):
    return p.h_conv * (T - p.T0) + p.sigma_sb * m.epsilon * (T**4 - p.T0**4)


def _rates(T, op: _Operator, m: MaterialProperties, p: ProcessParameters, t: float, laser: bool, losses: bool):
    """Heat rate into every control volume [W] and the boundary power split."""
    acc = np.zeros_like(T)
    f = op.gx * (T[1:] - T[:-1])
    acc[:-1] += f
    acc[1:] -= f
    f = op.gy * (T[:, 1:] - T[:, :-1])
    acc[:, :-1] += f
    acc[:, 1:] -= f
    f = op.gz * (T[:, :, 1:] - T[:, :, :-1])
    acc[:, :, :-1] += f
    acc[:, :, 1:] -= f
    bottom_out = float(f[:, :, 0].sum())  # conduction from the first layer into the clamped bottom

    laser_in = 0.0
    loss_out = 0.0
    if laser:
        q = -q_laser(p, op.top_x, op.top_y, t) * op.area_z
        acc[:, :, -1] += q
        laser_in = float(q.sum())
    if losses:
        faces = [
            ((slice(None), slice(None), -1), op.area_z),  # top
            ((0, slice(None), slice(None)), op.area_x),  # x_min
            ((-1, slice(None), slice(None)), op.area_x),  # x_max
            ((slice(None), -1, slice(None)), op.area_y),  # y_max
        ]
        if op.mirrored:
            faces.append(((slice(None), 0, slice(None)), op.area_y))  # y_min of the full domain
        for idx, area in faces:
            q = _surface_loss(T[idx], m, p) * area
            acc[idx] -= q
            loss_out += float(q[:, 1:].sum()) if idx[2] != -1 else float(q.sum())
    return acc, laser_in, loss_out, bottom_out


def step(
    T: np.ndarray,
    op_or_grid,
    props: MaterialProperties,
    proc: ProcessParameters,
    t: float,
    dt: float,
    laser: bool = True,
    losses: bool = True,
) -> np.ndarray:
    """Advance one explicit Euler step; the bottom layer stays at ambient."""
    op = op_or_grid if isinstance(op_or_grid, _Operator) else _Operator(op_or_grid, props, False)
    limit = stable_dt(op.grid, props)
    if dt > limit * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds the stability limit {limit}")
    acc, *_ = _rates(T, op, props, proc, t, laser, losses)
    out = T + dt * acc / op.capacity
    out[:, :, 0] = proc.T0
    if not np.all(np.abs(out) < BLOWUP_LIMIT):
        i = np.unravel_index(int(np.argmax(np.abs(np.nan_to_num(out, nan=np.inf)))), out.shape)
        raise InstabilityError(f"temperature {out[i]} K at node {i}, t={t + dt:.6g} s: scheme unstable")
    return out


def run(
    grid: StructuredGrid,
    props: MaterialProperties,
    proc: ProcessParameters,
    t_end: float | None = None,
    output_hz: float = 10.0,
    initial: np.ndarray | None = None,
    laser: bool = True,
    losses: bool = True,
    mirrored: bool = False,
    dt: float | None = None,
) -> TemperatureField:
    """March from ``initial`` (ambient by default) to ``t_end``, storing frames at ``output_hz``.

    The step is the stability bound shrunk so every frame time is hit
    exactly. ``mirrored`` marks a full-width grid whose y = y_min face
    loses heat like y_max (used to check the half-domain symmetry).
    Energy bookkeeping per frame interval is stored in ``field.energy``.
    """
    t_end = proc.t_end if t_end is None else t_end
    n_frames = int(round(t_end * output_hz))
    if not math.isclose(n_frames / output_hz, t_end, rel_tol=1e-9):
        raise ValueError(f"t_end={t_end} is not a multiple of the output period 1/{output_hz}")
    frame_dt = 1.0 / output_hz
    limit = stable_dt(grid, props) if dt is None else dt
    n_sub = max(1, math.ceil(frame_dt / limit - 1e-12))
    h = frame_dt / n_sub

    op = _Operator(grid, props, mirrored)
    T = np.full(grid.shape, proc.T0) if initial is None else np.array(initial, dtype=np.float64)
    T[:, :, 0] = proc.T0
    frames = [T.copy()]
    times = [0.0]
    energy = {"stored": [float((op.capacity * T).sum())], "laser_in": [0.0], "surface_out": [0.0], "bottom_out": [0.0]}
    for frame in range(n_frames):
        e_laser = e_loss = e_bottom = 0.0
        for sub in range(n_sub):
            t = frame * frame_dt + sub * h
            acc, laser_in, loss_out, bottom_out = _rates(T, op, props, proc, t, laser, losses)
            T = T + h * acc / op.capacity
            T[:, :, 0] = proc.T0
            e_laser += h * laser_in
            e_loss += h * loss_out
            e_bottom += h * bottom_out
        if not np.all(np.abs(T) < BLOWUP_LIMIT):
            raise InstabilityError(f"temperature exceeded {BLOWUP_LIMIT} K before t={(frame + 1) * frame_dt:.6g} s")
        frames.append(T.copy())
        times.append((frame + 1) * frame_dt)
        energy["stored"].append(float((op.capacity * T).sum()))
        energy["laser_in"].append(e_laser)
        energy["surface_out"].append(e_loss)
        energy["bottom_out"].append(e_bottom)
    field = TemperatureField(grid, np.array(times), np.array(frames), "FDM", {k: np.array(v) for k, v in energy.items()})
    field.energy["dt"] = np.array([h])
    return field


def energy_residuals(field: TemperatureField) -> np.ndarray:
    """Per-frame |dE - net boundary energy| / |net boundary energy| (frames 1..n)."""
    e = field.energy
    stored = e["stored"]
    net = e["laser_in"][1:] - e["surface_out"][1:] - e["bottom_out"][1:]
    d_stored = np.diff(stored)
    return np.abs(d_stored - net) / np.abs(net)


def probe(field: TemperatureField, point, times=None) -> np.ndarray:
    """Trilinear interpolation of every stored frame (or the given times) at one point."""
    g = field.grid
    pt = np.asarray(point, dtype=np.float64)
    idx, wts = [], []
    for c, nodes, name in zip(pt, (g.x, g.y, g.z), "xyz"):
        if not nodes[0] <= c <= nodes[-1]:
            raise ValueError(f"{name}={c} lies outside [{nodes[0]}, {nodes[-1]}]")
        i = int(np.clip(np.searchsorted(nodes, c, side="right") - 1, 0, nodes.size - 2))
        w = (c - nodes[i]) / (nodes[i + 1] - nodes[i])
        idx.append(i)
        wts.append(w)
    frames = field.temps if times is None else field.temps[[field.frame_index(t) for t in times]]
    (i, j, k), (wx, wy, wz) = idx, wts
    out = np.zeros(frames.shape[0])
    for di, fx in ((0, 1 - wx), (1, wx)):
        for dj, fy in ((0, 1 - wy), (1, wy)):
            for dk, fz in ((0, 1 - wz), (1, wz)):
                weight = fx * fy * fz
                if weight != 0.0:
                    out += weight * frames[:, i + di, j + dj, k + dk]
    return out


def mirror_grid(grid: StructuredGrid) -> StructuredGrid:
    """Full-width grid: y nodes reflected through the y = 0 plane."""
    return StructuredGrid(grid.x, np.concatenate([-grid.y[:0:-1], grid.y]), grid.z)
