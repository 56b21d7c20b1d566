"""Physics residuals and the weighted composite loss.

All residuals are nondimensional: the energy equation is divided by
rho*cp*T_c/t_c, flux conditions by the peak laser flux, and temperature
conditions by T_c.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Jet, NonFiniteError, Tensor, backward
from .collocation import CollocationSet
from .mlp import ScalingSpec, forward
from .physics import FACE_GEOMETRY, FACES, DomainSpec, MaterialProperties, ProcessParameters, q_laser

AXIS_NAMES = ("x", "y", "z")
DEFAULT_WEIGHTS = (1.0, 1e-4, 1.0)


@dataclass(frozen=True)
class PinnProblem:
    material: MaterialProperties
    process: ProcessParameters
    domain: DomainSpec
    scaling: ScalingSpec
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS

    @property
    def t_c(self) -> float:
        return self.process.t_end

    @property
    def pde_scale(self) -> float:
        return self.material.volumetric_heat_capacity * self.scaling.T_c / self.t_c

    @property
    def q_ref(self) -> float:
        return self.process.peak_flux


@dataclass
class LossBreakdown:
    l_pde: float
    l_ic: float
    l_bc: float
    l_total: float
    per_face: dict[str, float] = field(default_factory=dict)
    iteration: int = 0
    phase: str = ""
    n_evals: int = 0

    def row(self) -> list:
        return [self.iteration, self.l_pde, self.l_ic, self.l_bc, self.l_total]


def combine(l_pde: float, l_ic: float, l_bc: float, weights=DEFAULT_WEIGHTS) -> float:
    """(w1 L_pde + w2 L_ic + w3 L_bc) / 3."""
    w1, w2, w3 = weights
    return (w1 * l_pde + w2 * l_ic + w3 * l_bc) / 3.0


# -- residuals from a precomputed temperature jet ------------------------------


def _pde_from_jet(T: Jet, problem: PinnProblem) -> Tensor:
    m = problem.material
    lap = T.d2("x") + T.d2("y") + T.d2("z")
    return (m.volumetric_heat_capacity * T.d("t") - m.kappa * lap) * (1.0 / problem.pde_scale)


def _ic_from_jet(T: Jet, problem: PinnProblem) -> Tensor:
    return (T.value - problem.process.T0) * (1.0 / problem.scaling.T_c)


def _bc_from_jet(T: Jet, problem: PinnProblem, face: str, points: np.ndarray) -> Tensor:
    if face not in FACE_GEOMETRY:
        raise ValueError(f"unknown face tag '{face}'; expected one of {FACES}")
    m, p = problem.material, problem.process
    if face == "bottom":
        return (T.value - p.T0) * (1.0 / problem.scaling.T_c)
    axis, sign, _ = FACE_GEOMETRY[face]
    outward_flux = -m.kappa * sign * T.d(AXIS_NAMES[axis])
    if face == "symmetry":
        return outward_flux * (1.0 / problem.q_ref)
    Tv = T.value
    losses = p.h_conv * (Tv - p.T0) + p.sigma_sb * m.epsilon * (Tv**4 - p.T0**4)
    residual = outward_flux - losses
    if face == "top":
        residual = residual - q_laser(p, points[:, 0], points[:, 1], points[:, 3])
    return residual * (1.0 / problem.q_ref)


def _jet(params, problem: PinnProblem, points: np.ndarray) -> Jet:
    pts = np.asarray(points, dtype=np.float64)
    return forward(params, problem.scaling, pts[..., 0], pts[..., 1], pts[..., 2], pts[..., 3])


def pde_residual(params, problem: PinnProblem, points: np.ndarray) -> Tensor:
    """(rho cp dT/dt - kappa lap T) / (rho cp T_c / t_c) at interior points."""
    r = _pde_from_jet(_jet(params, problem, points), problem)
    _check("pde", r, points)
    return r


def ic_residual(params, problem: PinnProblem, points: np.ndarray) -> Tensor:
    """(T - T0) / T_c at t = 0."""
    pts = np.asarray(points, dtype=np.float64)
    if np.any(pts[..., 3] != 0.0):
        raise ValueError("initial-condition points must have t = 0")
    r = _ic_from_jet(_jet(params, problem, pts), problem)
    _check("ic", r, pts)
    return r


def bc_residual(params, problem: PinnProblem, face: str, points: np.ndarray) -> Tensor:
    """Face-specific boundary residual.

    Flux faces balance the outward conductive flux against convection,
    radiation and (top only) the laser, scaled by the peak laser flux. The
    symmetry plane has zero flux; the bottom is held at ambient.
    """
    if face not in FACE_GEOMETRY:
        raise ValueError(f"unknown face tag '{face}'; expected one of {FACES}")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    r = _bc_from_jet(_jet(params, problem, pts), problem, face, pts)
    _check(f"bc[{face}]", r, pts)
    return r


def _check(term: str, residual: Tensor, points: np.ndarray) -> None:
    bad = ~np.isfinite(residual.value)
    if bad.any():
        i = int(np.flatnonzero(bad.ravel())[0])
        pt = np.atleast_2d(points)[i]
        raise NonFiniteError(f"non-finite {term} residual at point {i} (x, y, z, t) = {tuple(pt)}", op=term)


# -- composite loss -----------------------------------------------------------


def _squared_sums(leaves, problem: PinnProblem, batches: CollocationSet):
    """Per-category sums of squared residuals as Tensors, plus per-face sums."""
    groups = [("pde", batches.interior), ("ic", batches.initial)]
    groups += [(face, batches.boundary[face]) for face in FACES if len(batches.boundary.get(face, ())) > 0]
    groups = [(name, pts) for name, pts in groups if len(pts) > 0]
    allpts = np.concatenate([pts for _, pts in groups], axis=0)
    T = _jet(leaves, problem, allpts)
    sums: dict[str, Tensor] = {}
    start = 0
    for name, pts in groups:
        stop = start + len(pts)
        Tg = T[start:stop]
        if name == "pde":
            r = _pde_from_jet(Tg, problem)
        elif name == "ic":
            r = _ic_from_jet(Tg, problem)
        else:
            r = _bc_from_jet(Tg, problem, name, pts)
        _check(name, r, pts)
        sums[name] = (r * r).sum()
        start = stop
    return sums


def _counts(batches: CollocationSet) -> tuple[int, int, int]:
    n_bc = sum(len(batches.boundary.get(f, ())) for f in FACES)
    return len(batches.interior), len(batches.initial), n_bc


def total_loss(params, problem: PinnProblem, batches: CollocationSet, weights=None) -> tuple[LossBreakdown, Tensor]:
    """Mean-square residuals per category combined as (w1 Lpde + w2 Lic + w3 Lbc) / 3.

    Returns the breakdown and the graph-connected total for backpropagation.
    """
    weights = tuple(problem.weights if weights is None else weights)
    n_pde, n_ic, n_bc = _counts(batches)
    if min(n_pde, n_ic, n_bc) == 0:
        raise ValueError("interior, initial and boundary batches must all be non-empty")
    sums = _squared_sums(params, problem, batches)
    l_pde = sums["pde"] * (1.0 / n_pde)
    l_ic = sums["ic"] * (1.0 / n_ic)
    bc_sum = None
    for face in FACES:
        if face in sums:
            bc_sum = sums[face] if bc_sum is None else bc_sum + sums[face]
    l_bc = bc_sum * (1.0 / n_bc)
    w1, w2, w3 = weights
    total = (l_pde * w1 + l_ic * w2 + l_bc * w3) * (1.0 / 3.0)
    per_face = {f: float(sums[f].value) / len(batches.boundary[f]) for f in FACES if f in sums}
    breakdown = LossBreakdown(float(l_pde.value), float(l_ic.value), float(l_bc.value), float(total.value), per_face)
    return breakdown, total


def _split(batches: CollocationSet, parts: int) -> list[CollocationSet]:
    def chunks(arr):
        return np.array_split(arr, parts)

    interior, initial = chunks(batches.interior), chunks(batches.initial)
    faces = {f: chunks(batches.boundary[f]) for f in FACES}
    return [
        CollocationSet(interior[i], {f: faces[f][i] for f in FACES}, initial[i], batches.seed, counts={"chunk": i})
        for i in range(parts)
    ]


class Objective:
    """Flat-vector loss and gradient over a fixed collocation set.

    With ``workers > 1`` the point sets are split into that many chunks that
    are evaluated in threads, each on its own graph; the partial sums are
    reduced in chunk order so results do not depend on scheduling.
    """

    def __init__(self, problem: PinnProblem, batches: CollocationSet, sizes, workers: int = 1):
        from .mlp import NetworkParams

        self.problem = problem
        self.batches = batches
        self.sizes = tuple(sizes)
        self.workers = max(1, int(workers))
        self.n_evals = 0
        self._unflatten = lambda v: NetworkParams.unflatten(v, self.sizes)
        self._chunks = _split(batches, self.workers) if self.workers > 1 else None
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def breakdown(self, theta: np.ndarray) -> LossBreakdown:
        bd, _ = total_loss(self._unflatten(theta), self.problem, self.batches)
        return bd

    def __call__(self, theta: np.ndarray) -> tuple[float, np.ndarray, LossBreakdown]:
        self.n_evals += 1
        if self._chunks is None:
            leaves = self._unflatten(theta).as_tensors()
            bd, total = total_loss(leaves, self.problem, self.batches)
            return bd.l_total, backward(total, leaves), bd
        return self._parallel(theta)

    def _chunk_eval(self, theta, chunk):
        leaves = self._unflatten(theta).as_tensors()
        sums = _squared_sums(leaves, self.problem, chunk)
        n_pde, n_ic, n_bc = _counts(self.batches)
        w1, w2, w3 = self.problem.weights
        bc = None
        for face in FACES:
            if face in sums:
                bc = sums[face] if bc is None else bc + sums[face]
        total = (sums["pde"] * (w1 / n_pde) + sums["ic"] * (w2 / n_ic) + bc * (w3 / n_bc)) * (1.0 / 3.0)
        values = {k: float(v.value) for k, v in sums.items()}
        return values, float(total.value), backward(total, leaves)

    def _parallel(self, theta):
        results = list(self._pool.map(lambda c: self._chunk_eval(theta, c), self._chunks))
        n_pde, n_ic, n_bc = _counts(self.batches)
        sums = {k: 0.0 for k in ["pde", "ic", *FACES]}
        total, grad = 0.0, np.zeros_like(theta)
        for values, t, g in results:
            for k, v in values.items():
                sums[k] += v
            total += t
            grad = grad + g
        l_pde, l_ic = sums["pde"] / n_pde, sums["ic"] / n_ic
        l_bc = sum(sums[f] for f in FACES) / n_bc
        per_face = {f: sums[f] / len(self.batches.boundary[f]) for f in FACES}
        return total, grad, LossBreakdown(l_pde, l_ic, l_bc, total, per_face)


# -- loss history ---------------------------------------------------------------

HISTORY_HEADER = ["iteration", "l_pde", "l_ic", "l_bc", "l_total"]


def write_history(rows: list[LossBreakdown], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_HEADER + ["phase", "n_evals"])
        for bd in rows:
            writer.writerow([bd.iteration] + [repr(float(v)) for v in bd.row()[1:]] + [bd.phase, bd.n_evals])
    return path


def read_history(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {k: np.array([float(r[k]) for r in rows]) for k in HISTORY_HEADER}
    out["iteration"] = out["iteration"].astype(int)
    out["phase"] = np.array([r.get("phase", "") for r in rows])
    out["n_evals"] = np.array([int(r.get("n_evals") or 0) for r in rows])
    return out
