"""PINN-vs-oracle comparison: maximum errors, melt-pool region, scan lines and probes.

"MAE" here means maximum absolute error. Relative errors are reported
under two bases because neither is canonical: the oracle temperature at the
location of the maximum error, and the oracle's peak rise above ambient in
that frame.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .fdm import StructuredGrid, TemperatureField, probe
from .mlp import NetworkParams, ScalingSpec, predict
from .physics import ProcessParameters, laser_center

MELT_THRESHOLD = 1878.0  # K
REPORT_FORMAT = "lmdpinn-report-v1"


@dataclass
class ProbeSeries:
    name: str
    point: tuple[float, float, float]
    times: list[float]
    pinn: list[float]
    oracle: list[float]


@dataclass
class ScanLine:
    t: float
    x: list[float]
    pinn: list[float]
    oracle: list[float]
    max_rel_error: float  # max |dT| / T_oracle along the line
    melt_extent_pinn: float
    melt_extent_oracle: float


@dataclass
class ComparisonReport:
    max_abs_error: float
    max_error_at: tuple[float, float, float, float]
    rel_error_local_pct: float
    rel_error_rise_pct: float
    melt_region: str
    melt_mae: float
    melt_rel_local_pct: float
    melt_rel_rise_pct: float
    per_frame_max_abs: list[float]
    times: list[float]
    scanlines: list[ScanLine] = field(default_factory=list)
    probes: list[ProbeSeries] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, **asdict(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ComparisonReport":
        d = json.loads(text)
        if d.pop("format", None) != REPORT_FORMAT:
            raise ValueError(f"not a {REPORT_FORMAT} document")
        d["max_error_at"] = tuple(d["max_error_at"])
        d["scanlines"] = [ScanLine(**s) for s in d["scanlines"]]
        d["probes"] = [ProbeSeries(**{**p, "point": tuple(p["point"])}) for p in d["probes"]]
        return cls(**d)

    def to_text(self) -> str:
        x, y, z, t = self.max_error_at
        lines = [
            f"max abs error      {self.max_abs_error:.3f} K at x={x * 1e3:.3f} mm y={y * 1e3:.3f} mm z={z * 1e3:.3f} mm t={t:.2f} s",
            f"  relative (local) {self.rel_error_local_pct:.3f} %",
            f"  relative (rise)  {self.rel_error_rise_pct:.3f} %",
            f"melt-pool region   {self.melt_region}",
            f"  max abs error    {self.melt_mae:.3f} K",
            f"  relative (local) {self.melt_rel_local_pct:.3f} %",
            f"  relative (rise)  {self.melt_rel_rise_pct:.3f} %",
        ]
        for s in self.scanlines:
            lines.append(
                f"scan line t={s.t:g} s  max rel error {100 * s.max_rel_error:.3f} %"
                f"  melt extent pinn {s.melt_extent_pinn * 1e3:.3f} mm oracle {s.melt_extent_oracle * 1e3:.3f} mm"
            )
        for p in self.probes:
            err = max(abs(a - b) for a, b in zip(p.pinn, p.oracle))
            lines.append(f"probe {p.name} at {tuple(round(c * 1e3, 4) for c in p.point)} mm  max abs error {err:.3f} K")
        return "\n".join(lines) + "\n"

    def save(self, out_dir, stem: str = "report") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        js, txt = out_dir / f"{stem}.json", out_dir / f"{stem}.txt"
        js.write_text(self.to_json())
        txt.write_text(self.to_text())
        return js, txt


def _check_compatible(a: TemperatureField, b: TemperatureField) -> None:
    if not a.grid.same_as(b.grid):
        raise ValueError(f"grid mismatch: {a.grid.shape} vs {b.grid.shape} or differing node coordinates")
    if a.times.shape != b.times.shape or not np.allclose(a.times, b.times, rtol=0, atol=1e-9):
        raise ValueError("fields are stored at different times")


def pinn_field(params: NetworkParams, scaling: ScalingSpec, grid: StructuredGrid, times) -> TemperatureField:
    """Evaluate the network at every grid node and time."""
    pts = grid.points()
    frames = []
    for t in times:
        xyzt = np.column_stack([pts, np.full(len(pts), float(t))])
        frames.append(predict(params, scaling, xyzt).reshape(grid.shape))
    return TemperatureField(grid, np.asarray(times, dtype=np.float64), np.array(frames), "PINN")


def error_field(pinn: TemperatureField, oracle: TemperatureField) -> TemperatureField:
    """|pinn - oracle| per node and frame, exportable like any other field."""
    _check_compatible(pinn, oracle)
    return TemperatureField(oracle.grid, oracle.times, np.abs(pinn.temps - oracle.temps), "ERROR")


def melt_pool_mask(oracle: TemperatureField, proc: ProcessParameters, threshold: float = MELT_THRESHOLD):
    """(frames, nx, ny) mask on the top surface and a label saying how it was chosen.

    Nodes at or above ``threshold`` if any exist, otherwise the disc of radius
    2 r_b around the beam center in each frame.
    """
    top = oracle.temps[:, :, :, -1]
    if np.any(top >= threshold):
        return top >= threshold, f"top-surface nodes with oracle T >= {threshold:g} K"
    g = oracle.grid
    X, Y = np.meshgrid(g.x, g.y, indexing="ij")
    mask = np.zeros(top.shape, dtype=bool)
    for i, t in enumerate(oracle.times):
        cx, cy = laser_center(proc, float(min(t, proc.t_end)))
        mask[i] = (X - cx) ** 2 + (Y - cy) ** 2 <= (2.0 * proc.r_b) ** 2
    return mask, f"top-surface disc of radius 2 r_b around the beam (T >= {threshold:g} K never reached)"


def scanline_profile(field: TemperatureField, t: float, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Temperatures at ``n_samples`` evenly spaced x on the line y = 0, z = top."""
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    idx = field.frame_index(t)
    g = field.grid
    xs = np.linspace(g.x[0], g.x[-1], n_samples)
    T = np.array([probe(field, (x, 0.0, g.z[-1]), [field.times[idx]])[0] for x in xs])
    return xs, T


def melt_extent(x, T, T_melt: float) -> float:
    """Length of the contiguous span around the profile maximum where T >= T_melt.

    Crossings are located by linear interpolation between samples.
    """
    x = np.asarray(x, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    peak = int(np.argmax(T))
    if T[peak] < T_melt:
        return 0.0
    lo = peak
    while lo > 0 and T[lo - 1] >= T_melt:
        lo -= 1
    hi = peak
    while hi < T.size - 1 and T[hi + 1] >= T_melt:
        hi += 1

    def crossing(a, b):
        return x[a] + (T_melt - T[a]) * (x[b] - x[a]) / (T[b] - T[a])

    left = crossing(lo - 1, lo) if lo > 0 else x[0]
    right = crossing(hi, hi + 1) if hi < T.size - 1 else x[-1]
    return float(right - left)


def compare_fields(
    pinn: TemperatureField,
    oracle: TemperatureField,
    proc: ProcessParameters,
    melt_threshold: float = MELT_THRESHOLD,
    scan_times=(1.0, 2.0, 3.0),
    n_scan: int = 201,
    probe_points: dict[str, tuple[float, float, float]] | None = None,
    skip_initial: bool = True,
) -> ComparisonReport:
    """Full comparison report; scan lines are produced only for stored times.

    With ``skip_initial`` the t = 0 frame is left out of the global and
    melt-pool maxima: the beam switches on at t = 0, so the reference has a
    step there that a smooth network cannot represent. It still appears in
    ``per_frame_max_abs``.
    """
    _check_compatible(pinn, oracle)
    diff = np.abs(pinn.temps - oracle.temps)
    g = oracle.grid
    active = oracle.times > 0 if skip_initial else np.ones(oracle.times.size, dtype=bool)
    if not active.any():
        active[:] = True
    scored = np.where(active[:, None, None, None], diff, -1.0)
    f, i, j, k = np.unravel_index(int(np.argmax(scored)), diff.shape)
    worst = float(diff[f, i, j, k])
    T0 = proc.T0
    rise = float(oracle.temps[f].max()) - T0

    def pct(num, den):
        return 100.0 * num / den if den > 0 else 0.0

    mask, region = melt_pool_mask(oracle, proc, melt_threshold)
    mask = mask & active[:, None, None]
    top_diff = np.where(mask, diff[:, :, :, -1], -1.0)
    if np.any(mask):
        mf, mi, mj = np.unravel_index(int(np.argmax(top_diff)), top_diff.shape)
        m_err = float(top_diff[mf, mi, mj])
        m_local = pct(m_err, float(oracle.temps[mf, mi, mj, -1]))
        m_rise = pct(m_err, float(oracle.temps[mf].max()) - T0)
    else:
        m_err = m_local = m_rise = 0.0

    scans = []
    for t in scan_times:
        if not np.any(np.abs(oracle.times - t) <= 1e-9):
            continue
        xs, To = scanline_profile(oracle, t, n_scan)
        _, Tp = scanline_profile(pinn, t, n_scan)
        scans.append(
            ScanLine(
                float(t), xs.tolist(), Tp.tolist(), To.tolist(),
                float(np.max(np.abs(Tp - To) / To)),
                melt_extent(xs, Tp, melt_threshold), melt_extent(xs, To, melt_threshold),
            )
        )

    probes = []
    for name, pt in (probe_points or {}).items():
        probes.append(
            ProbeSeries(name, tuple(float(c) for c in pt), oracle.times.tolist(),
                        probe(pinn, pt).tolist(), probe(oracle, pt).tolist())
        )

    return ComparisonReport(
        max_abs_error=worst,
        max_error_at=(float(g.x[i]), float(g.y[j]), float(g.z[k]), float(oracle.times[f])),
        rel_error_local_pct=pct(worst, float(oracle.temps[f, i, j, k])),
        rel_error_rise_pct=pct(worst, rise),
        melt_region=region,
        melt_mae=m_err,
        melt_rel_local_pct=m_local,
        melt_rel_rise_pct=m_rise,
        per_frame_max_abs=diff.reshape(diff.shape[0], -1).max(axis=1).tolist(),
        times=oracle.times.tolist(),
        scanlines=scans,
        probes=probes,
    )


def default_probe_points(domain, proc: ProcessParameters) -> dict[str, tuple[float, float, float]]:
    """P1 on the scan path at the top surface, P2 1.5 mm below it, both mid-track."""
    x_mid = proc.laser_start[0] + 0.5 * proc.v * proc.t_end
    return {"P1": (x_mid, 0.0, domain.Lz), "P2": (x_mid, 0.0, max(domain.Lz - 1.5e-3, 0.0))}
