"""Material, process and domain parameters plus the boundary heat fluxes.

Sign convention for surface fluxes: every flux is expressed as the outward
conductive flux ``-kappa * dT/dn`` it balances, in W/m^2. Losses (convection,
radiation) are positive when the surface is hotter than ambient; the laser
term is negative, i.e. heat enters the body.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STEFAN_BOLTZMANN = 5.670374419e-8  # W/(m^2 K^4)

FACES = ("top", "bottom", "symmetry", "x_min", "x_max", "y_max")

# face -> (axis index into (x, y, z), outward normal sign, side "min"/"max")
FACE_GEOMETRY = {
    "x_min": (0, -1.0, "min"),
    "x_max": (0, 1.0, "max"),
    "symmetry": (1, -1.0, "min"),
    "y_max": (1, 1.0, "max"),
    "bottom": (2, -1.0, "min"),
    "top": (2, 1.0, "max"),
}


@dataclass(frozen=True)
class MaterialProperties:
    """Constant thermophysical properties (Ti-6Al-4V by default)."""

    rho: float = 4122.0  # kg/m^3
    cp: float = 831.0  # J/(kg K)
    kappa: float = 35.0  # W/(m K)
    epsilon: float = 0.4

    def __post_init__(self):
        for name in ("rho", "cp", "kappa"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.epsilon <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")

    @property
    def diffusivity(self) -> float:
        """kappa / (rho cp) in m^2/s."""
        return self.kappa / (self.rho * self.cp)

    @property
    def volumetric_heat_capacity(self) -> float:
        return self.rho * self.cp


@dataclass(frozen=True)
class ProcessParameters:
    power: float = 500.0  # W
    eta: float = 0.4
    r_b: float = 1.5e-3  # m
    v: float = 5e-3  # m/s
    h_conv: float = 20.0  # W/(m^2 K), not given by the source data
    sigma_sb: float = STEFAN_BOLTZMANN
    T0: float = 298.0  # K
    laser_start: tuple[float, float] = (5e-3, 0.0)  # m
    t_end: float = 3.0  # s

    def __post_init__(self):
        for name in ("power", "r_b", "v", "h_conv", "sigma_sb", "T0", "t_end"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        object.__setattr__(self, "laser_start", tuple(float(c) for c in self.laser_start))

    @property
    def peak_flux(self) -> float:
        """Magnitude of the laser flux at the beam center, 2 eta P / (pi r_b^2)."""
        return 2.0 * self.eta * self.power / (np.pi * self.r_b**2)


@dataclass(frozen=True)
class DomainSpec:
    """Half domain [0, Lx] x [0, Ly] x [0, Lz]; y = 0 is the symmetry plane."""

    Lx: float = 25e-3
    Ly: float = 6e-3
    Lz: float = 4e-3

    def __post_init__(self):
        for name in ("Lx", "Ly", "Lz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def extents(self) -> tuple[float, float, float]:
        return (self.Lx, self.Ly, self.Lz)

    def face_coordinate(self, face: str) -> float:
        axis, _, side = FACE_GEOMETRY[face]
        return 0.0 if side == "min" else self.extents[axis]

    def validate_path(self, proc: ProcessParameters) -> None:
        """Raise if the beam center leaves the top surface during the scan."""
        x0, y0 = proc.laser_start
        x1 = x0 + proc.v * proc.t_end
        if not (0 <= x0 <= self.Lx and 0 <= x1 <= self.Lx and 0 <= y0 <= self.Ly):
            raise ValueError(
                f"laser path from x={x0} to x={x1} (y={y0}) leaves the top face of a {self.Lx} x {self.Ly} domain"
            )


def laser_center(p: ProcessParameters, t):
    """Beam center (x, y) at time t; the beam travels along +x."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > p.t_end):
        raise ValueError(f"t must lie in [0, {p.t_end}], got {t}")
    x0, y0 = p.laser_start
    x = x0 + p.v * t_arr
    y = np.full_like(x, y0)
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


def q_laser(p: ProcessParameters, x, y, t):
    """Gaussian laser flux on the top surface [W/m^2], negative into the body.

    Only numpy inputs; ``t`` may run slightly past ``t_end`` for callers that
    need the Gaussian at extrapolated times, so the range check is skipped.
    """
    x0, y0 = p.laser_start
    cx = x0 + p.v * np.asarray(t, dtype=np.float64)
    d2 = (np.asarray(x) - cx) ** 2 + (np.asarray(y) - y0) ** 2
    return -p.peak_flux * np.exp(-2.0 * d2 / p.r_b**2)


def q_conv(p: ProcessParameters, T):
    """Convective loss h (T - T0) [W/m^2]. Works on arrays, Tensors and Jets."""
    return p.h_conv * (T - p.T0)


def q_rad(m: MaterialProperties, p: ProcessParameters, T):
    """Radiative loss sigma eps (T^4 - T0^4) [W/m^2]. Works on arrays, Tensors and Jets."""
    return p.sigma_sb * m.epsilon * (T**4 - p.T0**4)
