"""Run configuration: a strict INI-style file with one section per block.

Unknown sections and keys are rejected with the file line that holds them.
Keys with no default must be present; every other key missing from the file
takes its default and the substitution is logged.
"""

from __future__ import annotations

import configparser
import hashlib
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from .collocation import CollocationBudget
from .mlp import ScalingSpec
from .physics import DomainSpec, MaterialProperties, ProcessParameters
from .training import TrainSchedule

log = logging.getLogger(__name__)

REQUIRED = object()
OUTPUT_ROOT_ENV = "LMDPINN_OUTPUT_ROOT"


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` names the file, line and key."""


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


_PARSERS = {float: float, int: int, str: str, "floats": _float_list}


def _render(kind, value) -> str:
    if kind is float:
        return repr(float(value))
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


# section -> key -> (kind, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "material": {
        "rho": (float, REQUIRED),
        "cp": (float, REQUIRED),
        "kappa": (float, REQUIRED),
        "epsilon": (float, REQUIRED),
    },
    "process": {
        "power": (float, REQUIRED),
        "eta": (float, REQUIRED),
        "r_b": (float, REQUIRED),
        "v": (float, REQUIRED),
        "T0": (float, REQUIRED),
        "h_conv": (float, 20.0),
        "laser_start_x": (float, 5e-3),
        "laser_start_y": (float, 0.0),
        "t_end": (float, 3.0),
    },
    "domain": {
        "Lx": (float, 25e-3),
        "Ly": (float, 6e-3),
        "Lz": (float, 4e-3),
    },
    "network": {
        "hidden_layers": (int, 4),
        "width": (int, 32),
        "T_c": (float, 2000.0),
        "seed": (int, 0),
    },
    "collocation": {
        "interior": (int, 8192),
        "top": (int, 1024),
        "other_face": (int, 512),
        "initial": (int, 2048),
        "bias": (float, 0.5),
    },
    "training": {
        "adam_iters": (int, 6000),
        "total_iters": (int, 35000),
        "lr": (float, 2e-4),
        "w_pde": (float, 1.0),
        "w_ic": (float, 1e-4),
        "w_bc": (float, 1.0),
        "log_interval": (int, 100),
        "checkpoint_interval": (int, 1000),
        "lbfgs_memory": (int, 10),
        "max_stalls": (int, 5),
        "resample_every": (int, 0),
    },
    "oracle": {
        "nx": (int, 100),
        "ny": (int, 24),
        "nz": (int, 16),
        "z_ratio": (float, 1.0),
        "output_hz": (float, 10.0),
    },
    "compare": {
        "times": ("floats", (1.0, 2.0, 3.0)),
        "melt_threshold": (float, 1878.0),
        "n_scan": (int, 201),
    },
    "output": {
        "root": (str, "runs"),
        "train_dir": (str, "train"),
        "simulate_dir": (str, "oracle"),
        "compare_dir": (str, "compare"),
    },
}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """(section, key) -> 1-based line number, for error messages."""
    where: dict[tuple[str, str], int] = {}
    section = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            where[(section, "")] = n
        elif section is not None:
            for sep in ("=", ":"):
                if sep in line:
                    where[(section, line.split(sep, 1)[0].strip())] = n
                    break
    return where


@dataclass(frozen=True)
class RunConfig:
    """Typed values per section; ``source`` is where they came from (for messages)."""

    values: dict
    source: str = "<memory>"

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    # -- typed views -------------------------------------------------------

    def material(self) -> MaterialProperties:
        return MaterialProperties(**self["material"])

    def process(self) -> ProcessParameters:
        p = dict(self["process"])
        start = (p.pop("laser_start_x"), p.pop("laser_start_y"))
        return ProcessParameters(laser_start=start, **p)

    def domain(self) -> DomainSpec:
        return DomainSpec(**self["domain"])

    def layer_sizes(self) -> tuple[int, ...]:
        n = self["network"]
        return (4,) + (n["width"],) * n["hidden_layers"] + (1,)

    def scaling(self) -> ScalingSpec:
        return ScalingSpec.for_domain(self.domain(), self["process"]["t_end"], self["network"]["T_c"], self["process"]["T0"])

    def budget(self) -> CollocationBudget:
        return CollocationBudget(**self["collocation"])

    def schedule(self) -> TrainSchedule:
        t = {k: v for k, v in self["training"].items() if not k.startswith("w_")}
        return TrainSchedule(**t)

    def weights(self) -> tuple[float, float, float]:
        t = self["training"]
        return (t["w_pde"], t["w_ic"], t["w_bc"])

    @property
    def seed(self) -> int:
        return self["network"]["seed"]

    def output_root(self) -> Path:
        env = os.environ.get(OUTPUT_ROOT_ENV)
        if env:
            log.info("output root overridden by %s=%s", OUTPUT_ROOT_ENV, env)
            return Path(env)
        return Path(self["output"]["root"])

    def output_dir(self, kind: str) -> Path:
        return self.output_root() / self["output"][f"{kind}_dir"]

    # -- text form -----------------------------------------------------------

    def dumps(self) -> str:
        out = []
        for section, keys in SCHEMA.items():
            out.append(f"[{section}]")
            for key, (kind, _) in keys.items():
                out.append(f"{key} = {_render(kind, self.values[section][key])}")
            out.append("")
        return "\n".join(out)

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def validate(self) -> None:
        """Build every typed view so range errors surface at load time."""
        builders = {
            "material": self.material,
            "process": self.process,
            "domain": self.domain,
            "collocation": self.budget,
            "training": self.schedule,
            "network": self.scaling,
        }
        for section, build in builders.items():
            try:
                build()
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{self.source}: [{section}] {exc}") from None
        d = self.domain()
        p = self.process()
        try:
            d.validate_path(p)
        except ValueError as exc:
            raise ConfigError(f"{self.source}: [process] {exc}") from None
        n = self["network"]
        if n["hidden_layers"] < 1 or n["width"] < 1:
            raise ConfigError(f"{self.source}: [network] hidden_layers and width must be positive")
        o = self["oracle"]
        if min(o["nx"], o["ny"], o["nz"]) < 3:
            raise ConfigError(f"{self.source}: [oracle] need at least 3 nodes per axis")
        if not 0 < o["z_ratio"] <= 1:
            raise ConfigError(f"{self.source}: [oracle] z_ratio must lie in (0, 1]")


def loads(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"), strict=True)
    parser.optionxform = str  # keep Lx, T0 as written
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None
    lines = _key_lines(text)
    if parser.defaults():
        raise ConfigError(f"{source}: a [DEFAULT] section is not supported")

    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(
                f"{source}:{lines.get((section, ''), '?')}: unknown section [{section}] "
                f"(expected one of {', '.join(SCHEMA)})"
            )
    for section, keys in SCHEMA.items():
        have = parser[section] if parser.has_section(section) else {}
        for key in have:
            if key not in keys:
                raise ConfigError(f"{source}:{lines.get((section, key), '?')}: unknown key '{key}' in [{section}]")
        block = {}
        for key, (kind, default) in keys.items():
            if key in have:
                raw = have[key]
                try:
                    block[key] = _PARSERS[kind](raw)
                except ValueError:
                    name = kind if isinstance(kind, str) else kind.__name__
                    raise ConfigError(
                        f"{source}:{lines.get((section, key), '?')}: {section}.{key} = {raw!r} is not a valid {name}"
                    ) from None
            elif default is REQUIRED:
                raise ConfigError(f"{source}: missing required key {section}.{key}")
            else:
                log.info("%s: %s.%s not set, using default %s", source, section, key, _render(kind, default))
                block[key] = default
        values[section] = block
    cfg = RunConfig(values, source)
    cfg.validate()
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return loads(text, str(path))
