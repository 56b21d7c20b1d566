"""Command-line entry point: train, simulate, compare, sample, probe.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import NonFiniteError
from .collocation import build_collocation, export_csv
from .config import ConfigError, RunConfig, load
from .fdm import InstabilityError, StructuredGrid, probe, run
from .fields_io import read_fields, write_fields
from .losses import PinnProblem
from .metrics import compare_fields, default_probe_points, error_field, pinn_field
from .mlp import load_checkpoint
from .optim import NonFiniteGradient
from .training import TrainingDiverged, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("lmdpinn")


def _versions() -> dict[str, str]:
    import numba
    import scipy

    return {
        "lmdpinn": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def write_manifest(out_dir: Path, command: str, argv: list[str], cfg: RunConfig | None, wall: float, outputs, **extra) -> Path:
    """manifest.json: enough to rerun the command (argv plus the resolved config text)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "argv": argv,
        "config_source": cfg.source if cfg else None,
        "config_sha256": cfg.digest() if cfg else None,
        "config": cfg.dumps() if cfg else None,
        "seed": cfg.seed if cfg else None,
        "versions": _versions(),
        "wall_time_s": round(wall, 3),
        "outputs": sorted(str(Path(p).name) for p in outputs),
        **extra,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def _problem(cfg: RunConfig) -> PinnProblem:
    return PinnProblem(cfg.material(), cfg.process(), cfg.domain(), cfg.scaling(), cfg.weights())


def _grid(cfg: RunConfig) -> StructuredGrid:
    o = cfg["oracle"]
    return StructuredGrid.uniform(cfg.domain(), o["nx"], o["ny"], o["nz"], o["z_ratio"])


def cmd_train(args, argv) -> int:
    cfg = load(args.config)
    out = cfg.output_dir("train")
    start = time.perf_counter()
    problem = _problem(cfg)
    budget = cfg.budget()
    collocation = build_collocation(problem.domain, problem.process, budget, cfg.seed)
    try:
        result = train(
            cfg.schedule(), problem, collocation, cfg.seed, budget=budget, out_dir=out,
            workers=args.workers, resume=args.resume, sizes=cfg.layer_sizes(),
        )
    except TrainingDiverged as exc:
        print(f"error: {exc}; last checkpoint: {exc.checkpoint}", file=sys.stderr)
        return EXIT_NUMERIC
    wall = time.perf_counter() - start
    final = result.history[-1]
    write_manifest(
        out, "train", argv, cfg, wall, [result.checkpoint, out / "loss_history.csv"],
        workers=args.workers, resume=args.resume, iterations=result.iterations,
        n_evals=result.n_evals, final_loss=final.l_total, stopped_early=result.stopped_early,
    )
    print(f"trained {result.iterations} iterations in {wall:.1f} s; final l_total {final.l_total:.4e}")
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def cmd_simulate(args, argv) -> int:
    cfg = load(args.config)
    out = cfg.output_dir("simulate")
    start = time.perf_counter()
    field = run(_grid(cfg), cfg.material(), cfg.process(), output_hz=cfg["oracle"]["output_hz"])
    files = write_fields(field, out)
    wall = time.perf_counter() - start
    peak = float(field.temps[-1].max())
    write_manifest(out, "simulate", argv, cfg, wall, files, frames=int(field.times.size), peak_final_K=peak)
    print(f"{field.times.size} frames written to {out}; peak temperature at t={field.times[-1]:g} s: {peak:.1f} K")
    return EXIT_OK


def _check_domain(cfg: RunConfig, ck, fields) -> None:
    want = (0.0, 0.0, 0.0, 0.0), (*cfg.domain().extents, cfg["process"]["t_end"])
    have = ck.scaling.lower, ck.scaling.upper
    if not (np.allclose(have[0], want[0]) and np.allclose(have[1], want[1], rtol=1e-12)):
        raise ConfigError(f"checkpoint was trained on {have} but the config describes {want}")
    g = fields.grid
    ext = (g.x[-1] - g.x[0], g.y[-1] - g.y[0], g.z[-1] - g.z[0])
    if not np.allclose(ext, cfg.domain().extents, rtol=1e-12):
        raise ConfigError(f"field grid spans {ext} but the config domain is {cfg.domain().extents}")


def cmd_compare(args, argv) -> int:
    cfg = load(args.config)
    out = cfg.output_dir("compare")
    start = time.perf_counter()
    ck = load_checkpoint(args.checkpoint)
    oracle = read_fields(args.fields)
    _check_domain(cfg, ck, oracle)
    pinn = pinn_field(ck.params, ck.scaling, oracle.grid, oracle.times)
    proc = cfg.process()
    c = cfg["compare"]
    probes = default_probe_points(cfg.domain(), proc)
    report = compare_fields(pinn, oracle, proc, c["melt_threshold"], c["times"], c["n_scan"], probes)
    files = list(report.save(out))
    files.append(_write_scanlines(report, out / "scanlines.csv"))
    files.append(_write_probes(report, out / "probes.csv"))
    if args.error_maps:
        files += write_fields(error_field(pinn, oracle), out / "error_maps")
    write_manifest(out, "compare", argv, cfg, time.perf_counter() - start, files,
                   checkpoint=str(args.checkpoint), fields=str(args.fields))
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _write_scanlines(report, path: Path) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "T_pinn", "T_oracle"])
        for s in report.scanlines:
            for x, a, b in zip(s.x, s.pinn, s.oracle):
                w.writerow([repr(s.t), repr(x), repr(a), repr(b)])
    return path


def _write_probes(report, path: Path) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["probe", "x", "y", "z", "t", "T_pinn", "T_oracle"])
        for p in report.probes:
            for t, a, b in zip(p.times, p.pinn, p.oracle):
                w.writerow([p.name, *(repr(c) for c in p.point), repr(t), repr(a), repr(b)])
    return path


def cmd_sample(args, argv) -> int:
    cfg = load(args.config)
    pts = build_collocation(cfg.domain(), cfg.process(), cfg.budget(), cfg.seed)
    path = export_csv(pts, args.out)
    print(f"{pts.total()} points written to {path}")
    return EXIT_OK


def cmd_probe(args, argv) -> int:
    field = read_fields(args.fields)
    series = probe(field, (args.x, args.y, args.z))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["t", "T"])
    for t, T in zip(field.times, series):
        w.writerow([repr(float(t)), repr(float(T))])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lmdpinn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the network; writes checkpoint and loss history")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run the finite-difference reference solver")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="compare a trained network with reference fields")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fields", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--error-maps", action="store_true", help="also export |dT| frames")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sample", help="export the collocation points as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("probe", help="temperature history at one point of stored fields")
    p.add_argument("--fields", required=True)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--z", type=float, required=True)
    p.set_defaults(func=cmd_probe)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InstabilityError, NonFiniteError, NonFiniteGradient, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
