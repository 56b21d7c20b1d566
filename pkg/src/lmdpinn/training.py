"""Adam-then-L-BFGS training loop with logging, checkpoints and exact resume."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .collocation import CollocationBudget, CollocationSet, build_collocation
from .losses import LossBreakdown, Objective, PinnProblem, write_history
from .mlp import LAYER_SIZES, NetworkParams, init_glorot, load_checkpoint, save_checkpoint
from .optim import AdamState, LbfgsState, adam_step, lbfgs_state_arrays, lbfgs_state_from_arrays, lbfgs_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSchedule:
    adam_iters: int = 6000
    total_iters: int = 35000
    lr: float = 2e-4
    log_interval: int = 100
    checkpoint_interval: int = 1000
    lbfgs_memory: int = 10
    max_stalls: int = 5
    resample_every: int = 0  # 0 keeps the point set fixed for the whole run
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.adam_iters < 0 or self.total_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        if self.adam_iters > self.total_iters:
            raise ValueError(f"adam_iters ({self.adam_iters}) exceeds total_iters ({self.total_iters})")
        if self.log_interval < 1 or self.checkpoint_interval < 1:
            raise ValueError("log and checkpoint intervals must be positive")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Path | None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainedModel:
    params: NetworkParams
    history: list[LossBreakdown]
    n_evals: int
    wall_time: float
    iterations: int
    stopped_early: str = ""
    checkpoint: Path | None = None
    extra: dict = field(default_factory=dict)


def _history_to_json(rows: list[LossBreakdown]) -> list[dict]:
    return [asdict(r) for r in rows]


def _history_from_json(rows: list[dict]) -> list[LossBreakdown]:
    return [LossBreakdown(**r) for r in rows]


def train(
    schedule: TrainSchedule,
    problem: PinnProblem,
    collocation: CollocationSet | None,
    seed: int,
    budget: CollocationBudget | None = None,
    out_dir=None,
    workers: int = 1,
    resume=None,
    sizes=LAYER_SIZES,
    stop_after: int | None = None,
) -> TrainedModel:
    """Run Adam for ``adam_iters`` outer iterations, then L-BFGS up to ``total_iters``.

    One iteration is one optimizer step on the full, fixed collocation set.
    History rows are taken at iteration 0, every ``log_interval`` and at the
    last iteration. ``stop_after`` halts early (for resume tests) as if
    interrupted, leaving a checkpoint behind.
    """
    t_start = time.perf_counter()
    out_dir = Path(out_dir) if out_dir is not None else None
    if collocation is None:
        collocation = build_collocation(problem.domain, problem.process, budget or CollocationBudget(), seed)

    theta = init_glorot(seed, sizes).flatten()
    adam = AdamState.zeros(theta.size, lr=schedule.lr)
    lbfgs = LbfgsState(m_hist=schedule.lbfgs_memory)
    history: list[LossBreakdown] = []
    start_iter, n_evals, stalls = 0, 0, 0
    initial_loss = None

    if resume is not None:
        ck = load_checkpoint(resume)
        theta = ck.params.flatten()
        st = ck.extra["train_state"]
        start_iter, n_evals, stalls = st["iteration"], st["n_evals"], st["stalls"]
        initial_loss = st["initial_loss"]
        history = _history_from_json(st["history"])
        adam = AdamState(ck.arrays["adam_m"], ck.arrays["adam_v"], st["adam_step"], lr=schedule.lr)
        if "lbfgs_scalars" in ck.arrays:
            lbfgs = lbfgs_state_from_arrays(ck.arrays, m_hist=schedule.lbfgs_memory)
        if st.get("resampled_seed") is not None:
            collocation = build_collocation(
                problem.domain, problem.process, budget or CollocationBudget(), st["resampled_seed"]
            )

    objective = Objective(problem, collocation, sizes, workers=workers)
    resampled_seed = None
    last_ckpt: Path | None = Path(resume) if resume is not None else None

    def fun(v):
        f, g, _ = objective(v)
        return f, g

    def record(it: int, bd: LossBreakdown, phase: str):
        bd.iteration, bd.phase, bd.n_evals = it, phase, n_evals + objective.n_evals
        history.append(bd)
        log.info("iter %6d %-5s total %.4e pde %.4e ic %.4e bc %.4e", it, phase, bd.l_total, bd.l_pde, bd.l_ic, bd.l_bc)

    def should_log(it: int) -> bool:
        return it % schedule.log_interval == 0 or it == schedule.total_iters

    def checkpoint(it: int, name: str = "checkpoint.npz") -> Path | None:
        nonlocal last_ckpt
        if out_dir is None:
            return None
        arrays = {"adam_m": adam.m, "adam_v": adam.v}
        if lbfgs.g is not None:
            arrays.update(lbfgs_state_arrays(lbfgs))
        state = {
            "iteration": it,
            "n_evals": n_evals + objective.n_evals,
            "stalls": stalls,
            "initial_loss": initial_loss,
            "adam_step": adam.step,
            "history": _history_to_json(history),
            "resampled_seed": resampled_seed,
        }
        last_ckpt = save_checkpoint(
            out_dir / name,
            NetworkParams.unflatten(theta, sizes),
            problem.scaling,
            seed,
            extra={"train_state": state},
            arrays=arrays,
        )
        return last_ckpt

    def check_divergence(it: int, loss: float):
        if not np.isfinite(loss) or (initial_loss is not None and loss > schedule.divergence_factor * initial_loss):
            raise TrainingDiverged(
                f"loss {loss} at iteration {it} diverged (initial {initial_loss})",
                last_ckpt,
            )

    it = start_iter
    stopped = ""
    try:
        # Adam phase: the loss at the current point comes with its gradient
        while it < schedule.adam_iters:
            if schedule.resample_every and it > 0 and it % schedule.resample_every == 0:
                resampled_seed = seed + it
                collocation = build_collocation(
                    problem.domain, problem.process, budget or CollocationBudget(), resampled_seed
                )
                objective = Objective(problem, collocation, sizes, workers=workers)
            f, g, bd = objective(theta)
            if initial_loss is None:
                initial_loss = f
            check_divergence(it, f)
            if should_log(it):
                record(it, bd, "adam")
            theta, adam = adam_step(adam, theta, g)
            it += 1
            if it % schedule.checkpoint_interval == 0:
                checkpoint(it)
            if stop_after is not None and it >= stop_after:
                checkpoint(it)
                return _finish(theta, sizes, history, n_evals + objective.n_evals, t_start, it, "interrupted", last_ckpt)

        # L-BFGS phase
        while it < schedule.total_iters:
            if lbfgs.f is None:
                f, g, bd = objective(theta)
                lbfgs.f, lbfgs.g = f, g
                if initial_loss is None:
                    initial_loss = f
                if should_log(it) and (not history or history[-1].iteration != it):
                    # parameters here are still the ones Adam produced
                    record(it, bd, "adam" if it <= schedule.adam_iters else "lbfgs")
            theta, lbfgs = lbfgs_step(lbfgs, fun, theta)
            check_divergence(it, lbfgs.f)
            it += 1
            stalls = stalls + 1 if lbfgs.stalled else 0
            if should_log(it):
                record(it, objective.breakdown(theta), "lbfgs")
            if it % schedule.checkpoint_interval == 0:
                checkpoint(it)
            if stop_after is not None and it >= stop_after:
                checkpoint(it)
                return _finish(theta, sizes, history, n_evals + objective.n_evals, t_start, it, "interrupted", last_ckpt)
            if stalls >= schedule.max_stalls:
                stopped = f"line search stalled {stalls} times in a row at iteration {it}"
                log.warning(stopped)
                break

        if not history or history[-1].iteration != it:
            f, g, bd = objective(theta)
            if initial_loss is None:
                initial_loss = f
            record(it, bd, "lbfgs" if it > schedule.adam_iters else "adam")
    finally:
        objective.close()

    ck = checkpoint(it)
    if out_dir is not None:
        write_history(history, out_dir / "loss_history.csv")
    return _finish(theta, sizes, history, n_evals + objective.n_evals, t_start, it, stopped, ck)


def _finish(theta, sizes, history, n_evals, t_start, it, stopped, ckpt) -> TrainedModel:
    return TrainedModel(
        params=NetworkParams.unflatten(theta, sizes),
        history=history,
        n_evals=n_evals,
        wall_time=time.perf_counter() - t_start,
        iterations=it,
        stopped_early=stopped,
        checkpoint=ckpt,
    )
