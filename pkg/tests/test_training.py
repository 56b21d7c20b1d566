import numpy as np
import pytest

from lmdpinn.losses import read_history
from lmdpinn.mlp import init_glorot, load_checkpoint
from lmdpinn.training import TrainingDiverged, TrainSchedule, train


def _curve(result):
    return [(r.iteration, r.l_pde, r.l_ic, r.l_bc, r.l_total) for r in result.history]


def test_empty_schedule_returns_initial_params(desk_problem, small_points):
    res = train(TrainSchedule(0, 0), desk_problem, small_points, seed=3)
    np.testing.assert_array_equal(res.params.flatten(), init_glorot(3).flatten())
    assert [r.iteration for r in res.history] == [0]


def test_history_rows_and_files(desk_problem, small_points, tmp_path):
    sched = TrainSchedule(adam_iters=25, total_iters=40, log_interval=10, checkpoint_interval=20)
    res = train(sched, desk_problem, small_points, seed=0, out_dir=tmp_path)
    assert [r.iteration for r in res.history] == [0, 10, 20, 30, 40]
    assert [r.phase for r in res.history] == ["adam", "adam", "adam", "lbfgs", "lbfgs"]
    hist = read_history(tmp_path / "loss_history.csv")
    assert b"\r" not in (tmp_path / "loss_history.csv").read_bytes()
    assert list(hist["iteration"]) == [0, 10, 20, 30, 40]
    assert np.all(np.diff(hist["n_evals"]) > 0)
    ck = load_checkpoint(tmp_path / "checkpoint.npz")
    np.testing.assert_array_equal(ck.params.flatten(), res.params.flatten())


def test_final_row_when_total_is_not_a_multiple(desk_problem, small_points):
    res = train(TrainSchedule(adam_iters=7, total_iters=7, log_interval=5), desk_problem, small_points, seed=0)
    assert [r.iteration for r in res.history] == [0, 5, 7]


def test_same_seed_is_bit_identical(desk_problem, small_points):
    sched = TrainSchedule(adam_iters=15, total_iters=30, log_interval=5)
    a = train(sched, desk_problem, small_points, seed=1)
    b = train(sched, desk_problem, small_points, seed=1)
    assert _curve(a) == _curve(b)
    np.testing.assert_array_equal(a.params.flatten(), b.params.flatten())


def test_lbfgs_phase_beats_adam(desk_problem, small_points):
    res = train(TrainSchedule(adam_iters=30, total_iters=80, log_interval=10), desk_problem, small_points, seed=2)
    adam_last = [r for r in res.history if r.phase == "adam"][-1]
    assert res.history[-1].l_total < adam_last.l_total


@pytest.mark.parametrize("stop", [12, 27])  # inside the Adam phase and inside L-BFGS
def test_resume_reproduces_uninterrupted_run(desk_problem, small_points, tmp_path, stop):
    sched = TrainSchedule(adam_iters=20, total_iters=40, log_interval=4, checkpoint_interval=100)
    full = train(sched, desk_problem, small_points, seed=4)
    part = train(sched, desk_problem, small_points, seed=4, out_dir=tmp_path, stop_after=stop)
    assert part.stopped_early == "interrupted" and part.iterations == stop
    rest = train(sched, desk_problem, small_points, seed=4, out_dir=tmp_path, resume=part.checkpoint)
    a = _curve(full)
    b = _curve(rest)
    assert [r[0] for r in a] == [r[0] for r in b]
    np.testing.assert_allclose(np.array(b)[:, 1:], np.array(a)[:, 1:], rtol=1e-10, atol=0)
    np.testing.assert_allclose(rest.params.flatten(), full.params.flatten(), rtol=1e-10, atol=1e-14)


def test_divergence_aborts_with_last_checkpoint(desk_problem, small_points, tmp_path):
    # with factor 1 any loss above the initial one counts as divergence
    sched = TrainSchedule(adam_iters=50, total_iters=50, lr=0.5, checkpoint_interval=1, divergence_factor=1.0)
    with pytest.raises(TrainingDiverged) as info:
        train(sched, desk_problem, small_points, seed=0, out_dir=tmp_path)
    assert info.value.checkpoint is not None and info.value.checkpoint.exists()
    assert "diverged" in str(info.value)


def test_schedule_validation():
    with pytest.raises(ValueError):
        TrainSchedule(adam_iters=10, total_iters=5)
    with pytest.raises(ValueError):
        TrainSchedule(log_interval=0)


def test_switch_row_belongs_to_adam(desk_problem, small_points):
    # the row at iteration == adam_iters reports the parameters Adam produced
    res = train(TrainSchedule(adam_iters=20, total_iters=30, log_interval=10), desk_problem, small_points, seed=0)
    assert [(r.iteration, r.phase) for r in res.history] == [(0, "adam"), (10, "adam"), (20, "adam"), (30, "lbfgs")]
