"""Training loop, evaluation metrics and checkpoint lifecycle."""
from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from npkit import training as T
from npkit.errors import DimensionError, DomainError, FormatError
from npkit.gp import FunctionTask
from npkit.model import NeuralProcess, NPConfig

from .conftest import small_config

GP_SMALL = {"kind": "gp", "n_points": 16}


def _config(**kw):
    base = dict(steps=3, batch_size=4, lr=1e-3, seed=5, context_range=(1, 8), task_source=GP_SMALL)
    base.update(kw)
    return T.TrainConfig(**base)


def test_config_validation():
    with pytest.raises(DomainError):
        T.TrainConfig(steps=0)
    with pytest.raises(DomainError):
        T.TrainConfig(batch_size=0)
    with pytest.raises(DomainError):
        T.make_source(T.TrainConfig(task_source={"kind": "celeba"}))


def test_config_json_round_trip(tmp_path):
    cfg = _config()
    (tmp_path / "c.json").write_text(__import__("json").dumps(cfg.to_dict()))
    assert T.TrainConfig.from_json(tmp_path / "c.json") == cfg


def test_one_step_changes_parameters():
    model = NeuralProcess(small_config(), seed=0)
    before = model.params.copy()
    trained, history = T.train(_config(steps=1), small_config(), model=model)
    assert len(history) == 1
    assert any(not np.array_equal(before[k], trained.params[k]) for k in before)


def test_same_seed_same_history():
    _, h1 = T.train(_config(), small_config())
    _, h2 = T.train(_config(), small_config())
    _, h3 = T.train(_config(seed=6), small_config())
    assert h1 == h2 and h1 != h3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_with_step():
    def bad_source(rng, batch):
        xs = rng.uniform(-1, 1, size=(5, 1))
        return [FunctionTask(xs, np.full((5, 1), 1e300), [0, 1])]

    with pytest.raises(T.TrainingError) as info:
        T.train(_config(steps=2), small_config(), source=bad_source)
    assert info.value.step == 1


def test_zero_function_family_reaches_likelihood_floor():
    cfg = NPConfig(r_dim=8, z_dim=4, encoder_hidden=(16,), latent_hidden=(16,), decoder_hidden=(16,))
    tc = T.TrainConfig(steps=2000, batch_size=16, lr=1e-4, seed=0, context_range=(1, 10),
                       task_source={"kind": "zero", "n_points": 20})
    model, _ = T.train(tc, cfg)
    rng = np.random.default_rng(1)
    tasks = [FunctionTask(rng.uniform(-2, 2, (20, 1)), np.zeros((20, 1)), np.arange(5)) for _ in range(8)]
    report = T.evaluate(model, tasks, 8, rng)
    bound = -0.5 * math.log(2 * math.pi) - math.log(0.1) - 0.1
    assert report.log_likelihood > bound


def test_loss_csv(tmp_path):
    T.write_loss_csv([3.5, 2.25], tmp_path / "loss.csv")
    rows = list(csv.reader(open(tmp_path / "loss.csv")))
    assert rows == [["step", "loss"], ["1", "3.5"], ["2", "2.25"]]


# --- evaluation -----------------------------------------------------------------------


def test_repeated_task_equals_single(small_model):
    task = T.heldout_gp_tasks(1, 30, seed=0)[0]
    task = T.with_context_size(task, 5)
    one = T.evaluate(small_model, [task], 4, np.random.default_rng(2))
    many = T.evaluate(small_model, [task] * 3, 4, np.random.default_rng(2))
    for k, v in one.to_dict().items():
        if k != "n_tasks":
            assert many.to_dict()[k] == pytest.approx(v, rel=1e-12)


def test_untrained_metrics_finite(small_model):
    tasks = [T.with_context_size(t, 3) for t in T.heldout_gp_tasks(4, 20, seed=1)]
    report = T.evaluate(small_model, tasks, 3, np.random.default_rng(0))
    assert all(math.isfinite(v) for v in report.to_dict().values())
    assert report.curve_std >= 0 and report.std_all >= report.curve_std


def test_evaluate_guards(small_model):
    with pytest.raises(DomainError):
        T.evaluate(small_model, [], 4)
    task = T.heldout_gp_tasks(1, 10, seed=0)[0]
    with pytest.raises(DomainError):
        T.evaluate(small_model, [task], 0)


def test_mixture_statistics_against_direct_formulae(small_model):
    task = T.with_context_size(T.heldout_gp_tasks(1, 12, seed=3)[0], 4)
    got = T.evaluate_task(small_model, task, 5, seed=0)
    preds = small_model.predict(task.context_pairs(), task.xs, 5, np.random.default_rng(0))
    means = np.stack([p.mean for p in preds])[:, :, 0]
    stds = np.stack([p.std for p in preds])[:, :, 0]
    y = task.ys[:, 0]
    dens = np.exp(-0.5 * ((y - means) / stds) ** 2) / (stds * np.sqrt(2 * np.pi))
    var = (stds ** 2).mean(axis=0) + means.var(axis=0)
    assert got["log_likelihood"] == pytest.approx(np.log(dens.mean(axis=0)).mean(), rel=1e-10)
    assert got["std_all"] == pytest.approx(np.sqrt(var).mean(), rel=1e-10)
    assert got["mse"] == pytest.approx(((means.mean(axis=0) - y) ** 2).mean(), rel=1e-10)
    assert got["curve_std"] == pytest.approx(means.std(axis=0).mean(), rel=1e-10)


def test_heldout_tasks_disjoint_from_training_stream():
    train_tasks = T.make_source(_config(seed=0, context_range=(1, 1)))(T.rng_streams(0)["data"], 4)
    held = T.heldout_gp_tasks(4, 16, seed=0)
    for a in train_tasks:
        for b in held:
            assert not np.array_equal(a.xs, b.xs)
    again = T.heldout_gp_tasks(4, 16, seed=0)
    for a, b in zip(held, again):
        np.testing.assert_array_equal(a.ys, b.ys)


def test_context_sweep_keys(small_model):
    tasks = T.heldout_gp_tasks(2, 20, seed=0)
    sweep = T.context_sweep(small_model, tasks, [1, 5, 20], 3, np.random.default_rng(0))
    assert list(sweep) == [1, 5, 20]
    assert math.isnan(sweep[20].std_away)


# --- checkpoints -----------------------------------------------------------------------


def test_save_load_save_identical_bytes(tmp_path, small_model):
    T.save(small_model, tmp_path / "a.npk")
    T.save(T.load(tmp_path / "a.npk"), tmp_path / "b.npk")
    assert (tmp_path / "a.npk").read_bytes() == (tmp_path / "b.npk").read_bytes()
    assert (tmp_path / "a.npk.json").read_text() == (tmp_path / "b.npk.json").read_text()


def test_load_errors(tmp_path, small_model):
    T.save(small_model, tmp_path / "a.npk")
    with pytest.raises(DimensionError, match="decoder"):
        T.load(tmp_path / "a.npk", small_config(decoder_hidden=(8, 8)))
    (tmp_path / "a.npk").write_bytes(b"JUNK" + (tmp_path / "a.npk").read_bytes()[4:])
    with pytest.raises(FormatError):
        T.load(tmp_path / "a.npk")
