import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualkanba.autodiff import Tensor
from dualkanba.data import SynthSpec, generate_synthetic
from dualkanba.mamba import MambaConfig
from dualkanba.model import DualKanbaFormer, ModelConfig
from dualkanba.trainer import (
    AdamState, TrainConfig, accuracy, adam_step, evaluate, macro_f1, per_class_f1, sweep_layers, train_loop,
    write_history_csv,
)

from . import oracles


def small_model_cfg(**kw):
    base = dict(d=8, heads=2, n_layers=1, d_in=4, d_img=4, ts=5, ti=3, ta=2, dropout=0.0,
                mamba=MambaConfig(d_state=4))
    base.update(kw)
    return ModelConfig(**base)


def small_data(n=24, seed=0):
    return generate_synthetic(SynthSpec(n_samples=n, ts=5, ti=3, d_in=4, seed=seed))


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

def test_zero_gradient_leaves_params():
    p = {"w": Tensor(np.array([1.0, -2.0]))}
    adam_step(p, {"w": np.zeros(2)}, AdamState(), TrainConfig(lr=0.1))
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


@pytest.mark.parametrize("g,steps", [(0.3, 1), (-2.0, 1), (0.5, 5), (1e-3, 3)])
def test_adam_matches_hand_update(g, steps):
    cfg = TrainConfig(lr=0.01)
    p = {"w": Tensor(np.array([0.7]))}
    state = AdamState()
    for _ in range(steps):
        adam_step(p, {"w": np.array([g])}, state, cfg)
    assert p["w"].data[0] == pytest.approx(oracles.adam_scalar(0.7, g, 0.01, steps=steps), abs=1e-15)


def test_first_step_magnitude_is_lr():
    p = {"w": Tensor(np.array([0.0]))}
    adam_step(p, {"w": np.array([5.0])}, AdamState(), TrainConfig(lr=0.01))
    assert p["w"].data[0] == pytest.approx(-0.01, rel=1e-8)


def test_non_finite_gradient_names_parameter():
    p = {"layer.w": Tensor(np.zeros(2))}
    with pytest.raises(FloatingPointError, match="layer.w"):
        adam_step(p, {"layer.w": np.array([np.nan, 0.0])}, AdamState(), TrainConfig())


@pytest.mark.parametrize("bad", [dict(lr=-1.0), dict(batch_size=0), dict(patience=0), dict(max_epochs=2, patience=3)])
def test_train_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad).validate()


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def test_perfect_predictions():
    y = [0, 1, 2, 1]
    assert accuracy(y, y) == 1.0 and macro_f1(y, y) == 1.0


def test_all_wrong():
    assert accuracy([0, 1, 2], [1, 2, 0]) == 0.0


def test_macro_f1_with_absent_class():
    np.testing.assert_allclose(per_class_f1([0, 0, 1], [0, 1, 1]), [2 / 3, 2 / 3, 0.0])
    assert macro_f1([0, 0, 1], [0, 1, 1]) == pytest.approx(4 / 9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=40))
def test_metrics_in_unit_interval(pairs):
    y, p = zip(*pairs)
    assert 0.0 <= accuracy(y, p) <= 1.0
    assert 0.0 <= macro_f1(y, p) <= 1.0


def test_evaluate_rejects_empty():
    with pytest.raises(ValueError):
        evaluate(DualKanbaFormer(small_model_cfg()), [])


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------

def test_zero_learning_rate_changes_nothing():
    model = DualKanbaFormer(small_model_cfg())
    before = model.state_dict()
    data = small_data()
    result = train_loop(model, data, data, TrainConfig(lr=0.0, max_epochs=3, patience=3, batch_size=8))
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, before[k])
    assert len({row["dev_acc"] for row in result.history}) == 1


def test_patience_one_with_constant_dev_stops_at_epoch_two():
    model = DualKanbaFormer(small_model_cfg())
    data = small_data()
    result = train_loop(model, data, data, TrainConfig(lr=0.0, max_epochs=10, patience=1, batch_size=8))
    assert [r["epoch"] for r in result.history] == [1, 2]
    assert result.best_epoch == 1


def test_best_state_is_restored():
    model = DualKanbaFormer(small_model_cfg())
    train, dev = small_data(32, 0), small_data(16, 1)
    result = train_loop(model, train, dev, TrainConfig(lr=3e-3, max_epochs=6, patience=6, batch_size=8))
    assert result.best_dev_acc == max(r["dev_acc"] for r in result.history)
    assert evaluate(model, dev).accuracy == result.best_dev_acc


def test_training_is_deterministic(tmp_path):
    outs = []
    for run in range(2):
        model = DualKanbaFormer(small_model_cfg(dropout=0.3))
        result = train_loop(model, small_data(), small_data(8, 2),
                            TrainConfig(lr=1e-3, max_epochs=2, patience=2, batch_size=8))
        write_history_csv(result.history, tmp_path / f"h{run}.csv")
        model.save(tmp_path / f"m{run}")
        outs.append(((tmp_path / f"h{run}.csv").read_bytes(), (tmp_path / f"m{run}").read_bytes()))
    assert outs[0] == outs[1]


def test_history_csv_columns(tmp_path):
    history = [{"epoch": 1, "train_loss": 1.5, "dev_acc": 0.25, "dev_macro_f1": 0.1}]
    write_history_csv(history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines == ["epoch,train_loss,dev_acc,dev_macro_f1", "1,1.5,0.25,0.1"]


def test_empty_training_set():
    with pytest.raises(ValueError):
        train_loop(DualKanbaFormer(small_model_cfg()), [], None, TrainConfig(max_epochs=1, patience=1))


def test_sweep_rows_per_depth():
    data = small_data(16)
    rows = sweep_layers([1, 2], data, data, small_model_cfg(), TrainConfig(lr=1e-3, max_epochs=1, patience=1))
    assert [r["n_layers"] for r in rows] == [1, 2]
    assert set(rows[0]) == {"n_layers", "dev_acc", "dev_macro_f1", "dev_loss", "best_epoch"}
