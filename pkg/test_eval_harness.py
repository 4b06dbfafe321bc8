"""
Pruebas de la evaluación: precisión de acciones buenas, línea base aleatoria,
curvas de aprendizaje, distribución de acciones y rollouts.
"""

import numpy as np
import pandas as pd
import pytest

from app.eval_harness import (
    CURVE_COLUMNS,
    EvaluationError,
    action_distribution,
    contact_rate_histogram,
    drift_sweep,
    learning_curve,
    oracle_action,
    oracle_policy,
    precision,
    random_baseline_precision,
    rollout,
    rollout_summary_frame,
    rollout_trace_frame,
    score_actions,
    state_contact_rates,
)
from app.qnet import build
from app.schemas import ContactBand, TrainConfig
from app.sim_world import make_env
from app.trainer import train
from tests.builders import (
    CANONICAL_CLASSES,
    flat_env_config,
    pixels_for_rate,
    synthetic_dataset,
    tiny_arch,
)

BAND = ContactBand()


def constant_net(action: int):
    """Red cuyo argmax es siempre `action`."""
    net = build(tiny_arch(), seed=0)
    for _, p in net.parameters():
        p[...] = 0.0
    net.parametric_layers()[-1].params["b"][action] = 1.0
    return net


def in_band_dataset(n: int = 20):
    return synthetic_dataset(n, seed=1, k_values=[pixels_for_rate(30.0)] * n)


def no_contact_dataset(n: int = 20):
    return synthetic_dataset(n, seed=1, k_values=[0] * n)


# ============================================================================
# Precisión
# ============================================================================

def test_state_contact_rates_use_pre_action_image():
    d = synthetic_dataset(3, k_values=[0, 93, 300])
    np.testing.assert_allclose(state_contact_rates(d), [0.0, 1000 * 93 / 3072, 1000 * 300 / 3072])


def test_null_action_net_is_perfect_in_band():
    report = precision(constant_net(4), in_band_dataset(), CANONICAL_CLASSES, BAND)
    assert report.precision == 1.0
    assert report.band_states == 20
    assert report.low_precision is None


def test_null_action_net_fails_without_contact():
    report = precision(constant_net(4), no_contact_dataset(), CANONICAL_CLASSES, BAND)
    assert report.precision == 0.0
    assert report.low_states == 20


def test_increasing_net_is_perfect_without_contact():
    assert precision(constant_net(1), no_contact_dataset(), CANONICAL_CLASSES, BAND).precision == 1.0


def test_random_baseline_is_one_third():
    d = synthetic_dataset(60, seed=3)
    assert random_baseline_precision(d, CANONICAL_CLASSES, BAND) == pytest.approx(1 / 3)


def test_oracle_actions_score_perfectly():
    d = synthetic_dataset(80, seed=4)
    crs = state_contact_rates(d)
    actions = [oracle_action(cr, BAND, CANONICAL_CLASSES) for cr in crs]
    assert score_actions(actions, crs, CANONICAL_CLASSES, BAND).precision == 1.0


def test_oracle_prefers_actions_without_rotation():
    assert oracle_action(5.0, BAND, CANONICAL_CLASSES) == 1
    assert oracle_action(30.0, BAND, CANONICAL_CLASSES) == 4
    assert oracle_action(80.0, BAND, CANONICAL_CLASSES) == 7


def test_precision_invariant_under_positive_affine_head():
    d = synthetic_dataset(40, seed=5)
    net = build(tiny_arch(), seed=6)
    before = precision(net, d, CANONICAL_CLASSES, BAND).precision

    head = net.parametric_layers()[-1]
    head.params["W"] *= 3.0
    head.params["b"] *= 3.0
    head.params["b"] += 2.5
    assert precision(net, d, CANONICAL_CLASSES, BAND).precision == before


def test_precision_requires_states_and_background():
    with pytest.raises(EvaluationError):
        precision(constant_net(4), in_band_dataset().with_records(in_band_dataset().records[:0]), CANONICAL_CLASSES)

    d = in_band_dataset()
    d.background = None
    with pytest.raises(EvaluationError):
        precision(constant_net(4), d, CANONICAL_CLASSES)


# ============================================================================
# Curva de aprendizaje y distribución de acciones
# ============================================================================

def test_learning_curve_is_ordered_by_step():
    d = synthetic_dataset(40, seed=7)
    cfg = TrainConfig(train_steps=12, units_per_step=2, sync_interval=4, checkpoint_interval=3, lr=1e-3)
    result = train(d, cfg, arch=tiny_arch())

    shuffled = list(reversed(result.checkpoints))
    curve = learning_curve(shuffled, d, CANONICAL_CLASSES, BAND)

    assert list(curve.columns) == CURVE_COLUMNS
    assert curve["step"].tolist() == [3, 6, 9, 12]
    assert curve["checkpoint_id"].tolist() == [1, 2, 3, 4]
    assert curve["precision"].between(0, 1).all()


def test_learning_curve_without_checkpoints():
    with pytest.raises(EvaluationError):
        learning_curve([], in_band_dataset(), CANONICAL_CLASSES)


def test_action_distribution_counts():
    d = synthetic_dataset(6, actions=[0, 0, 4, 4, 4, 8])
    df = action_distribution(d)
    assert df["count"].tolist() == [2, 0, 0, 0, 3, 0, 0, 0, 1]
    assert df["frequency"].sum() == pytest.approx(1.0)
    assert df.loc[4, "frequency"] == pytest.approx(0.5)


def test_action_distribution_of_empty_dataset():
    d = synthetic_dataset(1)
    with pytest.raises(EvaluationError):
        action_distribution(d.with_records(d.records[:0]))


# ============================================================================
# Rollouts
# ============================================================================

def test_oracle_rollout_stays_in_band_on_flat_surface():
    env = make_env(flat_env_config())
    report = rollout(oracle_policy(CANONICAL_CLASSES, BAND), env, steps=80, drift=5e-5, warmup=20)
    assert report.in_band_fraction >= 0.9
    assert len(report.contact_trace) == 80
    assert report.lost_contact == 0


def test_null_net_rollout_holds_pose_on_flat_surface():
    env = make_env(flat_env_config())
    report = rollout(constant_net(4), env, steps=30, drift=0.0, warmup=10)
    assert set(report.actions) == {4}
    assert report.in_band_fraction == 1.0


def test_rollout_needs_more_steps_than_warmup():
    env = make_env(flat_env_config())
    with pytest.raises(EvaluationError):
        rollout(constant_net(4), env, steps=50, drift=0.0, warmup=50)


def test_rollout_dumps_frames(tmp_path):
    env = make_env(flat_env_config())
    rollout(constant_net(4), env, steps=25, drift=0.0, warmup=5, frame_dir=tmp_path, frame_every=10)
    assert sorted(p.name for p in tmp_path.glob("*.pgm")) == ["frame_00000.pgm", "frame_00010.pgm", "frame_00020.pgm"]


def test_drift_sweep_reports_in_drift_order():
    reports, monotone = drift_sweep(
        oracle_policy(CANONICAL_CLASSES, BAND), flat_env_config(), [1e-4, 0.0], steps=30, warmup=10
    )
    assert [r.drift for r in reports] == [0.0, 1e-4]
    assert monotone


def test_rollout_frames():
    env = make_env(flat_env_config())
    report = rollout(constant_net(4), env, steps=15, drift=0.0, warmup=5)

    trace = rollout_trace_frame(report, BAND)
    assert list(trace.columns) == ["step", "action", "contact_rate", "in_band"]
    assert trace["step"].tolist() == list(range(1, 16))

    summary = rollout_summary_frame([report])
    assert isinstance(summary, pd.DataFrame)
    assert summary.loc[0, "steps"] == 15
    assert "contact_trace" not in summary.columns


def test_contact_rate_histogram_band_bin_is_closed():
    """Un estado con ContactRate exactamente en cr_max cae en el bin de la banda."""
    crs = [0.0, 10.0, 20.0, 40.0, 40.5, 100.0, 300.0, 1000.0]
    df = contact_rate_histogram(crs, ContactBand())
    assert dict(zip(df["bin"], df["count"])) == {
        "0": 1,
        "(0, 20)": 1,
        "[20, 40]": 2,
        "(40, 100)": 1,
        "[100, 300)": 1,
        "[300, 1000]": 2,
    }


def test_contact_rate_histogram_custom_band():
    df = contact_rate_histogram([150.0, 200.0, 200.1], ContactBand(cr_min=150, cr_max=200))
    assert df["bin"].tolist() == ["0", "(0, 150)", "[150, 200]", "(200, 300)", "[300, 1000]"]
    assert df["count"].tolist() == [0, 0, 2, 1, 0]
