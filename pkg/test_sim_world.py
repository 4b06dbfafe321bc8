"""
Pruebas del mundo simulado: cinemática, acciones, superficies, renderizado
táctil y el entorno SurfaceEnv.
"""

import math

import numpy as np
import pytest

from app.rl_core import classify_actions
from app.schemas import ArmGeometry, ContactBand, SurfaceSpec
from app.sim_world import (
    ACTION_TABLE,
    NULL_ACTION,
    JointConfig,
    SimulationError,
    SurfaceEnv,
    apply_action,
    forward_kinematics,
    make_env,
    surface_height,
)
from tests.builders import CANONICAL_CLASSES, flat_env_config, sine_env_config

DELTA = 2.5e-4


@pytest.fixture(scope="module")
def flat_env():
    return make_env(flat_env_config())


# ============================================================================
# Cinemática y acciones
# ============================================================================

def test_action_table_layout():
    assert ACTION_TABLE[0] == (-1, -1)
    assert ACTION_TABLE[NULL_ACTION] == (0, 0)
    assert ACTION_TABLE[8] == (1, 1)
    assert ACTION_TABLE[5] == (0, 1)
    assert len(set(ACTION_TABLE)) == 9


def test_forward_kinematics_straight_arm():
    pose = forward_kinematics(JointConfig(0.0, 0.0), ArmGeometry(base_z=0.0))
    assert pose.x == pytest.approx(0.4)
    assert pose.z == pytest.approx(0.0)
    assert pose.orientation == 0.0


def test_forward_kinematics_home_points_down():
    pose = forward_kinematics(JointConfig(0.0, -math.pi / 2), ArmGeometry())
    assert pose.x == pytest.approx(0.2)
    assert pose.z == pytest.approx(0.0, abs=1e-12)
    assert pose.orientation == pytest.approx(-math.pi / 2)


def test_forward_kinematics_elbow_up():
    pose = forward_kinematics(JointConfig(math.pi / 2, 0.0), ArmGeometry(base_z=0.0))
    assert pose.x == pytest.approx(0.0, abs=1e-12)
    assert pose.z == pytest.approx(0.4)


@pytest.mark.parametrize("theta3, theta4", [(0.3, -0.1), (-1.2, 0.7), (1.9, -2.0)])
def test_forward_kinematics_matches_trigonometry(theta3, theta4):
    geom = ArmGeometry()
    pose = forward_kinematics(JointConfig(theta3, theta4), geom)

    x = geom.base_x + 0.2 * math.cos(theta3) + 0.2 * math.cos(theta3 + theta4)
    z = geom.base_z + 0.2 * math.sin(theta3) + 0.2 * math.sin(theta3 + theta4)
    assert pose.x == pytest.approx(x, abs=1e-15)
    assert pose.z == pytest.approx(z, abs=1e-15)
    assert pose.orientation == pytest.approx(theta3 + theta4)


def test_tip_never_beyond_arm_reach():
    """|punta − base| ≤ L1 + L2 para configuraciones aleatorias dentro de los límites."""
    geom = ArmGeometry(link1=0.25, link2=0.15, base_x=0.1, base_z=0.3)
    rng = np.random.default_rng(21)
    for theta3, theta4 in rng.uniform(-2.0, 2.0, size=(500, 2)):
        pose = forward_kinematics(JointConfig(theta3, theta4), geom)
        reach = math.hypot(pose.x - geom.base_x, pose.z - geom.base_z)
        assert reach <= geom.link1 + geom.link2 + 1e-12


def test_apply_action_moves_both_joints():
    moved, clamped = apply_action(JointConfig(0.0, 0.0), 0, DELTA)
    assert moved.theta3 == pytest.approx(-DELTA)
    assert moved.theta4 == pytest.approx(-DELTA)
    assert (moved.vel3, moved.vel4) == (-DELTA, -DELTA)
    assert clamped == (False, False)


def test_apply_null_action_keeps_positions_and_zeroes_velocity():
    moved, _ = apply_action(JointConfig(0.3, -1.2, DELTA, -DELTA), NULL_ACTION, DELTA)
    assert (moved.theta3, moved.theta4) == (0.3, -1.2)
    assert (moved.vel3, moved.vel4) == (0.0, 0.0)


def test_apply_action_clamps_at_limit():
    moved, clamped = apply_action(JointConfig(2.0, 0.0), 6, DELTA, joint_limit=2.0)
    assert moved.theta3 == 2.0
    assert clamped == (True, False)
    assert moved.vel3 == DELTA


@pytest.mark.parametrize("action", [-1, 9])
def test_apply_action_rejects_unknown_action(action):
    with pytest.raises(ValueError):
        apply_action(JointConfig(0.0, 0.0), action, DELTA)


def test_apply_action_rejects_non_positive_delta():
    with pytest.raises(ValueError):
        apply_action(JointConfig(0.0, 0.0), 1, 0.0)


def test_joint_config_array_conversion():
    joints = JointConfig(0.1, -0.2, 0.3, -0.4)
    assert JointConfig.from_array(joints.as_array()) == joints


# ============================================================================
# Superficies
# ============================================================================

def test_surface_height_flat_slope():
    surface = SurfaceSpec(kind="flat", slope=0.5, height=0.01)
    assert surface_height(surface, 0.2) == pytest.approx(0.11)


def test_surface_height_sinusoid_peak():
    surface = SurfaceSpec(kind="sinusoidal", amplitude=0.01, wavelength=0.3)
    assert surface_height(surface, 0.075) == pytest.approx(0.01)
    assert surface_height(surface, 0.0) == pytest.approx(0.0)


def test_surface_height_piecewise_interpolates_and_holds_edges():
    surface = SurfaceSpec(kind="piecewise", table=[(0.0, 0.0), (1.0, 0.1)])
    assert surface_height(surface, 0.5) == pytest.approx(0.05)
    assert surface_height(surface, 2.0) == pytest.approx(0.1)
    assert surface_height(surface, -1.0) == pytest.approx(0.0)


def test_surface_height_accepts_arrays_and_offset():
    surface = SurfaceSpec(kind="flat", slope=1.0, lateral_offset=0.1)
    heights = surface_height(surface, np.array([0.1, 0.2]))
    np.testing.assert_allclose(heights, [0.0, 0.1])


def test_piecewise_requires_sorted_table():
    with pytest.raises(ValueError):
        SurfaceSpec(kind="piecewise", table=[(1.0, 0.0), (0.0, 1.0)])


# ============================================================================
# Renderizado y ContactRate
# ============================================================================

def test_far_above_surface_has_no_contact(flat_env):
    joints = flat_env.pose_for_depth(-0.01)
    assert flat_env.contact_rate_at(joints) == 0.0


def test_deep_press_saturates_contact(flat_env):
    joints = flat_env.pose_for_depth(0.003)
    assert flat_env.contact_rate_at(joints) == 1000.0


@pytest.mark.parametrize("noise_seed", [0, 1, 2])
def test_contact_rate_monotone_in_depth(flat_env, noise_seed):
    depths = np.linspace(0.0, 8e-4, 20)
    rates = [flat_env.contact_rate_at(flat_env.pose_for_depth(d), noise_seed) for d in depths]
    assert all(b >= a for a, b in zip(rates, rates[1:]))
    assert rates[0] == 0.0
    assert rates[-1] > 100.0


def test_edge_falloff_never_raises_contact_rate():
    """El borde menos sensible solo puede perder píxeles de contacto."""
    full = make_env(flat_env_config())
    weak_edges = make_env(flat_env_config(edge_falloff=0.9))
    np.testing.assert_array_equal(weak_edges.background, full.background)

    depths = np.linspace(0.0, 2e-3, 9)
    pairs = [
        (full.contact_rate_at(full.pose_for_depth(d), 4),
         weak_edges.contact_rate_at(weak_edges.pose_for_depth(d), 4))
        for d in depths
    ]
    assert all(weak <= full for full, weak in pairs)
    assert any(weak < full for full, weak in pairs)


def test_edge_falloff_saturated_patch_matches():
    full = make_env(flat_env_config())
    weak_edges = make_env(flat_env_config(edge_falloff=0.5))
    assert weak_edges.contact_rate_at(weak_edges.pose_for_depth(0.003), 4) == 1000.0
    assert full.contact_rate_at(full.pose_for_depth(0.003), 4) == 1000.0


def test_background_is_captured_without_contact():
    env = SurfaceEnv(flat_env_config())
    _, in_contact = env.read_noncontact_frame()
    assert not in_contact
    background = env.capture_background()
    assert background.shape == (48, 64)
    assert abs(float(background.mean()) - 90.0) < 1.0


def test_step_without_background_fails():
    env = SurfaceEnv(flat_env_config())
    env.reset(depth=0.0)
    with pytest.raises(SimulationError):
        env.step(NULL_ACTION)


# ============================================================================
# Entorno
# ============================================================================

def test_pose_for_depth_hits_requested_depth(flat_env):
    for depth in (-1e-3, 0.0, 3e-4):
        pose = forward_kinematics(flat_env.pose_for_depth(depth), flat_env.geometry)
        assert pose.z == pytest.approx(-depth, abs=1e-9)


def test_pose_for_depth_out_of_reach_fails(flat_env):
    with pytest.raises(SimulationError):
        flat_env.pose_for_depth(1.0)


def test_find_band_pose_lands_near_target(flat_env):
    for target in (25.0, 30.0, 35.0):
        joints = flat_env.find_band_pose(target)
        assert abs(flat_env.contact_rate_at(joints) - target) < 5.0


@pytest.mark.parametrize("target", [0.0, 1000.0, -5.0])
def test_find_band_pose_rejects_targets_outside_range(flat_env, target):
    with pytest.raises(ValueError):
        flat_env.find_band_pose(target)


def test_same_seed_same_trajectory():
    frames = []
    for _ in range(2):
        env = make_env(sine_env_config())
        env.reset()
        images = [env.step(a)[0].image for a in (0, 0, 4, 7, 2)]
        frames.append(images)
    for a, b in zip(*frames):
        np.testing.assert_array_equal(a, b)


def test_different_seed_different_noise():
    a = make_env(flat_env_config(seed=1))
    b = make_env(flat_env_config(seed=2))
    a.reset(depth=3e-4)
    b.reset(depth=3e-4)
    assert not np.array_equal(a.observe().image, b.observe().image)


def test_null_then_action_equals_action():
    env = make_env(flat_env_config())
    env.reset(depth=3e-4)
    env.step(NULL_ACTION)
    after_null, _ = env.step(1)

    ref = make_env(flat_env_config())
    ref.reset(depth=3e-4)
    direct, _ = ref.step(1)

    assert (after_null.joints.theta3, after_null.joints.theta4) == pytest.approx(
        (direct.joints.theta3, direct.joints.theta4)
    )


def test_step_reports_contact_rate_of_next_state():
    env = make_env(flat_env_config())
    env.reset(depth=3e-4)
    state, record = env.step(0)
    assert record.action == 0
    assert record.contact_rate == env.contact_rate_of(state.image)
    assert state.joints.vel3 == -DELTA


def test_pressing_in_raises_contact_rate():
    env = make_env(flat_env_config())
    env.reset(depth=3e-4)
    _, first = env.step(NULL_ACTION)
    for _ in range(3):
        _, last = env.step(1)
    assert last.contact_rate > first.contact_rate


def test_shift_surface_accumulates_offset():
    env = SurfaceEnv(sine_env_config())
    env.shift_surface(0.01)
    env.shift_surface(0.02)
    assert env.surface.lateral_offset == pytest.approx(0.03)


def test_reset_stays_near_contact():
    env = make_env(sine_env_config())
    for _ in range(5):
        state = env.reset()
        pose = env.pose
        depth = surface_height(env.surface, pose.x) - pose.z
        assert -3e-4 - 1e-9 <= depth <= 3e-4 + 1e-9
        assert state.image.shape == (48, 64)


def test_flat_surface_classification_matches_action_table(flat_env):
    classes = classify_actions(flat_env, 5.0, ContactBand())
    assert classes == CANONICAL_CLASSES
