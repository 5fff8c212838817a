"""Grasp quality tests: force closure, collision, channels, and maps.

The load-bearing oracle is the tilted-box ladder: flat faces give exact
contact normals, so tilting the closing axis by theta makes both cone
angles exactly theta and the level thresholds land at arctan(mu). The
mesh-based brute force in oracles.py covers curved shapes and the discrete
decision tree on top.
"""

import math

import numpy as np
import pytest

from oracles import closure_oracle, sampled_cone_identity, world_arrays

from grasppf.camera import back_project, render
from grasppf.geom import EulerZXY, Pose3, rot_y, rot_z
from grasppf.gripper_quality import (
    DEFAULT_GRIPPER,
    MU_LEVELS,
    FrameMismatch,
    GraspConfig,
    GripperModel,
    QualityValue,
    SceneOracle,
    collision_free,
    combine_channels,
    continuous_quality,
    directional_quality_maps,
    evaluate_grasp,
    evaluate_grasp_batch,
    force_closure_level,
    grasp_pose,
    grasp_rotation,
    map_quality,
    success_probability,
)
from grasppf.scene import Box, Cylinder, Scene, SceneObject, Sphere

R_DOWN = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def obj(oid, shape, xyz, r=None, mu=0.8):
    return SceneObject(oid, shape,
                       Pose3(np.eye(3) if r is None else r,
                             np.asarray(xyz, float)), mu)


def tall_box_scene():
    # 3 cm across the closing axis, generous in the other two
    return Scene((obj(0, Box(0.03, 0.2, 0.2), (0, 0, 0.1)),))


# ---------------------------------------------------------------------------
# force closure: analytic ladder on flat faces


LADDER = [
    (0.0, 3),
    (math.radians(5.0), 3),   # arctan(0.2) = 11.31 deg
    (math.radians(16.0), 2),  # arctan(0.4) = 21.80 deg
    (math.radians(30.0), 1),  # arctan(0.8) = 38.66 deg
    (math.radians(45.0), 0),
]


@pytest.mark.parametrize("theta,expected", LADDER)
def test_tilted_box_levels_follow_friction_cones(theta, expected):
    """Tilting the grasp about y makes angle(contact normal, closing axis)
    exactly theta on both faces; the level steps down at each arctan(mu)."""
    scene = tall_box_scene()
    pose = Pose3(rot_y(theta), np.array([0.0, 0.0, 0.1]))
    assert force_closure_level(scene, pose, 1) == expected


def test_level_thresholds_bracket_the_cone_edges():
    scene = tall_box_scene()
    for mu, below in zip(MU_LEVELS, (1, 2, 3)):
        cone = math.atan(mu)
        hi = Pose3(rot_y(cone - 1e-3), np.array([0.0, 0.0, 0.1]))
        lo = Pose3(rot_y(cone + 1e-3), np.array([0.0, 0.0, 0.1]))
        assert force_closure_level(scene, hi, 1) == below
        assert force_closure_level(scene, lo, 1) == below - 1


def test_perpendicular_grasp_fits_narrow_bin_too():
    scene = tall_box_scene()
    pose = Pose3(np.eye(3), np.array([0.0, 0.0, 0.1]))
    assert force_closure_level(scene, pose, 0) == 3
    assert force_closure_level(scene, pose, 1) == 3


def test_grasp_on_empty_air_scores_zero():
    scene = tall_box_scene()
    pose = Pose3(np.eye(3), np.array([0.5, 0.5, 0.3]))
    assert force_closure_level(scene, pose, 1) == 0


def test_contacts_on_different_objects_score_zero():
    # two slabs straddling the closing line; each pad reaches its own slab
    scene = Scene((
        obj(0, Box(0.01, 0.05, 0.04), (-0.0125, 0.0, 0.02)),
        obj(1, Box(0.01, 0.05, 0.04), (0.0125, 0.0, 0.02)),
    ))
    pose = Pose3(np.eye(3), np.array([0.0, 0.0, 0.02]))
    assert force_closure_level(scene, pose, 0) == 0
    # sanity: either slab alone grips fine at the narrow width
    alone = Scene((obj(0, Box(0.01, 0.05, 0.04), (-0.0125, 0.0, 0.02)),))
    shifted = Pose3(np.eye(3), np.array([-0.0125, 0.0, 0.02]))
    assert force_closure_level(alone, shifted, 0) == 3


def test_table_contact_is_not_a_grasp():
    # vertical closing axis over bare table: the upper pad sweeps into it
    scene = Scene((obj(0, Box(0.02, 0.02, 0.02), (0.4, 0.4, 0.01)),))
    pose = Pose3(rot_y(math.pi / 2), np.array([0.0, 0.0, 0.01]))
    assert force_closure_level(scene, pose, 0) == 0


def test_sphere_and_cylinder_centered_grasps_close():
    scene = Scene((
        obj(0, Sphere(0.012), (0.0, 0.0, 0.012)),
        obj(1, Cylinder(0.012, 0.05), (0.2, 0.0, 0.025)),
    ))
    # pad ray rows sit at z = -0.004, -0.012, ... in the grasp frame, so a
    # grasp 4 mm above the sphere centre puts one closing ray exactly
    # through it: contact normals antiparallel to the closing line
    sphere_pose = Pose3(np.eye(3), np.array([0.0, 0.0, 0.016]))
    assert force_closure_level(scene, sphere_pose, 1, resolution=64) == 3
    # vertical cylinder wall: radial normal regardless of ray height
    cyl_pose = Pose3(np.eye(3), np.array([0.2, 0.0, 0.025]))
    assert force_closure_level(scene, cyl_pose, 1, resolution=64) == 3


@pytest.mark.parametrize("radius,delta,expected", [
    # the winning closing ray passes `delta` under the sphere centre, so the
    # contact normal is arcsin(delta / radius) off the closing line
    (0.012, 0.0034, 2),  # 16.5 deg: inside arctan(0.4), outside arctan(0.2)
    (0.005, 0.0028, 1),  # 34.1 deg: inside arctan(0.8) only
    (0.005, 0.0040, 0),  # 53.1 deg: outside every cone
])
def test_off_center_sphere_grasp_steps_down_the_ladder(radius, delta, expected):
    scene = Scene((obj(0, Sphere(radius), (0.0, 0.0, radius)),))
    # nearest pad ray sits 4 mm below the grasp origin
    pose = Pose3(np.eye(3), np.array([0.0, 0.0, radius + 0.004 + delta]))
    assert force_closure_level(scene, pose, 1, resolution=128) == expected


def test_cone_cosine_identity_versus_sampling():
    for mu in MU_LEVELS:
        checked, agree = sampled_cone_identity(mu, n_dirs=10_000, seed=3)
        assert checked > 9_000
        assert agree == checked


def test_closure_agrees_with_mesh_brute_force_on_seeded_grasps():
    """Smaller-N version of the acceptance sweep: random poses around a
    box/sphere/cylinder scene, kernel level vs oracles.closure_oracle."""
    scene = Scene((
        obj(0, Box(0.03, 0.06, 0.04), (0.0, 0.0, 0.02)),
        obj(1, Sphere(0.02), (0.12, 0.0, 0.02)),
        obj(2, Cylinder(0.015, 0.06), (-0.12, 0.05, 0.03), rot_z(0.4)),
    ))
    world = world_arrays(scene, 32)
    rng = np.random.default_rng(11)
    centers = np.array([[0, 0, 0.02], [0.12, 0, 0.02], [-0.12, 0.05, 0.03]])
    checked = 0
    for n in range(60):
        c = centers[n % 3] + rng.normal(0.0, 0.01, 3)
        c[2] = abs(c[2]) + 0.005
        r = rot_z(rng.uniform(-np.pi, np.pi)) @ rot_y(rng.uniform(-0.6, 0.6))
        w_bin = int(rng.integers(0, 2))
        width = DEFAULT_GRIPPER.width_bins[w_bin]
        expected, margin = closure_oracle(world, r, c, DEFAULT_GRIPPER, width)
        if margin <= 1e-3:
            continue  # decision-edge case: either answer is legitimate
        got = force_closure_level(scene, Pose3(r, c), w_bin)
        assert got == expected, (n, c, w_bin)
        checked += 1
    assert checked >= 45


# ---------------------------------------------------------------------------
# collision


def test_gripper_high_above_empty_table_is_free():
    scene = Scene(())
    pose = Pose3(np.eye(3), np.array([0.0, 0.0, 1.0]))
    assert collision_free(scene, pose, 0) is True
    assert collision_free(scene, pose, 1) is True


def test_palm_below_table_collides():
    scene = Scene(())
    # fingers span z in [origin-0.04, origin]; palm below that
    pose = Pose3(np.eye(3), np.array([0.0, 0.0, 0.05]))
    assert collision_free(scene, pose, 0) is False


def test_wall_one_millimeter_from_finger_face():
    """Outer finger face sits at x = w/2 + thickness; a wall 1 mm beyond it
    clears, a wall 1 mm inside it collides (analytic box-box separation)."""
    outer = 0.04 / 2 + 0.01
    pose = Pose3(np.eye(3), np.array([0.0, 0.0, 0.1]))
    for gap, expected in ((0.001, True), (-0.001, False)):
        wall_face = outer + gap
        scene = Scene((obj(0, Box(0.01, 0.05, 0.05),
                           (wall_face + 0.005, 0.0, 0.1)),))
        assert collision_free(scene, pose, 0) is expected, gap


def test_narrow_bin_blocked_while_wide_clears():
    # object wider than the narrow opening: narrow fingers overlap it; the
    # grasp descends from above so the palm stays clear of the table
    scene = Scene((obj(0, Box(0.05, 0.05, 0.04), (0.0, 0.0, 0.02)),))
    pose = Pose3(R_DOWN, np.array([0.0, 0.0, 0.02]))
    assert collision_free(scene, pose, 0) is False
    assert collision_free(scene, pose, 1) is True


# ---------------------------------------------------------------------------
# channel arithmetic


def test_success_probability_identities():
    assert success_probability(1.0, 1.0, 1.0) == 1.0
    for x in (0.0, 0.3, 1.0):
        assert success_probability(x, 0.0, 1.0) == 0.0


def test_success_probability_matches_chain_rule_enumeration():
    for a in (0.0, 1.0):
        for b in (0.0, 1.0):
            for c in (0.0, 1.0):
                assert success_probability(a, b, c) == a * b * c


def test_success_probability_rejects_out_of_range():
    with pytest.raises(ValueError):
        success_probability(1.2, 0.5, 0.5)
    with pytest.raises(ValueError):
        success_probability(0.5, -0.1, 0.5)


def test_combine_channels_is_the_mean_times_gates():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q1, q2, q3, m = rng.uniform(0, 1, 4)
        cf = (float(rng.integers(0, 2)), float(rng.integers(0, 2)))
        value = combine_channels(q1, q2, q3, cf, m)
        assert isinstance(value, QualityValue)
        mean = (q1 + q2 + q3) / 3.0
        assert value.narrow == mean * cf[0] * m
        assert value.wide == mean * cf[1] * m


def test_grasp_pose_offsets_along_approach_axis():
    rng = np.random.default_rng(5)
    for _ in range(20):
        r = rot_z(rng.uniform(-3, 3)) @ rot_y(rng.uniform(-1, 1))
        p = rng.normal(0, 0.2, 3)
        d = rng.uniform(0.005, 0.035)
        g = GraspConfig(p, r, d, 0)
        pose = grasp_pose(g)
        np.testing.assert_allclose(pose.t - p, d * r[:, 2], atol=1e-12)
        np.testing.assert_array_equal(pose.r, r)
    zero = grasp_pose(GraspConfig(p, r, 0.0 + 0.005, 1))
    np.testing.assert_allclose(zero.t, p + 0.005 * r[:, 2], atol=1e-15)


def test_grasp_config_validation():
    with pytest.raises(ValueError):
        GraspConfig(np.zeros(3), np.eye(3), 0.02, 2)
    with pytest.raises(ValueError):
        GraspConfig(np.array([np.nan, 0, 0]), np.eye(3), 0.02, 0)
    with pytest.raises(ValueError):
        GraspConfig(np.zeros(3), np.eye(3) * 2.0, 0.02, 0)


def test_gripper_model_validation():
    with pytest.raises(ValueError):
        GripperModel(width_bins=(0.08, 0.04))
    with pytest.raises(ValueError):
        GripperModel(depth_range=(0.03, 0.03))
    with pytest.raises(ValueError):
        GripperModel(pad_grid=3)


# ---------------------------------------------------------------------------
# directional maps


def clutter_obs(scene, height=0.55, noise=False):
    rng = np.random.default_rng(42) if noise else None
    return render(scene, Pose3(R_DOWN, np.array([0.0, 0.0, height])),
                  noise_sigma=0.001 if noise else 0.0, rng=rng)


def small_scene():
    return Scene((
        obj(0, Box(0.024, 0.06, 0.04), (0.0, 0.0, 0.02)),
        obj(1, Cylinder(0.015, 0.05), (0.09, -0.04, 0.025)),
    ))


def test_map_channels_are_nested_and_bounded():
    scene = small_scene()
    maps = directional_quality_maps(clutter_obs(scene), scene,
                                    EulerZXY(0.3, 0.0, 0.0), 0.02)
    for arr in (maps.q_level, maps.object_mask, maps.collision_free):
        assert arr.min() >= 0.0 and arr.max() <= 1.0
    # level channels are thresholds of one integer level: q1 >= q2 >= q3
    assert (maps.q_level[0] >= maps.q_level[1]).all()
    assert (maps.q_level[1] >= maps.q_level[2]).all()
    assert maps.q_level[0].sum() > 0  # the box is graspable somewhere


def test_object_mask_matches_rotated_ids():
    scene = small_scene()
    maps = directional_quality_maps(clutter_obs(scene), scene,
                                    EulerZXY(0.6, 0.1, -0.1), 0.015)
    np.testing.assert_array_equal(maps.object_mask > 0.5,
                                  maps.view.object_id_rot >= 0)


def test_frame_mismatch_is_refused():
    scene = small_scene()
    oracle = SceneOracle(scene, time_step=5)
    obs = clutter_obs(scene)  # time_step 0
    with pytest.raises(FrameMismatch):
        directional_quality_maps(obs, oracle, EulerZXY(0, 0, 0), 0.02)
    with pytest.raises(FrameMismatch):
        evaluate_grasp(oracle, obs,
                       GraspConfig(np.zeros(3), np.eye(3), 0.02, 0))


def test_map_value_equals_evaluate_grasp_exactly():
    """The rotation-trick pathway: reading the per-bin map at a rotated
    pixel must equal scoring the recovered grasp directly. Exact equality,
    not allclose: both sides run the same channel arithmetic."""
    scene = small_scene()
    obs = clutter_obs(scene)
    oracle = SceneOracle(scene)
    rng = np.random.default_rng(123)
    compared = 0
    while compared < 20:
        e = EulerZXY(rng.uniform(-np.pi, np.pi),
                     rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4))
        d = float(rng.uniform(0.005, 0.035))
        maps = directional_quality_maps(obs, oracle, e, d)
        q = map_quality(maps)
        candidates = np.argwhere((q.max(axis=0) > 0) & maps.view.valid)
        if len(candidates) == 0:
            continue
        i, j = candidates[rng.integers(0, len(candidates))]
        si, sj = maps.view.source_pixel(int(i), int(j))
        g = GraspConfig(back_project(obs, (si, sj)),
                        grasp_rotation(obs.cam_pose.rotation, e), d,
                        w_bin=0)
        value = evaluate_grasp(oracle, obs, g)
        assert value.narrow == q[0, i, j]
        assert value.wide == q[1, i, j]
        compared += 1


def test_evaluate_grasp_batch_matches_scalar_calls():
    scene = small_scene()
    obs = clutter_obs(scene)
    oracle = SceneOracle(scene)
    rng = np.random.default_rng(9)
    m = 40
    p = np.column_stack([rng.uniform(-0.05, 0.12, m),
                         rng.uniform(-0.08, 0.04, m),
                         rng.uniform(0.005, 0.05, m)])
    r = np.stack([rot_z(a) @ rot_y(b) for a, b in
                  zip(rng.uniform(-np.pi, np.pi, m),
                      rng.uniform(-0.5, 0.5, m))])
    d = rng.uniform(0.005, 0.035, m)
    quality, level, cf, on_obj = evaluate_grasp_batch(oracle, obs, p, r, d)
    assert quality.shape == (m, 2) and level.shape == (m,)
    for k in range(m):
        v = evaluate_grasp(oracle, obs, GraspConfig(p[k], r[k], float(d[k]), 0))
        assert quality[k, 0] == v.narrow
        assert quality[k, 1] == v.wide
    assert set(np.unique(on_obj)) <= {0.0, 1.0}
    assert (quality[on_obj == 0.0] == 0.0).all()


# ---------------------------------------------------------------------------
# continuous quality


def separable_blur_oracle(img, sigma):
    """Reflect-padded separable Gaussian, truncated at 3 sigma, normalized."""
    radius = int(3.0 * sigma + 0.5)
    x = np.arange(-radius, radius + 1, dtype=float)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    out = img
    for axis in (0, 1):
        moved = np.moveaxis(out, axis, 0)
        padded = np.pad(moved, [(radius, radius)] + [(0, 0)] * (moved.ndim - 1),
                        mode="reflect")
        acc = np.zeros_like(moved)
        for k, kv in enumerate(kernel):
            acc += kv * padded[k:k + moved.shape[0]]
        out = np.moveaxis(acc, 0, axis)
    return out


def test_zero_blur_is_identity():
    scene = small_scene()
    maps = directional_quality_maps(clutter_obs(scene), scene,
                                    EulerZXY(0, 0, 0), 0.02)
    np.testing.assert_array_equal(continuous_quality(maps, 0.0),
                                  np.clip(map_quality(maps), 0, 1))


def test_blur_matches_separable_convolution_oracle():
    scene = small_scene()
    maps = directional_quality_maps(clutter_obs(scene), scene,
                                    EulerZXY(0.4, 0.0, 0.0), 0.02)
    got = continuous_quality(maps, 1.5)
    raw = map_quality(maps)
    for w in range(2):
        expected = np.clip(separable_blur_oracle(raw[w], 1.5), 0, 1)
        np.testing.assert_allclose(got[w], expected, atol=1e-12)


def test_blur_preserves_total_mass_away_from_borders():
    scene = small_scene()
    maps = directional_quality_maps(clutter_obs(scene), scene,
                                    EulerZXY(0, 0, 0), 0.02)
    raw = map_quality(maps)
    blurred = continuous_quality(maps, 1.0)
    # quality lives well inside the frame, reflect padding moves no mass
    np.testing.assert_allclose(blurred.sum(), raw.sum(), rtol=1e-6)


def test_negative_blur_rejected():
    scene = small_scene()
    maps = directional_quality_maps(clutter_obs(scene), scene,
                                    EulerZXY(0, 0, 0), 0.02)
    with pytest.raises(ValueError):
        continuous_quality(maps, -0.5)
