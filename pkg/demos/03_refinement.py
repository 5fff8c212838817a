"""Particle refinement on a fixed observation.

Seeds the filter from one depth image of the bundled single-box scene and
runs transition/project/evaluate/resample steps against that same image,
printing the quality trajectory. This is exactly what the open_loop episode
mode does before it commits to a target.
"""

import argparse
from importlib.resources import files

import numpy as np

from grasppf.camera import render
from grasppf.filter import FilterParams, initial_distribution, select_target, step
from grasppf.geom import Pose3
from grasppf.gripper_quality import SceneOracle, grasp_pose
from grasppf.reach import DEFAULT_REACH
from grasppf.scene import load_scene

R_DOWN = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=15)
    ap.add_argument("--particles", type=int, default=256)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    scene = load_scene(files("grasppf").joinpath("scenes/single_box.scene").read_bytes())
    oracle = SceneOracle(scene)
    obs = render(scene, Pose3(R_DOWN, np.array([0.0, 0.0, 0.55])))
    params = FilterParams(m=args.particles)
    rng = np.random.default_rng(args.seed)

    belief = initial_distribution(obs, oracle, params, DEFAULT_REACH, rng)
    print(f"{'step':>4} {'mean_q':>7} {'best_q':>7} {'spread_mm':>10}")
    for t in range(args.steps + 1):
        spread = np.linalg.norm(belief.p - belief.p.mean(axis=0), axis=1).mean()
        print(f"{t:4d} {belief.quality.mean():7.3f} {belief.quality.max():7.3f} "
              f"{spread * 1e3:10.1f}")
        if t < args.steps:
            belief = step(belief, obs, oracle, DEFAULT_REACH, params, rng)

    target = select_target(belief)
    pose = grasp_pose(target)
    width = ("narrow", "wide")[target.w_bin]
    print(f"\nselected grasp: origin {np.round(pose.t, 4).tolist()}, "
          f"{width} bin, quality {belief.quality.max():.3f}")


if __name__ == "__main__":
    main()
