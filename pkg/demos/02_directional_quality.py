"""Directional grasp-quality maps: the 6-channel labeling for one view.

For a handful of closing directions this renders one observation, computes
the per-pixel channels (3 nested friction levels, object mask, 2 per-width
collision channels), and prints coverage counts so you can see how the
graspable set shrinks as the friction requirement tightens and the azimuth
rotates off the object's narrow axis.
"""

import numpy as np

from grasppf.camera import render
from grasppf.geom import EulerZXY, Pose3, rot_z
from grasppf.gripper_quality import directional_quality_maps, map_quality
from grasppf.scene import Box, Scene, SceneObject

R_DOWN = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])

# one elongated box: graspable across its 3 cm axis, not across its 9 cm axis
scene = Scene((SceneObject(0, Box(0.03, 0.09, 0.05),
                           Pose3(np.eye(3), np.array([0.0, 0.0, 0.025])), 0.8),))
obs = render(scene, Pose3(R_DOWN, np.array([0.0, 0.0, 0.55])))

print(f"{'alpha':>8} {'mask':>6} {'free_n':>7} {'free_w':>7} "
      f"{'lvl1':>6} {'lvl2':>6} {'lvl3':>6} {'best_q':>7}")
for alpha in (0.0, np.pi / 6, np.pi / 3, np.pi / 2):
    maps = directional_quality_maps(obs, scene, EulerZXY(alpha, 0.0, 0.0), 0.02)
    q = map_quality(maps)  # (2, H, W): per-width combined quality
    mask = maps.object_mask > 0.5
    print(f"{alpha:8.3f} {mask.sum():6d} "
          f"{(maps.collision_free[0] > 0.5).sum():7d} "
          f"{(maps.collision_free[1] > 0.5).sum():7d} "
          f"{(maps.q_level[0] > 0.5).sum():6d} "
          f"{(maps.q_level[1] > 0.5).sum():6d} "
          f"{(maps.q_level[2] > 0.5).sum():6d} "
          f"{q.max():7.3f}")

print()
print("alpha=0 closes across the short axis: all three levels fire.")
print("alpha=pi/2 closes across the long axis: wider than both width bins,")
print("so quality drops to zero even though the mask is unchanged.")
