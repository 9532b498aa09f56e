"""
Shaped rewards
==============

The step reward mixes a quantile of per-beam safety scores, a speed-tracking
term along the goal direction, and corridor penalties on height and tilt.
"""
import numpy as np

from asyncnav.reward import (Status, attitude_penalty, height_penalty, static_safety, total_reward,
                             velocity_reward)
from asyncnav.world import quat_from_euler

# safety: the 10% quantile of log(tanh(k (d/L - c)) + 1) over the beams;
# with 36 beams that is the 4th worst, so one close beam alone does not move it
for d in ([5.0] * 36, [2.0] * 36, [0.75] + [5.0] * 35, [0.3] * 4 + [5.0] * 32):
    print(f"nearest {min(d):4.2f} m  ->  r_static = {static_safety(d):+.4f}")

# velocity: reward as a function of speed along the goal direction, v_des = 1.5
g = np.array([1.0, 0.0, 0.0])
speeds = np.arange(0.0, 4.0, 1e-3)
r = np.array([velocity_reward(s * g, g, 1.5) for s in speeds])
print(f"argmax speed {speeds[r.argmax()]:.3f} m/s (v_des 1.5); the progress term pulls it above v_des")
shaping = r - speeds
print(f"without the progress term the peak is at {speeds[shaping.argmax()]:.3f} m/s")

# above v_des ~ 2 the best speed leaves the tolerance band altogether
r4 = np.array([velocity_reward(s * g, g, 4.0) for s in np.arange(0, 10, 1e-3)])
print(f"v_des 4.0: argmax {np.arange(0, 10, 1e-3)[r4.argmax()]:.3f} m/s, band edge {1.4 * 4:.1f}")

# corridor penalties
print("height 3.0 m:", height_penalty(3.0), " tilt 0.8 rad:", round(attitude_penalty(quat_from_euler(0, 0.8, 0)), 6))

rb = total_reward(static_safety([2.0] * 36), velocity_reward(1.5 * g, g, 1.5), 0.0, 0.0, Status.REACHED_GOAL)
print(rb)
