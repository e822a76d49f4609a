"""Pan rotations about gravity and their single parameter ``s``.

Both wearers' VIO frames agree on gravity, so the frames differ by a pan
about the gravity axis plus a translation. The pan is encoded by one scalar
``s`` with ``theta = 2 atan2(1, s)``.
"""
# %%
import math

import numpy as np

from egoalign.geom import GRAVITY, rotation_about, rotation_from_s, s_from_angle, s_from_rotation

# %% s = 0 is a half turn, s = 1 a quarter turn
print(np.round(rotation_from_s(0.0), 12))
print(np.round(rotation_from_s(1.0) @ [1.0, 0.0, 0.0], 12))

# %% the parametrization agrees with the axis-angle form for any pan
for deg in (10.0, 137.0, 300.0):
    R = rotation_from_s(s_from_angle(math.radians(deg)))
    print(deg, np.abs(R - rotation_about(GRAVITY, math.radians(deg))).max())

# %% and inverts back to s; a zero pan (s infinite) is the critical case
print(s_from_rotation(rotation_from_s(3.7)))
