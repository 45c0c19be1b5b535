"""The cyclic group C_N acting on images, feature fields, and kernels.

Run:  python3 demos/02_cyclic_groups.py
"""
import numpy as np

from rotmatch.groups import (CyclicGroup, FieldType, act_on_field,
                             regular_permutation, rotate_image, rotate_kernel)

C4 = CyclicGroup(4)
C8 = CyclicGroup(8)

# --- exact grid rotations ----------------------------------------------------
img = np.array([[[1.0, 2.0], [3.0, 4.0]]])
print("quarter turn of [[1,2],[3,4]]:")
print(rotate_image(img, C4.element(1), mode="exact").data[0])

# --- the regular representation ----------------------------------------------
# element k shifts channel j to channel (j+k) mod N; as an index table:
v = np.array(["a", "b", "c", "d"])
print("\nregular rep of C4, k=1 applied to [a,b,c,d]:",
      v[regular_permutation(4, 1)].tolist())
print("homomorphism: shift1 twice equals shift2:",
      np.array_equal(v[regular_permutation(4, 1)][regular_permutation(4, 1)],
                     v[regular_permutation(4, 2)]))

# --- acting on a feature field -----------------------------------------------
# a field with one regular C4 entry: rotating the input moves both pixels
# (spatially) and channels (cyclically).
ft = FieldType.regular(C4, 1)
rng = np.random.default_rng(0)
field = rng.normal(size=(4, 6, 6)).astype(np.float32)
acted = act_on_field(C4.element(1), field, ft, mode="exact")
back = act_on_field(C4.element(3), acted, ft, mode="exact")
print("\nact by k then by N-k restores the field exactly:",
      np.array_equal(back.data, field))

# --- kernel rotation ----------------------------------------------------------
k = np.arange(1.0, 10.0).reshape(1, 3, 3)
print("\n3x3 kernel:")
print(k[0])
print("rotated one quarter turn (pure grid permutation):")
print(rotate_kernel(k, C4.element(1)).data[0])
r45 = rotate_kernel(k, C8.element(1)).data[0]
print("rotated 45 degrees (operator-matched resampling; center is fixed):")
print(np.round(r45, 3))
print("center coefficient unchanged:", r45[1, 1] == k[0, 1, 1])
