# %% [markdown]
# # Curvature as a dial
#
# One set of formulas covers the Poincare ball (`kappa < 0`), flat space
# and the projected sphere (`kappa > 0`). Turning `kappa` through zero
# changes distances smoothly.

# %%
import numpy as np

from kappagcn import distance, exp0, gyromidpoint, kappa_add, log0

x = np.array([0.3, -0.1])
y = np.array([-0.2, 0.4])

for k in (-1.0, -1e-6, 0.0, 1e-6, 1.0):
    print(f"kappa={k:+.0e}  d(x, y)={float(distance(x, y, k)):.6f}")

# %% [markdown]
# At `kappa = 0` the distance is twice the Euclidean one, because the flat
# model here is the limit of a ball of radius `1/sqrt|kappa|`.

# %%
print(2 * np.linalg.norm(x - y))

# %% [markdown]
# Addition is not commutative away from zero curvature, but left
# cancellation holds: `(-x) + (x + y) = y`.

# %%
k = -1.0
print(kappa_add(x, y, k), kappa_add(y, x, k))
print(kappa_add(-x, kappa_add(x, y, k), k))

# %% [markdown]
# The exponential and logarithmic maps at the origin move features between
# the tangent space and the manifold.

# %%
v = np.array([0.8, 0.5])
for k in (-1.0, 1.0):
    print(k, exp0(v, k), log0(exp0(v, k), k))

# %% [markdown]
# ## Weighted midpoints
#
# A single point is its own midpoint, even on the sphere beyond the equator.

# %%
far = np.array([[1.7, 0.0]])
print(gyromidpoint(far, np.array([1.0]), 1.0))

pts = np.array([[0.2, 0.0], [0.0, 0.5], [-0.3, -0.1]])
w = np.array([1.0, 2.0, 1.0])
for k in (-1.0, 0.0, 1.0):
    print(k, gyromidpoint(pts, w, k))
