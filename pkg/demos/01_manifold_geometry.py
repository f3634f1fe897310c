"""Tour of the manifold geometry layer.

Walks through the four manifolds (Euclidean, SPD with the affine-invariant
metric, Stiefel with QR retraction, doubly stochastic with the Fisher
metric): constructing points and tangents, moving with exp/retract, inverting
with log, transporting tangents, and converting Euclidean gradients to
Riemannian ones.
"""

import numpy as np

from manibilevel import DoublyStochastic, Euclidean, Spd, Stiefel

rng = np.random.default_rng(0)

print("=== SPD(3): affine-invariant geometry ===")
spd = Spd(3)
x = spd.rand_point(rng)
u = spd.rand_tangent(x, rng)
u = (0.5 / spd.norm(x, u)) * u
print("point eigenvalues:", np.linalg.eigvalsh(x.coords).round(3))

# Exponential map and its inverse round-trip.
y = spd.exp(x, u)
v = spd.log(x, y)
print("exp/log roundtrip error:", f"{spd.norm(x, v - u):.2e}")
print("geodesic distance:", f"{spd.dist(x, y):.4f}", "= tangent norm", f"{spd.norm(x, u):.4f}")

# Parallel transport preserves inner products exactly on SPD.
w = spd.rand_tangent(x, rng)
before = spd.inner(x, u, w)
after = spd.inner(y, spd.transport(x, y, u), spd.transport(x, y, w))
print("transport isometry drift:", f"{abs(after - before):.2e}")

# Euclidean-to-Riemannian gradient conversion: grad = X G X for gradient G.
eg = rng.standard_normal((3, 3))
rg = spd.egrad_to_rgrad(x, eg)
direction = spd.rand_tangent(x, rng)
lhs = spd.inner(x, rg, direction)
rhs = float(np.sum(0.5 * (eg + eg.T) * direction.coords))
print("metric duality check:", f"{abs(lhs - rhs):.2e}")

print()
print("=== Stiefel(5, 2): QR retraction, no exponential map ===")
st = Stiefel(5, 2)
w0 = st.rand_point(rng)
step = st.rand_tangent(w0, rng)
w1 = st.retract(w0, 0.3 * step)
print("orthogonality residual after retraction:", f"{st.check_point(w1.coords):.2e}")
moved = st.transport(w0, w1, step)
print("transported tangent stays tangent:", f"{st.check_tangent(w1, moved.coords):.2e}")

print()
print("=== DoublyStochastic(4, 4): Fisher metric, Sinkhorn retraction ===")
ds = DoublyStochastic(4, 4)
g0 = ds.rand_point(rng)
t = ds.rand_tangent(g0, rng)
t = (0.2 / ds.norm(g0, t)) * t
g1 = ds.exp(g0, t)  # exp is the Sinkhorn retraction; log inverts it exactly
back = ds.log(g0, g1)
print("row sums:", g1.coords.sum(axis=1).round(12))
print("chart roundtrip error:", f"{ds.norm(g0, back - t):.2e}")

print()
print("=== Products compose component-wise ===")
from manibilevel import product

pair = product([Spd(2), Euclidean((3,))])
z = pair.rand_point(rng)
dz = pair.rand_tangent(z, rng)
z2 = pair.exp(z, 0.1 * dz)
print("product dist:", f"{pair.dist(z, z2):.4f}")
print("product dim:", pair.dim, "= 3 (SPD(2)) + 3 (R^3)")
