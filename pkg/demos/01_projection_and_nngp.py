# %% [markdown]
# NNGP factor priors and the Stiefel projection
# ---------------------------------------------
# Two building blocks of the sampler, checked against dense linear algebra.

# %%
import numpy as np

from projmc2 import Kernel, LocationSet, nngp_factors, project_g

rng = np.random.default_rng(0)
locs = LocationSet(rng.uniform(size=(400, 2)))
kernel = Kernel(6.0)                       # exp(-6 * distance)

# %% [markdown]
# With m = 15 predecessors per site the sparse precision
# (I - A)^T D^{-1} (I - A) is a close stand-in for the dense GP inverse.

# %%
f = nngp_factors(locs, [kernel], m=15)[0]
dense = kernel.matrix(locs.coords)
approx = f.covariance()
print(f"nonzeros in A: {f.nnz} of {f.n ** 2}")
print(f"max |C_nngp - C| = {np.max(np.abs(approx - dense)):.3e}")
print(f"conditional variances in [{f.d_diag.min():.3f}, {f.d_diag.max():.3f}]")

# %% [markdown]
# The projection centers the columns and keeps sqrt(n) times the thin-QR
# factor. Any upper-triangular rescaling with positive diagonal, plus a
# column shift, lands on the same point.

# %%
F = rng.standard_normal((400, 2))
Ft = project_g(F)
R = np.array([[2.0, -0.7], [0.0, 0.4]])
moved = Ft @ R + np.array([3.0, -1.0])
print("Ft^T Ft / n =\n", np.round(Ft.T @ Ft / 400, 12))
print(f"max |g(Ft R + 1 mu^T) - Ft| = {np.max(np.abs(project_g(moved) - Ft)):.2e}")
