"""
Sparse least squares with gradient hard thresholding
=====================================================

Plant a 3-sparse vector, observe 40 random measurements of it, and recover
it with GHT. Also shows a wrong-support fixed point that GHT can stall in.
"""
import numpy as np

from sparsenet import ght

rng = np.random.default_rng(1)
A = rng.standard_normal((40, 20))
x_true = np.zeros(20)
x_true[[2, 11, 17]] = [2.5, -1.2, 1.8]
b = A @ x_true

# step size 1/L with L the largest eigenvalue of A^T A
L = np.linalg.norm(A, 2) ** 2
print("power iteration estimate of L:", ght.estimate_lipschitz(A), "exact:", L)

state = ght.ght_solve(ght.least_squares(A, b), ght.GhtConfig(k=3, step_size=1 / L))
print("recovered support:", state.support, "true support:", ght.support(x_true))
print("iterations:", state.iteration, "max error:", np.abs(state.x - x_true).max())

# the trace records objective and support churn per iteration
for row in state.trace[:5]:
    print(row)

# hard thresholding on its own: keep the 2 largest magnitudes, ties to the lower index
print(ght.hard_threshold(np.array([0.5, -3.0, 3.0, 1.0]), 2))

# seed 9 (same generator as the tests) converges to a support that misses one entry:
# the restricted optimum zeroes the gradient on the wrong support and every
# off-support gradient step is too small to displace a retained weight
rng = np.random.default_rng(9)
A = rng.standard_normal((40, 20))
x_true = np.zeros(20)
idx = rng.choice(20, 3, replace=False)
x_true[idx] = rng.choice([-1.0, 1.0], 3) * rng.uniform(1.0, 3.0, 3)
state = ght.ght_solve(ght.least_squares(A, A @ x_true), ght.GhtConfig(3, 1 / np.linalg.norm(A, 2) ** 2))
print("seed 9 support:", state.support, "true:", ght.support(x_true), "objective:", state.objective_value)
