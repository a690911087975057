"""
Checking backpropagation against finite differences
====================================================

Builds a small conv net, compares the analytic gradient of every parameter
with central differences, and prints the worst relative error per tensor.
"""
import numpy as np

from sparsenet.network import LossSpec, backward, build_network, forward, loss

arch = {
    "input_shape": [1, 8, 8],
    "classes": 3,
    "layers": [
        {"kind": "conv2d", "filters": 3, "kernel": 3, "padding": 1},
        {"kind": "relu"},
        {"kind": "max_pool", "size": 2},
        {"kind": "global_avg_pool"},
        {"kind": "fully_connected", "units": 3},
        {"kind": "softmax"},
    ],
}
net = build_network(arch, seed=0)
print(net.num_parameters(), "parameters")

rng = np.random.default_rng(0)
x = rng.standard_normal((4, 1, 8, 8))
y = np.array([0, 2, 1, 0])
spec = LossSpec(weight_decay=1e-3)

grads = backward(net, forward(net, x), y, spec)
eps = 1e-4
for p, g in zip(net.parameters(), grads):
    num = np.zeros_like(p)
    for i in range(p.size):
        old = p.flat[i]
        p.flat[i] = old + eps
        up = loss(net, x, y, spec)
        p.flat[i] = old - eps
        down = loss(net, x, y, spec)
        p.flat[i] = old
        num.flat[i] = (up - down) / (2 * eps)
    err = np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-8)
    print(p.shape, "worst relative error %.2e" % err.max())
