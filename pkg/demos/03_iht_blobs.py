"""
Iterative hard thresholding on Gaussian blobs
==============================================

Trains a small MLP with three thresholding cycles at 75% sparsity and prints
the per-cycle budgets, nonzero counts and change ratios.
"""
from sparsenet.data import blob_split
from sparsenet.iht import SparsityPlan, TrainConfig, nonzero_counts, run_iht
from sparsenet.network import build_network, evaluate

train, test = blob_split(classes=4, per_class=100, test_per_class=50, dim=8, separation=8.0, seed=0)
arch = {
    "input_shape": [8],
    "classes": 4,
    "layers": [
        {"kind": "fully_connected", "units": 16},
        {"kind": "relu"},
        {"kind": "fully_connected", "units": 4},
        {"kind": "softmax"},
    ],
}
net = build_network(arch, seed=0)
cfg = TrainConfig(s1=2, s2=3, cycle_count=3, batch_size=32)
result = run_iht(net, cfg, SparsityPlan(0.75), train.images, train.labels, (test.images, test.labels))

# the ratio ramps from 0.375 to 0.75 across the three events
for c in result.cycles:
    print(f"cycle {c.cycle} epoch {c.epoch} ratio {c.ratio} budgets {c.budgets} change {c.change_ratio_global}")

for e in result.epochs:
    print(f"{e.epoch:2d} {e.phase:7s} loss {e.train_loss:.4f} test acc {e.test_acc:.3f} nonzeros {e.nonzeros}")

print("final nonzeros", nonzero_counts(net), "of", [w.size for w in net.weights()])
print("test accuracy", evaluate(net, test.images, test.labels)[0])
