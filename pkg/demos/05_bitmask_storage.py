"""
Bitmask storage of a sparse model
=================================

Thresholds the 784-128-10 MLP to 90% sparsity, writes it in the .sdnn
format and compares the file against dense float32 storage.
"""
import json
import tempfile
from pathlib import Path

import numpy as np

from sparsenet import bitmask
from sparsenet.iht import budget_for, threshold_model
from sparsenet.network import build_network

root = Path(__file__).resolve().parents[1]
arch = json.loads((root / "configs" / "mlp_784_128_10.json").read_text())
net = build_network(arch, seed=0)
threshold_model(net, [budget_for(0.9, w.size) for w in net.weights()])

# one presence bit per weight plus 4 bytes per kept weight
rep = bitmask.size_report(net)
print(rep)
print("file ratio %.3f, mask+values ratio %.3f" % (rep.ratio, rep.payload_ratio))

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "mlp.sdnn"
    n = bitmask.save(path, net)
    print("wrote", n, "bytes")
    back = bitmask.load_into(build_network(arch, seed=1), bitmask.load(path))

# values are stored as float32, so compare against the float32 rounding
for a, b in zip(net.parameters(), back.parameters()):
    assert np.array_equal(a.astype(np.float32), b)
print("round trip ok")
