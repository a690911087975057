"""
Accuracy versus sparsity ratio on the bundled MNIST subset
==========================================================

Runs one IHT training per ratio (r = 0 is the dense baseline) and writes
sweep.csv under out/mnist_sweep. Takes about a minute on one core.
"""
import csv
from pathlib import Path

from sparsenet.experiment import SweepSpec, cmd_sweep, load_config

root = Path(__file__).resolve().parents[1]
cfg = load_config(root / "configs" / "mnist_iht.json")
out = root / "out" / "mnist_sweep"
cmd_sweep(SweepSpec([0.0, 0.25, 0.5, 0.75, 0.9], cfg, str(out)))

with open(out / "sweep.csv") as f:
    for row in csv.DictReader(f):
        print(row)
