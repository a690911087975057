"""Run configurations, metric files and sparsity-ratio sweeps.

A run configuration is one JSON document::

    {
      "architecture": "mlp_784_128_10.json",      # path or inline object
      "data": {"kind": "mnist", "path": "...", "train_limit": 5000, "test_limit": 1000},
      "plan": {"final_ratio": 0.5},
      "train": {"s1": 5, "s2": 15, "cycle_count": 2, "seed": 0}
    }

Relative paths are resolved against the directory holding the config file.
``data.kind`` may also be "blobs" (keys: classes, per_class, test_per_class,
dim, separation, seed) or "cifar10" (keys: train_files, test_file).
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import bitmask
from .data import blob_split, load_cifar10_batch, load_mnist
from .iht import DivergenceError, SparsityPlan, TrainConfig, run_iht
from .network import build_network, evaluate

log = logging.getLogger(__name__)

EPOCH_COLUMNS = ["epoch", "cycle", "phase", "train_loss", "train_acc", "test_loss", "test_acc", "nonzeros"]
SWEEP_COLUMNS = ["ratio", "final_train_acc", "final_test_acc", "nonzeros", "bytes"]


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() or base is None else Path(base) / p


def load_config(path):
    path = Path(path)
    with open(path) as f:
        cfg = json.load(f)
    cfg["_base"] = str(path.parent)
    return cfg


def architecture_of(cfg):
    arch = cfg["architecture"]
    if isinstance(arch, str):
        with open(_resolve(cfg.get("_base"), arch)) as f:
            arch = json.load(f)
    return arch


def datasets_of(cfg):
    d = dict(cfg["data"])
    kind = d.pop("kind")
    base = cfg.get("_base")
    if kind == "mnist":
        return load_mnist(_resolve(base, d["path"]), d.get("train_limit"), d.get("test_limit"))
    if kind == "blobs":
        return blob_split(
            d.get("classes", 3),
            d.get("per_class", 100),
            d.get("test_per_class", 50),
            d.get("dim", 2),
            d.get("separation", 10.0),
            d.get("seed", 0),
        )
    if kind == "cifar10":
        parts = [load_cifar10_batch(_resolve(base, p)) for p in d["train_files"]]
        train = parts[0]
        if len(parts) > 1:
            train.images = np.concatenate([p.images for p in parts])
            train.labels = np.concatenate([p.labels for p in parts])
        test = load_cifar10_batch(_resolve(base, d["test_file"]), "test")
        return train, test
    raise ValueError(f"unknown data kind {kind!r}")


def _pick(cls, d):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def train_config_of(cfg, seed=None):
    d = dict(cfg.get("train", {}))
    if seed is not None:
        d["seed"] = seed
    return _pick(TrainConfig, d)


def plan_of(cfg, ratio=None):
    d = dict(cfg.get("plan", {}))
    if ratio is not None:
        d["final_ratio"] = ratio
        d.pop("layer_ratios", None)
        if d.get("start_ratio") is not None and d["start_ratio"] > ratio:
            d["start_ratio"] = None
    return _pick(SparsityPlan, d)


def write_epochs_csv(path, records):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=EPOCH_COLUMNS)
        w.writeheader()
        for rec in records:
            w.writerow(asdict(rec))


def _clean(obj):
    """JSON-safe copy: NaN becomes null."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def run_training(cfg, out_dir, seed=None, ratio=None, train=None, test=None):
    """One IHT run; writes metrics.csv, summary.json and model.sdnn into ``out_dir``.

    Returns the summary dict. A diverged run still writes its partial
    metrics and a summary with status "diverged".
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = train_config_of(cfg, seed)
    plan = plan_of(cfg, ratio)
    if train is None:
        train, test = datasets_of(cfg)
    model = build_network(architecture_of(cfg), seed=tcfg.seed)
    summary = {"config": {"train": asdict(tcfg), "plan": asdict(plan)}}
    try:
        result = run_iht(model, tcfg, plan, train.images, train.labels, test=(test.images, test.labels))
    except DivergenceError as e:
        write_epochs_csv(out / "metrics.csv", e.epochs)
        summary.update(
            status="diverged",
            diagnostic=str(e),
            phase=e.phase,
            cycle=e.cycle,
            cycles=[c.to_dict() for c in e.metrics],
        )
        (out / "summary.json").write_text(json.dumps(_clean(summary), indent=2))
        return summary
    write_epochs_csv(out / "metrics.csv", result.epochs)
    nbytes = bitmask.save(out / "model.sdnn", model)
    x_train = train.images.reshape((len(train),) + model.input_shape)
    x_test = test.images.reshape((len(test),) + model.input_shape)
    train_acc, train_loss = evaluate(model, x_train, train.labels, tcfg.loss_spec())
    test_acc, test_loss = evaluate(model, x_test, test.labels, tcfg.loss_spec())
    report = bitmask.size_report(model)
    summary.update(result.summary())
    summary.update(
        status="completed",
        final_train_acc=train_acc,
        final_train_loss=train_loss,
        final_test_acc=test_acc,
        final_test_loss=test_loss,
        nonzeros=report.nonzeros,
        bytes=nbytes,
        size_report={**asdict(report), "ratio": report.ratio, "payload_ratio": report.payload_ratio},
    )
    (out / "summary.json").write_text(json.dumps(_clean(summary), indent=2))
    return summary


@dataclass
class SweepSpec:
    ratios: list
    config: dict
    out_dir: str
    seed: int = None
    jobs: int = 1

    def __post_init__(self):
        r = list(self.ratios)
        if not r:
            raise ValueError("no ratios given")
        if any(not 0 <= v < 1 for v in r):
            raise ValueError("every ratio must lie in [0, 1)")
        if any(b <= a for a, b in zip(r, r[1:])):
            raise ValueError("ratios must be strictly increasing")


def _sweep_one(args):
    cfg, out_dir, seed, ratio = args
    try:
        return run_training(cfg, out_dir, seed=seed, ratio=ratio)
    except Exception as e:  # a failed ratio must not stop the sweep
        log.exception("run at ratio %s failed", ratio)
        return {"status": "failed", "diagnostic": f"{type(e).__name__}: {e}"}


def cmd_sweep(spec: SweepSpec):
    """Run one IHT training per ratio (r = 0 is the dense baseline) and write sweep.csv.

    Rows come back in ratio order; failed or diverged runs get empty values.
    """
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [
        (copy.deepcopy(spec.config), str(out / f"r_{r:.2f}"), spec.seed, r) for r in spec.ratios
    ]
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]

    rows = []
    for r, res in zip(spec.ratios, results):
        ok = res.get("status") == "completed"
        rows.append(
            {
                "ratio": r,
                "final_train_acc": res["final_train_acc"] if ok else "",
                "final_test_acc": res["final_test_acc"] if ok else "",
                "nonzeros": res["nonzeros"] if ok else "",
                "bytes": res["bytes"] if ok else "",
            }
        )
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    status = [
        {"ratio": r, "status": res.get("status"), "diagnostic": res.get("diagnostic")}
        for r, res in zip(spec.ratios, results)
    ]
    (out / "sweep_status.json").write_text(json.dumps(status, indent=2))
    return rows
