"""Iterative hard thresholding for training sparse networks.

A run trains the dense network for ``s1`` epochs, then alternates

* Phase I: keep the top-k_l weights of every weighted layer, zero the rest,
  and fine-tune for ``s2`` epochs with the zeroed weights pinned at zero;
* Phase II: lift the pins and train every weight for ``s1`` epochs,

always finishing on a Phase I so the returned model meets the per-layer
budgets. Biases are never thresholded.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .ght import hard_threshold, top_k_support
from .network import LossSpec, Network, OptimizerState, backward, evaluate, forward, loss, sgd_step

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6


class DivergenceError(RuntimeError):
    """Training loss blew up. Carries where it happened and the metrics so far."""

    def __init__(self, message, phase=None, cycle=None, metrics=None, epochs=None):
        super().__init__(message)
        self.phase = phase
        self.cycle = cycle
        self.metrics = metrics if metrics is not None else []
        self.epochs = epochs if epochs is not None else []


@dataclass
class SparsityPlan:
    """Fractions of each weighted layer's weights to REMOVE.

    ``final_ratio`` applies to every weighted layer unless ``layer_ratios``
    overrides it per layer. ``start_ratio`` is the ratio used at the first
    thresholding event (defaults to half of the final ratio) and
    ``total_epochs`` is the ramp length T; run_iht fills it with the span
    between the first and last thresholding events when left as None.
    """

    final_ratio: float = 0.5
    start_ratio: Optional[float] = None
    total_epochs: Optional[int] = None
    layer_ratios: Optional[Sequence[float]] = None

    def __post_init__(self):
        for r in self.finals(len(self.layer_ratios or [0])):
            if not 0 <= r < 1:
                raise ValueError(f"sparsity ratio {r} outside [0, 1)")
        if self.start_ratio is not None:
            if not 0 <= self.start_ratio <= min(self.finals(len(self.layer_ratios or [0]))):
                raise ValueError("start_ratio must lie in [0, final ratio]")

    @property
    def uniform(self):
        return self.layer_ratios is None

    def finals(self, n_layers):
        if self.layer_ratios is None:
            return [float(self.final_ratio)] * n_layers
        if len(self.layer_ratios) != n_layers:
            raise ValueError(f"{len(self.layer_ratios)} layer ratios for {n_layers} weighted layers")
        return [float(r) for r in self.layer_ratios]

    def starts(self, n_layers):
        if self.start_ratio is None:
            return [r / 2 for r in self.finals(n_layers)]
        return [float(self.start_ratio)] * n_layers


@dataclass
class TrainConfig:
    s1: int = 5
    s2: int = 15
    cycle_count: int = 2
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    weight_decay: float = 1e-4
    decay_form: str = "squared_frobenius"
    seed: int = 0
    thresholding_mode: str = "hard"
    momentum_reset: bool = True
    flip_probability: float = 0.0

    def __post_init__(self):
        if self.s1 < 1 or self.s2 < 1 or self.cycle_count < 1:
            raise ValueError("s1, s2 and cycle_count must all be >= 1")
        if self.thresholding_mode not in ("hard", "random"):
            raise ValueError(f"unknown thresholding_mode {self.thresholding_mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def total_epochs(self):
        return self.cycle_count * (self.s1 + self.s2)

    def loss_spec(self):
        return LossSpec(self.weight_decay, self.decay_form)


@dataclass
class EpochRecord:
    epoch: int
    cycle: int
    phase: str
    train_loss: float
    train_acc: float
    test_loss: float = float("nan")
    test_acc: float = float("nan")
    nonzeros: int = 0


@dataclass
class CycleMetrics:
    cycle: int
    epoch: int
    ratio: List[float]
    budgets: List[int]
    change_ratio: Optional[List[float]]
    change_ratio_global: Optional[float]
    nonzeros_after_threshold: List[int]
    nonzeros_after_finetune: List[int] = field(default_factory=list)
    epochs: List[EpochRecord] = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d.pop("epochs")
        return d


def progressive_ratio(r0, r_final, t, T):
    """Linear ramp r(t) = r(0) + t (r(T) - r(0)) / T; T = 0 means r(T) immediately."""
    if T == 0:
        return float(r_final)
    if not 0 <= t <= T:
        raise ValueError(f"epoch {t} outside [0, {T}]")
    return r0 + t * (r_final - r0) / T


def budget_for(ratio, size):
    """k = max(1, round((1 - r) * P)), rounding half away from zero."""
    k = math.floor((1.0 - ratio) * size + 0.5)
    if k < 1:
        warnings.warn(f"budget for {size} weights at ratio {ratio} rounds to 0; using 1", RuntimeWarning, stacklevel=2)
        k = 1
    return int(k)


def layer_budget(plan: SparsityPlan, size: int, t: int, layer: int = 0, n_layers: int = 1) -> int:
    T = plan.total_epochs or 0
    r = progressive_ratio(plan.starts(n_layers)[layer], plan.finals(n_layers)[layer], t, T)
    return budget_for(r, size)


def model_budgets(model: Network, plan: SparsityPlan, t: int):
    n = len(model.weighted)
    T = plan.total_epochs or 0
    ratios = [
        progressive_ratio(r0, rf, t, T) for r0, rf in zip(plan.starts(n), plan.finals(n))
    ]
    budgets = [budget_for(r, w.size) for r, w in zip(ratios, model.weights())]
    return ratios, budgets


def nonzero_counts(model: Network):
    return [int(np.count_nonzero(w)) for w in model.weights()]


def threshold_model(model: Network, budgets):
    """Zero all but the k_l largest-magnitude weights of each weighted layer, in place.

    Returns one boolean mask per weighted layer (True = retained).
    """
    if len(budgets) != len(model.weighted):
        raise ValueError(f"{len(budgets)} budgets for {len(model.weighted)} weighted layers")
    masks = []
    for i, k in zip(model.weighted, budgets):
        layer = model.layers[i]
        keep = top_k_support(layer.weight, k)
        mask = np.zeros(layer.weight.shape, dtype=bool)
        mask.ravel()[keep] = True
        layer.weight[...] = hard_threshold(layer.weight, k)
        masks.append(mask)
    return masks


def random_threshold_model(model: Network, budgets, seed):
    """Keep a uniformly random k_l-subset of each layer's weights (ablation)."""
    if len(budgets) != len(model.weighted):
        raise ValueError(f"{len(budgets)} budgets for {len(model.weighted)} weighted layers")
    rng = np.random.default_rng(seed)
    masks = []
    for i, k in zip(model.weighted, budgets):
        w = model.layers[i].weight
        mask = np.zeros(w.shape, dtype=bool)
        if k >= w.size:
            mask[...] = True
        else:
            mask.ravel()[rng.choice(w.size, size=k, replace=False)] = True
            w[~mask] = 0.0
        masks.append(mask)
    return masks


def change_ratio(prev_masks, new_masks):
    """Fraction of each layer's new support that was absent from the previous one.

    Returns (per-layer ratios, aggregate weighted by layer size).
    """
    if len(prev_masks) != len(new_masks):
        raise ValueError("mask lists differ in length")
    ratios, sizes = [], []
    for a, b in zip(prev_masks, new_masks):
        if a.shape != b.shape:
            raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
        k = int(np.count_nonzero(b))
        ratios.append(float(np.count_nonzero(b & ~a)) / k if k else 0.0)
        sizes.append(b.size)
    total = sum(sizes)
    agg = sum(r * s for r, s in zip(ratios, sizes)) / total if total else 0.0
    return ratios, agg


def _check_loss(value, phase, cycle):
    if not np.isfinite(value) or value > DIVERGENCE_LOSS:
        raise DivergenceError(
            f"training diverged in {phase} of cycle {cycle}: loss {value:.4g}",
            phase=phase,
            cycle=cycle,
        )


def _apply_masks(model, masks, opt, zero_velocity):
    for j, (i, m) in enumerate(zip(model.weighted, masks)):
        model.layers[i].weight[~m] = 0.0
        if zero_velocity and opt.velocity:
            opt.velocity[2 * j][~m] = 0.0


def flip_horizontal(images, probability, rng):
    """Mirror each image along its last axis with the given probability."""
    images = np.asarray(images)
    if images.ndim < 3:
        raise ValueError("horizontal flipping needs image-shaped samples (N, H, W) or (N, C, H, W)")
    if probability <= 0:
        return images
    chosen = rng.random(len(images)) < probability
    out = images.copy()
    out[chosen] = out[chosen][..., ::-1]
    return out


def train_epochs(
    model: Network,
    opt: OptimizerState,
    x,
    y,
    epochs: int,
    rng,
    cfg: TrainConfig,
    masks=None,
    test=None,
    phase="train",
    cycle=0,
    start_epoch=0,
    flip_rng=None,
):
    """Minibatch SGD for ``epochs`` passes over (x, y).

    With ``masks`` given, masked weights get zero gradient and are re-zeroed
    (weights, and velocity when cfg.momentum_reset) after every step.
    Returns one EpochRecord per epoch.
    """
    spec = cfg.loss_spec()
    n = len(x)
    if masks is not None and all(m.all() for m in masks):
        masks = None
    weight_slots = None
    if masks is not None:
        weight_slots = {2 * j: m for j, m in enumerate(masks)}
    records = []
    for e in range(epochs):
        order = rng.permutation(n)
        xe = x
        if cfg.flip_probability > 0:
            xe = flip_horizontal(x, cfg.flip_probability, flip_rng)
        tot_loss = tot_correct = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = xe[idx], y[idx]
            acts = forward(model, xb)
            batch_loss = loss(model, xb, yb, spec, acts=acts)
            _check_loss(batch_loss, phase, cycle)
            grads = backward(model, acts, yb, spec)
            if weight_slots is not None:
                for slot, m in weight_slots.items():
                    grads[slot] = np.where(m, grads[slot], 0.0)
            sgd_step(model, grads, opt)
            if masks is not None:
                _apply_masks(model, masks, opt, cfg.momentum_reset)
            tot_loss += batch_loss * len(idx)
            tot_correct += float(np.sum(np.argmax(acts[-1], axis=1) == yb))
        rec = EpochRecord(
            epoch=start_epoch + e + 1,
            cycle=cycle,
            phase=phase,
            train_loss=tot_loss / n,
            train_acc=tot_correct / n,
            nonzeros=sum(nonzero_counts(model)),
        )
        if test is not None:
            rec.test_acc, rec.test_loss = evaluate(model, test[0], test[1], spec)
        log.info(
            "epoch %d [%s c%d] loss %.4f acc %.4f test_acc %.4f",
            rec.epoch, phase, cycle, rec.train_loss, rec.train_acc, rec.test_acc,
        )
        records.append(rec)
    return records


def _as_inputs(model, x):
    x = np.asarray(x, dtype=float)
    return x.reshape((len(x),) + model.input_shape)


def _rngs(seed):
    return np.random.default_rng(seed), np.random.default_rng([seed, 1]), np.random.default_rng([seed, 2])


def train_dense(model: Network, cfg: TrainConfig, x, y, epochs=None, test=None):
    """Plain unconstrained training; the baseline IHT is compared against."""
    epochs = cfg.total_epochs if epochs is None else epochs
    x = _as_inputs(model, x)
    y = np.asarray(y, dtype=int)
    if test is not None:
        test = (_as_inputs(model, test[0]), np.asarray(test[1], dtype=int))
    shuffle_rng, _, flip_rng = _rngs(cfg.seed)
    opt = OptimizerState.for_model(model, cfg.learning_rate, cfg.momentum)
    return train_epochs(model, opt, x, y, epochs, shuffle_rng, cfg, test=test, phase="dense", flip_rng=flip_rng)


def finetune_masked(model, masks, epochs, x, y, opt, rng, cfg, **kw):
    """Phase I training: support of every weighted layer stays inside its mask."""
    for i, m in zip(model.weighted, masks):
        if np.any(model.layers[i].weight[~m]):
            raise ValueError(f"layer {i} has nonzero weights outside its mask")
    kw.setdefault("phase", "phase1")
    return train_epochs(model, opt, x, y, epochs, rng, cfg, masks=masks, **kw)


def restore_and_train(model, epochs, x, y, opt, rng, cfg, **kw):
    """Phase II training: every weight, including previously truncated ones, is free."""
    kw.setdefault("phase", "phase2")
    return train_epochs(model, opt, x, y, epochs, rng, cfg, masks=None, **kw)


@dataclass
class IHTResult:
    model: Network
    cycles: List[CycleMetrics]
    epochs: List[EpochRecord]
    budgets: List[int]

    def summary(self):
        return {
            "total_epochs": len(self.epochs),
            "budgets": self.budgets,
            "final_nonzeros": nonzero_counts(self.model),
            "layer_sizes": [int(w.size) for w in self.model.weights()],
            "cycles": [c.to_dict() for c in self.cycles],
        }


def run_iht(model: Network, cfg: TrainConfig, plan: SparsityPlan, x, y, test=None) -> IHTResult:
    """Train ``model`` in place with iterative hard thresholding.

    Epoch layout: s1 dense epochs, then ``cycle_count`` thresholding events,
    each followed by s2 masked epochs, with s1 unmasked epochs between
    consecutive events. The sparsity ratio ramps linearly from the plan's
    start ratio at the first event to its final ratio at the last one.

    Raises DivergenceError (with the metrics gathered so far) if the
    training loss becomes non-finite or exceeds 1e6.
    """
    x = _as_inputs(model, x)
    y = np.asarray(y, dtype=int)
    if test is not None:
        test = (_as_inputs(model, test[0]), np.asarray(test[1], dtype=int))
    shuffle_rng, threshold_rng, flip_rng = _rngs(cfg.seed)
    opt = OptimizerState.for_model(model, cfg.learning_rate, cfg.momentum)

    event_epochs = [cfg.s1 + c * (cfg.s1 + cfg.s2) for c in range(cfg.cycle_count)]
    if plan.total_epochs is None:
        plan = SparsityPlan(
            plan.final_ratio, plan.start_ratio, event_epochs[-1] - event_epochs[0], plan.layer_ratios
        )
    plan.finals(len(model.weighted))

    epochs: List[EpochRecord] = []
    cycles: List[CycleMetrics] = []
    common = dict(test=test, flip_rng=flip_rng)
    phase, cycle = "init", 0
    try:
        epochs += train_epochs(model, opt, x, y, cfg.s1, shuffle_rng, cfg, phase=phase, **common)
        prev_masks = None
        budgets = []
        for cycle in range(cfg.cycle_count):
            if cycle > 0:
                phase = "phase2"
                epochs += restore_and_train(
                    model, cfg.s1, x, y, opt, shuffle_rng, cfg,
                    cycle=cycle, start_epoch=len(epochs), **common,
                )
            phase = "phase1"
            t = min(len(epochs) - event_epochs[0], plan.total_epochs)
            ratios, budgets = model_budgets(model, plan, t)
            if cfg.thresholding_mode == "hard":
                masks = threshold_model(model, budgets)
            else:
                masks = random_threshold_model(model, budgets, threshold_rng.integers(2**63))
            if cfg.momentum_reset:
                for j, m in enumerate(masks):
                    opt.velocity[2 * j][~m] = 0.0
            if prev_masks is None:
                per_layer, agg = None, None
            else:
                per_layer, agg = change_ratio(prev_masks, masks)
            metrics = CycleMetrics(
                cycle=cycle,
                epoch=len(epochs),
                ratio=ratios,
                budgets=budgets,
                change_ratio=per_layer,
                change_ratio_global=agg,
                nonzeros_after_threshold=nonzero_counts(model),
            )
            cycles.append(metrics)
            metrics.epochs = finetune_masked(
                model, masks, cfg.s2, x, y, opt, shuffle_rng, cfg,
                cycle=cycle, start_epoch=len(epochs), **common,
            )
            epochs += metrics.epochs
            metrics.nonzeros_after_finetune = nonzero_counts(model)
            prev_masks = masks
    except DivergenceError as e:
        e.phase, e.cycle = phase, cycle
        e.metrics, e.epochs = cycles, epochs
        raise
    return IHTResult(model, cycles, epochs, budgets)
