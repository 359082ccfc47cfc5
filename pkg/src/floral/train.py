"""Adam training loop for the flow-matching objective.

Training iterates over minibatches of (input, prior draw, target) couplings,
re-drawing the prior endpoint and path noise fresh every step, and optionally
tracks a validation loss to keep the best parameter snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .flow import DEFAULT_PRIOR, CouplingSample, FlowMode, PathConfig, cfm_loss, make_target
from .problems import Dataset, lift_input
from .random_fields import KernelSpec, sample_gp


class TrainingError(RuntimeError):
    """Non-finite loss or gradient during optimization."""


@dataclass
class AdamState:
    """First/second moment accumulators for each named parameter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              weight_decay: float = 0.0, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place Adam update with weight decay folded into the gradient."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if weight_decay != 0.0:
            g = g + weight_decay * p.values
        m = state.m.setdefault(name, np.zeros_like(p.values))
        v = state.v.setdefault(name, np.zeros_like(p.values))
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.values -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainResult:
    train_losses: list
    validation_losses: list
    best_state: dict
    best_epoch: int


def _couplings(dataset: Dataset, indices, mode: FlowMode, prior_spec: KernelSpec,
               rng: np.random.Generator) -> list[CouplingSample]:
    batch = []
    for i in indices:
        sample = dataset.sample(i)
        w1 = make_target(sample["hf_solution"],
                         dataset.lf_on_hf_grid(i) if mode == FlowMode.FLORAL else None,
                         mode)
        a = lift_input(sample["input"], w1.domain, w1.shape)
        w0 = sample_gp(prior_spec, w1.domain, w1.shape,
                       rng.integers(0, 2**63 - 1), channels=w1.channels)
        batch.append(CouplingSample(a=a, w0=w0, w1=w1))
    return batch


def evaluate_loss(model, dataset: Dataset, mode: FlowMode, cfg: PathConfig,
                  rng_seed, prior_spec: KernelSpec = DEFAULT_PRIOR,
                  batch_size: int = 16) -> float:
    """Mean CFM loss over a dataset with fixed-seed coupling draws."""
    rng = np.random.default_rng(rng_seed)
    totals = []
    for lo in range(0, dataset.count, batch_size):
        idx = range(lo, min(lo + batch_size, dataset.count))
        batch = _couplings(dataset, idx, mode, prior_spec, rng)
        with ad.no_grad():
            loss = cfm_loss(model, batch, rng.integers(0, 2**63 - 1), cfg,
                            prior_spec)
        totals.append(float(loss.values) * len(batch))
    return sum(totals) / dataset.count


def train(model, dataset: Dataset, mode: FlowMode, epochs: int, batch_size: int,
          rng_seed, lr: float = 1e-3, weight_decay: float = 1e-4,
          lr_decay: float = 0.99, path: PathConfig = PathConfig(),
          prior_spec: KernelSpec = DEFAULT_PRIOR,
          validation: Dataset | None = None,
          log=None) -> TrainResult:
    """Run the optimization loop and return per-epoch losses.

    The learning rate decays geometrically per epoch.  When a validation set
    is supplied, the parameter snapshot with the lowest validation loss is
    kept alongside the final state.
    """
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=rng_seed))
    state = AdamState()
    train_losses, validation_losses = [], []
    best_state = model.state_arrays()
    best_loss = np.inf
    best_epoch = 0
    for epoch in range(epochs):
        order = rng.permutation(dataset.count)
        epoch_lr = lr * lr_decay**epoch
        epoch_total = 0.0
        for step, lo in enumerate(range(0, dataset.count, batch_size)):
            idx = order[lo:lo + batch_size]
            batch = _couplings(dataset, idx, mode, prior_spec, rng)
            model.zero_grad()
            loss = cfm_loss(model, batch, rng.integers(0, 2**63 - 1), path,
                            prior_spec)
            value = float(loss.values)
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {step}")
            loss.backward()
            grads = {name: p.grad if p.grad is not None else np.zeros_like(p.values)
                     for name, p in model.params.items()}
            adam_step(model.params, grads, state, epoch_lr, weight_decay)
            epoch_total += value * len(batch)
        train_losses.append(epoch_total / dataset.count)
        if validation is not None:
            vloss = evaluate_loss(model, validation, mode, path,
                                  rng.integers(0, 2**63 - 1), prior_spec,
                                  batch_size=batch_size)
            validation_losses.append(vloss)
            if vloss < best_loss:
                best_loss = vloss
                best_state = model.state_arrays()
                best_epoch = epoch
        else:
            best_state = model.state_arrays()
            best_epoch = epoch
        if log is not None:
            msg = f"epoch {epoch + 1}/{epochs} train_loss={train_losses[-1]:.6e}"
            if validation is not None:
                msg += f" val_loss={validation_losses[-1]:.6e}"
            log(msg)
    return TrainResult(train_losses, validation_losses, best_state, best_epoch)
