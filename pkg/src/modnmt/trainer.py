"""Budget-controlled multi-direction training loop.

Every run consumes exactly ``budget.total`` sentence pairs regardless of
architecture, which is what makes cross-architecture comparisons fair. One
optimizer step folds ``accumulation`` micro-batches, each drawn from an
independently sampled direction; shared modules therefore receive a single
combined update from several directions, gradient accumulation doing the work.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tensor_mod
from .tensor import Tape, backward, mul


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplingPolicy:
    """Uniform over directions; autoencoding directions get a relative weight."""

    autoencoding_weight: float = 1.0


@dataclass(frozen=True)
class TrainBudget:
    total: int
    batch_size: int = 32
    accumulation: int = 8
    policy: SamplingPolicy = SamplingPolicy()


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    lr_scale: float = 2.0
    warmup: int = 400
    clip_norm: float = 1.0


class OptimizerState:
    """Per-parameter Adam moments; step counts are per parameter because
    modules update only when routed."""

    def __init__(self, config=AdamConfig()):
        self.config = config
        self.slots = {}  # id(param) -> [m, v, t]

    def slot(self, param):
        return self.slots.setdefault(
            id(param), [np.zeros_like(param.data), np.zeros_like(param.data), 0])


def noam_lr(step, d, warmup=400, scale=1.0):
    """Inverse-square-root schedule with linear warmup, peak scaled by d."""
    step = max(step, 1)
    return scale * d ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


def sample_direction(policy, directions, rng):
    """Draw one direction; translation weight 1, autoencoding weighted."""
    dirs = list(directions.translation) + list(directions.autoencoding)
    if not dirs:
        raise ValueError("empty direction set")
    w = np.array(
        [1.0] * len(directions.translation)
        + [policy.autoencoding_weight] * len(directions.autoencoding))
    total = w.sum()
    if total <= 0:
        raise ValueError("all direction weights are zero")
    return dirs[int(rng.choice(len(dirs), p=w / total))]


def adam_step(state, params, grads, lr):
    """Standard Adam update, in place; a missing grad counts as zero."""
    cfg = state.config
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        m, v, t = state.slot(p)
        t += 1
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        mhat = m / (1.0 - cfg.beta1 ** t)
        vhat = v / (1.0 - cfg.beta2 ** t)
        p.data -= lr * mhat / (np.sqrt(vhat) + cfg.eps)
        state.slots[id(p)][2] = t


def _global_grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return np.sqrt(total)


def train(model, splits, directions, budget, seed=0, adam=AdamConfig(), log_path=None):
    """Train in place for exactly ``budget.total`` datapoints; returns the log.

    Deterministic under (model, corpus, seed, config). Raises
    :class:`TrainingDiverged` on the first non-finite loss.
    """
    tensor_mod.tune_malloc()
    rng = np.random.default_rng(seed)
    pools = {}
    for direction in directions.all_directions:
        pool = splits.pairs_for("train", direction)
        if not pool:
            raise ValueError(f"no training pairs for direction {direction}")
        pools[direction] = pool

    state = OptimizerState(adam)
    log = []
    consumed = 0
    step = 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        while consumed < budget.total:
            step += 1
            window_dirs = []
            window_losses = []
            touched = set()
            for _ in range(budget.accumulation):
                if consumed >= budget.total:
                    break
                direction = sample_direction(budget.policy, directions, rng)
                n = min(budget.batch_size, budget.total - consumed)
                pool = pools[direction]
                picks = rng.integers(0, len(pool), size=n)
                batch = [pool[i] for i in picks]
                with Tape():
                    loss, _ = model.forward(
                        direction,
                        [list(p.src_tokens) for p in batch],
                        [list(p.tgt_tokens) for p in batch],
                    )
                    if not np.isfinite(loss.item()):
                        raise TrainingDiverged(
                            f"non-finite loss at step {step}, direction {direction}")
                    backward(mul(loss, 1.0 / budget.accumulation))
                consumed += n
                window_dirs.append(direction)
                window_losses.append(loss.item())
                touched.update(model.route(*direction))

            touched_keys = sorted(touched, key=str)
            params = model.parameters_for(touched_keys)
            module_norms = {
                str(key): _global_grad_norm(model.parameters_for([key]))
                for key in touched_keys
            }
            gnorm = _global_grad_norm(params)
            clipped = adam.clip_norm is not None and gnorm > adam.clip_norm
            if clipped:
                scale = adam.clip_norm / gnorm
                for p in params:
                    if p.grad is not None:
                        p.grad *= scale
            lr = noam_lr(step, model.dims.d, adam.warmup, adam.lr_scale)
            adam_step(state, params, [p.grad for p in params], lr)
            for p in params:
                p.zero_grad()

            record = {
                "step": step,
                "datapoints": consumed,
                "directions": ["->".join(d) for d in window_dirs],
                "loss": float(np.mean(window_losses)),
                "lr": lr,
                "grad_norm": float(gnorm),
                "clipped": bool(clipped),
                "module_grad_norms": {k: float(v) for k, v in module_norms.items()},
            }
            log.append(record)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    assert consumed == budget.total
    return log
