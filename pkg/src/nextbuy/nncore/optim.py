"""Optimizers, learning-rate schedules and weight averaging."""

import numpy as np

from ..errors import ContractError, TrainingError


def _check_finite(grads):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}", param=name)


class RMSprop:
    """Square-average scaled steps: v = a*v + (1-a)*g^2; p -= lr * g / (sqrt(v) + eps)."""

    kind = "rmsprop"

    def __init__(self, params, alpha=0.99, eps=1e-8):
        self.alpha, self.eps = alpha, eps
        self.square_avg = {k: np.zeros_like(v) for k, v in params.items()}
        self.steps = 0

    def step(self, params, grads, lr):
        _check_finite(grads)
        a = self.alpha
        for k, g in grads.items():
            v = self.square_avg[k]
            v *= a
            v += (1.0 - a) * g * g
            denom = np.sqrt(v)
            denom += self.eps
            np.divide(g, denom, out=denom)
            denom *= lr
            params[k] -= denom
        self.steps += 1

    def state(self):
        return {"steps": self.steps, **{f"v.{k}": v for k, v in self.square_avg.items()}}


class Adam:
    kind = "adam"

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.steps = 0

    def step(self, params, grads, lr):
        _check_finite(grads)
        self.steps += 1
        c1 = 1.0 - self.b1**self.steps
        c2 = 1.0 - self.b2**self.steps
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            denom = np.sqrt(v / c2)
            denom += self.eps
            np.divide(m, denom, out=denom)
            denom *= lr / c1
            params[k] -= denom

    def state(self):
        return {"steps": self.steps}


OPTIMIZERS = {"rmsprop": RMSprop, "adam": Adam}


def make_optimizer(kind, params):
    try:
        return OPTIMIZERS[kind](params)
    except KeyError:
        raise ContractError(f"unknown optimizer {kind!r}") from None


class CyclicLR:
    """Triangular cycle between ``base_lr`` and ``max_lr``, advanced once per batch."""

    kind = "cyclic"
    per_batch = True

    def __init__(self, step_size, base_lr=1e-6, max_lr=1e-3):
        if step_size < 1:
            raise ContractError("cyclic step size must be >= 1")
        self.step_size, self.base_lr, self.max_lr = step_size, base_lr, max_lr
        self.iteration = 0

    def lr_at(self, iteration):
        cycle = np.floor(1 + iteration / (2 * self.step_size))
        x = abs(iteration / self.step_size - 2 * cycle + 1)
        return float(self.base_lr + (self.max_lr - self.base_lr) * max(0.0, 1.0 - x))

    @property
    def lr(self):
        return self.lr_at(self.iteration)

    def step(self, signal=None):
        self.iteration += 1
        return self.lr

    def state(self):
        return {"iteration": self.iteration, "lr": self.lr}


class ReduceOnPlateau:
    """Scale the rate by ``factor`` once ``patience`` epochs pass without a new best loss."""

    kind = "plateau"
    per_batch = False

    def __init__(self, lr=1e-3, patience=2, factor=0.1, min_lr=1e-6):
        self.lr, self.patience, self.factor, self.min_lr = lr, patience, factor, min_lr
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, loss):
        if loss < self.best:
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr = max(self.min_lr, self.lr * self.factor)
            self.bad_epochs = 0
        return self.lr

    def state(self):
        return {"lr": self.lr, "best": self.best, "bad_epochs": self.bad_epochs}


class SWA:
    """Running equal-weight mean of parameter snapshots."""

    def __init__(self):
        self.mean = None
        self.count = 0

    def accumulate(self, params):
        self.count += 1
        if self.mean is None:
            self.mean = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
            return self
        for k, v in params.items():
            self.mean[k] += (v - self.mean[k]) / self.count
        return self

    def finalize(self):
        if not self.count:
            raise ContractError("stochastic weight averaging finalized with no snapshots")
        return {k: v.copy() for k, v in self.mean.items()}


def swa_accumulate(state, params):
    return (state or SWA()).accumulate(params)


def swa_finalize(state):
    if state is None:
        raise ContractError("stochastic weight averaging finalized with no snapshots")
    return state.finalize()


def inverse_loss_weights(losses):
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0 or np.any(~(losses > 0)):
        raise ContractError("weights need at least one strictly positive loss")
    inv = 1.0 / losses
    return inv / inv.sum()


def parameter_average(checkpoints):
    """Convex combination of ``[(params, val_loss), ...]`` weighted by inverse loss."""
    if not checkpoints:
        raise ContractError("parameter averaging needs at least one checkpoint")
    w = inverse_loss_weights([loss for _, loss in checkpoints])
    first = checkpoints[0][0]
    return {k: sum(wi * params[k] for wi, (params, _) in zip(w, checkpoints)) for k in first}
