"""Deterministic experiment driver: synthetic data, a hand-differentiated
two-layer classifier, analytic test functions, and optimizer-comparison
runs.

Every output here is a pure function of (spec, hyperparameters, seed):
dataset generation, weight initialization, and per-epoch shuffling each draw
from their own seeded generator stream, so repeated runs are byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .detloss import bce_loss
from .errors import ParameterError, ShapeError
from .netblocks import _sigmoid
from .optim import HyperParams, OptimState, adamw_delta, awdr_step, blend_coefficient, rmsprop_delta

OPTIMIZERS = ("rmsprop", "adamw", "awdr")
FUNCTIONS = ("quadratic", "rosenbrock")
HIDDEN_UNITS = 8
HISTORY_COLUMNS = ("epoch", "train_loss", "train_accuracy", "beta_t", "lr")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for the two-class Gaussian toy dataset."""

    seed: int
    n_per_class: int
    dim: int = 2
    separation: float = 6.0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ParameterError("n_per_class must be positive")
        if self.dim < 1:
            raise ParameterError("dim must be positive")
        if self.separation < 0:
            raise ParameterError("separation must be nonnegative")


def make_synthetic(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Two isotropic unit-variance Gaussian clouds along the first axis.

    Class 0 is centered at -separation/2 * e1, class 1 at +separation/2 * e1.
    Returns (X, y) with X of shape (2*n_per_class, dim) and y in {0, 1}.
    """
    rng = np.random.default_rng([spec.seed, 0])
    n = spec.n_per_class
    x = rng.standard_normal((2 * n, spec.dim))
    x[:n, 0] -= spec.separation / 2.0
    x[n:, 0] += spec.separation / 2.0
    y = np.concatenate([np.zeros(n), np.ones(n)])
    return x, y


def init_mlp_params(dim: int, seed: int) -> dict[str, np.ndarray]:
    """Seeded initialization for the fixed dim -> 8 -> 1 classifier."""
    rng = np.random.default_rng([seed, 1])
    return {
        "w1": rng.standard_normal((HIDDEN_UNITS, dim)) / math.sqrt(dim),
        "b1": np.zeros(HIDDEN_UNITS),
        "w2": rng.standard_normal(HIDDEN_UNITS) / math.sqrt(HIDDEN_UNITS),
        "b2": np.zeros(1),
    }


def tiny_mlp_forward_backward(params: dict, x, y) -> tuple[float, dict]:
    """Loss and analytic gradients of the dim -> 8 -> 1 classifier.

    Hidden activation is x*sigmoid(x), output is a sigmoid probability, and
    the loss is the mean binary cross entropy of the batch.  Gradients are
    hand-derived backprop, verified elsewhere against central differences.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"batch shapes incompatible: x {x.shape}, y {y.shape}")
    w1, b1, w2, b2 = params["w1"], params["b1"], params["w2"], params["b2"]
    if w1.shape[1] != x.shape[1]:
        raise ShapeError(f"input dim {x.shape[1]} != weight dim {w1.shape[1]}")
    batch = x.shape[0]

    z1 = x @ w1.T + b1                      # (B, H)
    s1 = _sigmoid(z1)
    h = z1 * s1                             # silu
    z2 = h @ w2 + b2[0]                     # (B,)
    p = _sigmoid(z2)
    loss, _ = bce_loss(p, y)

    dz2 = (p - y) / batch                   # d(mean bce)/dz2 through the sigmoid
    dh = np.outer(dz2, w2)
    dz1 = dh * (s1 * (1.0 + z1 * (1.0 - s1)))
    grads = {
        "w1": dz1.T @ x,
        "b1": dz1.sum(axis=0),
        "w2": h.T @ dz2,
        "b2": np.array([dz2.sum()]),
    }
    return loss, grads


def mlp_predict_proba(params: dict, x) -> np.ndarray:
    """Forward pass only; probability of class 1 per row."""
    z1 = np.asarray(x, dtype=float) @ params["w1"].T + params["b1"]
    h = z1 * _sigmoid(z1)
    return _sigmoid(h @ params["w2"] + params["b2"][0])


def _quadratic(x):
    return 0.5 * float(x @ x)


def _quadratic_grad(x):
    return x.copy()


def _rosenbrock(x):
    return float((1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2)


def _rosenbrock_grad(x):
    return np.array([
        -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] ** 2),
        200.0 * (x[1] - x[0] ** 2),
    ])


def _check_optimizer(opt: str) -> None:
    if opt not in OPTIMIZERS:
        raise ParameterError(f"unknown optimizer {opt!r}; expected one of {OPTIMIZERS}")


def _apply_update(opt: str, state: OptimState, params: np.ndarray, grad: np.ndarray,
                  hp: HyperParams) -> np.ndarray:
    if opt == "rmsprop":
        return params + rmsprop_delta(state, grad, hp)
    if opt == "adamw":
        return params + adamw_delta(state, params, grad, hp)
    return awdr_step(state, params, grad, hp)


@dataclass
class Trajectory:
    """Per-step objective values of one benchmark run."""

    function: str
    optimizer: str
    seed: int
    losses: list[float]
    final_x: np.ndarray
    diverged: bool = False

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    @property
    def best_loss(self) -> float:
        return min(self.losses)

    def reached(self, target: float) -> bool:
        """Whether the run attained a loss below target at any step."""
        return self.best_loss < target


def bench_function(fn: str, opt: str, hp: HyperParams, x0, steps: int) -> Trajectory:
    """Minimize an analytic test function and record f(x_k) per step.

    losses[0] is the starting value, losses[k] the value after the k-th
    update.  The blend schedule treats each step as one epoch with the
    horizon bound to the run length.  A non-finite objective flags the run
    as diverged and stops, keeping the partial history.
    """
    if fn not in FUNCTIONS:
        raise ParameterError(f"unknown function {fn!r}; expected one of {FUNCTIONS}")
    _check_optimizer(opt)
    if steps < 1:
        raise ParameterError("steps must be positive")
    x = np.asarray(x0, dtype=float).copy()
    if fn == "rosenbrock" and x.shape != (2,):
        raise ShapeError(f"rosenbrock needs a 2-vector start, got shape {x.shape}")
    f, g = (_quadratic, _quadratic_grad) if fn == "quadratic" else (_rosenbrock, _rosenbrock_grad)

    hp_run = replace(hp, horizon_T=steps)
    state = OptimState.zeros(x.shape)
    losses = [f(x)]
    diverged = not math.isfinite(losses[0])
    if not diverged:
        for k in range(steps):
            state.epoch = k
            grad = g(x)
            if not np.all(np.isfinite(grad)):
                diverged = True
                break
            x = _apply_update(opt, state, x, grad, hp_run)
            val = f(x)
            losses.append(val)
            if not math.isfinite(val):
                diverged = True
                break
    return Trajectory(function=fn, optimizer=opt, seed=0, losses=losses, final_x=x,
                      diverged=diverged)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    beta_t: float
    lr: float


@dataclass
class TrainHistory:
    """Per-epoch training records plus the terminal summary."""

    optimizer: str
    seed: int
    records: list[EpochRecord] = field(default_factory=list)
    final_loss: float | None = None
    final_accuracy: float | None = None
    epochs_to_target: int | None = None
    diverged: bool = False


def train_toy(opt: str, hp: HyperParams, spec: SyntheticSpec, epochs: int,
              batch_size: int, target_accuracy: float = 0.95) -> TrainHistory:
    """Train the tiny classifier on the synthetic task.

    Mini-batch order is a seeded shuffle per epoch; the blend horizon is
    bound to the epoch count, and the schedule advances once per epoch.
    The recorded beta_t column is the schedule value blend_coefficient(t)
    for every optimizer. Only awdr consumes it.  train_loss and
    train_accuracy are full-dataset evaluations at the end of each epoch.
    Divergence (non-finite loss) flags the history and stops training.
    """
    _check_optimizer(opt)
    if epochs < 1 or batch_size < 1:
        raise ParameterError("epochs and batch_size must be positive")
    hp_run = replace(hp, horizon_T=epochs)
    x, y = make_synthetic(spec)
    params = init_mlp_params(spec.dim, spec.seed)
    states = {k: OptimState.zeros(v.shape) for k, v in params.items()}
    shuffle_rng = np.random.default_rng([spec.seed, 2])

    history = TrainHistory(optimizer=opt, seed=spec.seed)
    n = x.shape[0]
    for epoch in range(epochs):
        for st in states.values():
            st.epoch = epoch
        order = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, grads = tiny_mlp_forward_backward(params, x[idx], y[idx])
            if not math.isfinite(loss):
                history.diverged = True
                break
            params = {k: _apply_update(opt, states[k], params[k], grads[k], hp_run)
                      for k in params}
        if history.diverged:
            break
        full_loss, _ = bce_loss(mlp_predict_proba(params, x), y)
        accuracy = float(np.mean((mlp_predict_proba(params, x) >= 0.5) == (y == 1.0)))
        history.records.append(EpochRecord(
            epoch=epoch,
            train_loss=full_loss,
            train_accuracy=accuracy,
            beta_t=blend_coefficient(epoch, hp_run),
            lr=hp_run.lr,
        ))
        if history.epochs_to_target is None and accuracy >= target_accuracy:
            history.epochs_to_target = epoch

    if history.records:
        history.final_loss = history.records[-1].train_loss
        history.final_accuracy = history.records[-1].train_accuracy
    return history
