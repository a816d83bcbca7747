"""Adaptive gradient optimizers: RMSProp, AdamW, and the AWDR blend.

AWDR runs an RMSProp branch and an AdamW branch side by side on the same
incoming gradient, each with its own accumulator state, and mixes their
parameter deltas with a coefficient that decays linearly over training:

    beta(t) = beta0 * (1 - t / T)
    new_params = params + beta(t) * delta_rms + (1 - beta(t)) * delta_adamw

where t is the current epoch and T the training horizon. With beta0 = 1 a
step at t = 0 is exactly an RMSProp step and a step at t = T is exactly an
AdamW step, so the optimizer slides from variance-smoothed updates early in
training to decoupled-weight-decay updates late.  Weight decay lives only in
the AdamW branch, so its effective strength ramps up with 1 - beta(t).

The branch rules are the standard ones:

    RMSProp:  v <- a*v + (1-a)*g^2;          delta = -lr * g / (sqrt(v) + eps)
    AdamW:    m <- b1*m + (1-b1)*g
              v <- b2*v + (1-b2)*g^2
              m_hat = m / (1 - b1^t),  v_hat = v / (1 - b2^t)
              delta = -lr * (m_hat / (sqrt(v_hat) + eps) + wd * params)

The RMSProp denominator is sqrt(v) + eps, not sqrt(v + eps); test vectors
lock this choice in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import NonFiniteInputError, ParameterError, RangeError, ShapeError


@dataclass(frozen=True)
class HyperParams:
    """Step size, decay rates, and blend schedule shared by all optimizers.

    beta0 is the blend initialization (the t = 0 value of beta(t)) and
    horizon_T the epoch count over which the blend decays to zero.
    """

    lr: float = 1e-3
    rms_decay: float = 0.99
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    beta0: float = 1.0
    horizon_T: int = 100

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        for name in ("rms_decay", "beta1", "beta2"):
            val = getattr(self, name)
            if not 0.0 < val < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1), got {val}")
        if not self.eps > 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if not 0.0 <= self.beta0 <= 1.0:
            raise ParameterError(f"beta0 must lie in [0, 1], got {self.beta0}")
        if not (isinstance(self.horizon_T, int) and self.horizon_T >= 1):
            raise ParameterError(f"horizon_T must be a positive integer, got {self.horizon_T!r}")

    @classmethod
    def from_json(cls, obj) -> "HyperParams":
        """Build from a JSON object keyed by exact field names.

        Missing fields take their defaults; unknown fields are rejected.
        """
        if not isinstance(obj, dict):
            raise ParameterError(f"hyperparameter object must be a JSON object, got {type(obj).__name__}")
        allowed = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - allowed)
        if unknown:
            raise ParameterError(f"unknown hyperparameter fields: {', '.join(unknown)}")
        return cls(**obj)


@dataclass
class OptimState:
    """Per-parameter accumulators for both optimizer branches.

    rms_acc is the RMSProp squared-gradient accumulator; adam_m/adam_v the
    AdamW moment estimates; step counts AdamW-branch updates (for bias
    correction); epoch is the blend-schedule clock, advanced by the caller.
    """

    rms_acc: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step: int = 0
    epoch: int = 0

    @classmethod
    def zeros(cls, shape) -> "OptimState":
        """Fresh state for a parameter tensor of the given shape."""
        return cls(
            rms_acc=np.zeros(shape, dtype=float),
            adam_m=np.zeros(shape, dtype=float),
            adam_v=np.zeros(shape, dtype=float),
        )


def blend_coefficient(t: int, hp: HyperParams) -> float:
    """Blend weight beta(t) = beta0 * (1 - t/T), clamped to 0 for t > T.

    Exactly beta0 at t = 0 and exactly 0.0 at t = T; affine and
    nonincreasing in between.
    """
    if t < 0:
        raise RangeError(f"epoch must be nonnegative, got {t}")
    t_eff = min(t, hp.horizon_T)
    return hp.beta0 * (1.0 - t_eff / hp.horizon_T)


def _check_shape(name: str, arr: np.ndarray, expected: tuple) -> None:
    if arr.shape != expected:
        raise ShapeError(f"{name} shape {arr.shape} does not match state shape {expected}")


def rmsprop_delta(state: OptimState, grad, hp: HyperParams) -> np.ndarray:
    """One RMSProp parameter delta; mutates only state.rms_acc.

    Accumulates v <- rms_decay*v + (1-rms_decay)*grad^2 and returns
    -lr * grad / (sqrt(v) + eps).  Does not read parameter values.
    """
    grad = np.asarray(grad, dtype=float)
    _check_shape("grad", grad, state.rms_acc.shape)
    state.rms_acc *= hp.rms_decay
    state.rms_acc += (1.0 - hp.rms_decay) * np.square(grad)
    return -hp.lr * grad / (np.sqrt(state.rms_acc) + hp.eps)


def adamw_delta(state: OptimState, params, grad, hp: HyperParams) -> np.ndarray:
    """One AdamW parameter delta; mutates adam_m, adam_v, and step.

    Weight decay is decoupled: it scales the current parameters directly and
    never enters the moment accumulators, so with weight_decay = 0 the
    accumulators are independent of parameter values.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    _check_shape("grad", grad, state.adam_m.shape)
    _check_shape("params", params, state.adam_m.shape)
    state.step += 1
    t = state.step
    state.adam_m *= hp.beta1
    state.adam_m += (1.0 - hp.beta1) * grad
    state.adam_v *= hp.beta2
    state.adam_v += (1.0 - hp.beta2) * np.square(grad)
    m_hat = state.adam_m / (1.0 - hp.beta1 ** t)
    v_hat = state.adam_v / (1.0 - hp.beta2 ** t)
    return -hp.lr * (m_hat / (np.sqrt(v_hat) + hp.eps) + hp.weight_decay * params)


def awdr_step(state: OptimState, params, grad, hp: HyperParams) -> np.ndarray:
    """One AWDR update; returns the new parameters.

    Both branches see the same raw gradient and advance their own
    accumulators every step.  The returned parameters are
    params + beta*delta_rms + (1-beta)*delta_adamw with
    beta = blend_coefficient(state.epoch, hp); the endpoint cases beta = 1
    and beta = 0 take the single-branch sum so the result is bit-identical
    to a standalone RMSProp or AdamW step.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    _check_shape("grad", grad, state.rms_acc.shape)
    _check_shape("params", params, state.rms_acc.shape)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteInputError("gradient contains non-finite values")
    beta = blend_coefficient(state.epoch, hp)
    d_rms = rmsprop_delta(state, grad, hp)
    d_adamw = adamw_delta(state, params, grad, hp)
    if beta == 1.0:
        return params + d_rms
    if beta == 0.0:
        return params + d_adamw
    return params + beta * d_rms + (1.0 - beta) * d_adamw


def one_cycle_lr(
    step: int,
    total_steps: int,
    lr_max: float,
    pct_start: float = 0.3,
    lr_start_div: float = 25.0,
    lr_final_div: float = 1e4,
) -> float:
    """One-cycle learning rate: linear warmup, then cosine decay.

    Starts at lr_max/lr_start_div, peaks at exactly lr_max at
    step = round(pct_start * total_steps), and decays along a half cosine to
    lr_max/lr_final_div at total_steps.  The peak step is clamped to
    [1, total_steps - 1] so both endpoints stay well defined.
    """
    if total_steps < 1:
        raise ParameterError(f"total_steps must be positive, got {total_steps}")
    if lr_max <= 0:
        raise ParameterError(f"lr_max must be positive, got {lr_max}")
    if not 0.0 < pct_start < 1.0:
        raise ParameterError(f"pct_start must lie in (0, 1), got {pct_start}")
    if lr_start_div <= 0 or lr_final_div <= 0:
        raise ParameterError("division factors must be positive")
    if not 0 <= step <= total_steps:
        raise RangeError(f"step {step} outside [0, {total_steps}]")

    peak = round(pct_start * total_steps)
    peak = max(1, min(peak, max(total_steps - 1, 1)))
    lr_start = lr_max / lr_start_div
    lr_final = lr_max / lr_final_div
    if step == peak:
        return lr_max
    if step < peak:
        return lr_start + (lr_max - lr_start) * (step / peak)
    if step == total_steps:
        return lr_final
    frac = (step - peak) / (total_steps - peak)
    return lr_final + (lr_max - lr_final) * 0.5 * (1.0 + math.cos(math.pi * frac))
