from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from amtl.autograd import Tensor
from amtl.errors import ConfigError, NonFiniteGradientError


@dataclass
class ScheduleConfig:
    peak_lr: float = 0.0004
    warmup_steps: int = 1000
    hold_steps: int = 10000
    decay_steps: int = 10000
    init_scale: float = 0.0
    floor_scale: float = 0.05

    def __post_init__(self):
        if min(self.warmup_steps, self.hold_steps, self.decay_steps) < 0:
            raise ConfigError("schedule step counts must be >= 0")
        if not (0.0 <= self.init_scale <= 1.0 and 0.0 <= self.floor_scale <= 1.0):
            raise ConfigError("schedule scales must lie in [0, 1]")
        if self.peak_lr < 0:
            raise ConfigError("peak_lr must be >= 0")


def tri_stage_lr(step: int, cfg: ScheduleConfig) -> float:
    """Linear warmup from init_scale*peak, hold at peak, linear decay to floor_scale*peak."""
    if step < 0:
        raise ValueError("step must be >= 0")
    peak = cfg.peak_lr
    if step < cfg.warmup_steps:
        start = cfg.init_scale * peak
        return start + (peak - start) * step / cfg.warmup_steps
    step -= cfg.warmup_steps
    if step < cfg.hold_steps:
        return peak
    step -= cfg.hold_steps
    floor = cfg.floor_scale * peak
    if step < cfg.decay_steps:
        return peak + (floor - peak) * step / cfg.decay_steps
    return floor


@dataclass
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(sq)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(scale)
    return norm


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float, cfg: AdamConfig | None = None, skip=()) -> AdamState:
    """One bias-corrected Adam update, in place. Missing gradients count as zero.

    Raises NonFiniteGradientError naming the first offending tensor before
    touching any parameter.
    """
    cfg = cfg or AdamConfig()
    for name, p in params.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NonFiniteGradientError(f"non-finite gradient in {name}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        if name in skip:
            continue
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        dt = p.data.dtype.type
        m = dt(cfg.beta1) * m + dt(1.0 - cfg.beta1) * g
        v = dt(cfg.beta2) * v + dt(1.0 - cfg.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        update = (m / dt(bc1)) / (np.sqrt(v / dt(bc2)) + dt(cfg.eps))
        p.data = p.data - dt(lr) * update
    return state
