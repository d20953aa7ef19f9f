"""Parameter estimation and candidate scoring.

Each accepted skeleton is fitted by Adam with a cosine-annealed learning rate
against its target columns; the loss is the mean squared residual over
samples and targets, and the score is the negated loss.  Several restarts
from random initial points hedge against non-convex landscapes; the best
(lowest-loss) restart wins.  A domain fault anywhere during fitting poisons
the whole candidate: it keeps its metadata but gets the sentinel worst score
and is never used as an in-context example.

Fitting is pure given (inputs, seed): the same call produces bit-identical
parameters and score, so candidates can be fitted in parallel as long as the
caller derives a distinct seed per candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .dsl import Skeleton, serialize
from .evaluator import MissingColumn, SampleBatch, evaluate

SENTINEL_SCORE = -1.0e9


@dataclass(frozen=True)
class FitConfig:
    steps: int = 2000
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    restarts: int = 3
    init_low: float = -1.0
    init_high: float = 1.0
    seed: int = 0
    record_trace: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass(frozen=True)
class Requirement:
    """A variable the generator asked for, to be matched against the catalog."""

    name: str
    justification: str = ""
    kind_hint: str = ""


@dataclass(frozen=True)
class ScoredSkeleton:
    skeleton: Skeleton
    params: np.ndarray
    score: float
    restart_losses: tuple[float, ...] = ()
    loss_trace: tuple[float, ...] | None = None
    requirements: tuple[Requirement, ...] = ()

    @property
    def canonical(self) -> str:
        return serialize(self.skeleton)

    @property
    def poisoned(self) -> bool:
        return self.score <= SENTINEL_SCORE


def cosine_lr(step: int, lr0: float, total_steps: int) -> float:
    """lr(0) = lr0, lr(total_steps) = 0, half-cosine in between."""
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


def score_of(loss: float) -> float:
    """Score is the negated loss; anything non-finite maps to the sentinel."""
    if not math.isfinite(loss):
        return SENTINEL_SCORE
    return -loss


def _loss_and_grad(skeleton: Skeleton, params: np.ndarray, batch: SampleBatch,
                   targets: np.ndarray):
    res = evaluate(skeleton, params, batch)
    if res.faulted:
        return None, None
    residual = res.outputs - targets
    loss = float(np.mean(residual * residual))
    scale = 2.0 / residual.size
    grad = scale * np.einsum("ts,tsk->k", residual, res.gradients)
    return loss, grad


def _final_loss(skeleton: Skeleton, params: np.ndarray, batch: SampleBatch,
                targets: np.ndarray) -> float | None:
    res = evaluate(skeleton, params, batch)
    if res.faulted:
        return None
    residual = res.outputs - targets
    return float(np.mean(residual * residual))


def _poisoned(skeleton: Skeleton, requirements) -> ScoredSkeleton:
    params = np.zeros(skeleton.n_params)
    params.setflags(write=False)
    return ScoredSkeleton(skeleton=skeleton, params=params, score=SENTINEL_SCORE,
                          requirements=tuple(requirements))


def fit_and_score(skeleton: Skeleton, batch: SampleBatch, target_columns: Sequence[str],
                  cfg: FitConfig, requirements: Sequence[Requirement] = ()) -> ScoredSkeleton:
    """Fit parameter slots against the named target columns and score the fit.

    target_columns are ordered like skeleton.target_names: state-derivative
    columns for differential systems, recorded variable columns for algebraic
    ones.
    """
    if len(target_columns) != len(skeleton.target_names):
        raise ValueError("one target column per skeleton target required")
    try:
        targets = np.stack([batch.column(c) for c in target_columns])
    except MissingColumn:
        raise
    if skeleton.n_params == 0:
        loss = _final_loss(skeleton, np.zeros(0), batch, targets)
        if loss is None:
            return _poisoned(skeleton, requirements)
        params = np.zeros(0)
        params.setflags(write=False)
        return ScoredSkeleton(skeleton=skeleton, params=params, score=score_of(loss),
                              restart_losses=(loss,), requirements=tuple(requirements))

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    best_params: np.ndarray | None = None
    best_loss = math.inf
    best_trace: tuple[float, ...] | None = None
    restart_losses: list[float] = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        p = rng.uniform(cfg.init_low, cfg.init_high, skeleton.n_params)
        m = np.zeros_like(p)
        v = np.zeros_like(p)
        trace: list[float] = []
        for t in range(cfg.steps):
            loss, grad = _loss_and_grad(skeleton, p, batch, targets)
            if loss is None or not math.isfinite(loss):
                return _poisoned(skeleton, requirements)
            if cfg.record_trace:
                trace.append(loss)
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
            m_hat = m / (1.0 - cfg.beta1 ** (t + 1))
            v_hat = v / (1.0 - cfg.beta2 ** (t + 1))
            p = p - cosine_lr(t, cfg.learning_rate, cfg.steps) * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        loss = _final_loss(skeleton, p, batch, targets)
        if loss is None or not math.isfinite(loss):
            return _poisoned(skeleton, requirements)
        restart_losses.append(loss)
        if loss < best_loss:
            best_loss = loss
            best_params = p
            best_trace = tuple(trace) if cfg.record_trace else None
    best_params.setflags(write=False)
    return ScoredSkeleton(skeleton=skeleton, params=best_params, score=score_of(best_loss),
                          restart_losses=tuple(restart_losses), loss_trace=best_trace,
                          requirements=tuple(requirements))


def derived_fit_config(cfg: FitConfig, *entropy: int) -> FitConfig:
    """Same settings, new deterministic seed from an entropy chain."""
    seed = int(np.random.SeedSequence((cfg.seed,) + entropy).generate_state(1)[0])
    return replace(cfg, seed=seed)
