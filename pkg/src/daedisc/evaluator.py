"""Skeleton evaluation with exact reverse-mode gradients.

Evaluates every target expression of a skeleton over a column batch and
returns per-sample outputs together with the exact partial derivatives with
respect to each parameter slot.  Domain violations (log of a non-positive
argument, near-zero divisors, any non-finite intermediate) poison the whole
evaluation: the result carries a fault record instead of numbers.

Gradients are produced per sample, not pre-reduced, so callers can apply any
loss weighting they like.  All inputs are immutable and evaluation is pure;
batches can be sharded across workers and the results concatenated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dsl import Bin, Call, Const, Expr, Neg, Param, Pow, Skeleton, Var, variables_in

DIV_GUARD = 1e-12


class MissingColumn(KeyError):
    """A referenced variable has no column in the batch (caller bug)."""


class DomainFault(RuntimeError):
    """Raised by gradient_check when the evaluation domain is violated."""

    def __init__(self, info: "FaultInfo"):
        super().__init__(f"domain fault at sample {info.sample_index}: {info.reason}")
        self.info = info


@dataclass(frozen=True)
class FaultInfo:
    sample_index: int
    reason: str


@dataclass(frozen=True)
class SampleBatch:
    """Column-oriented sample set; all columns share one length, all finite."""

    columns: Mapping[str, np.ndarray]
    n_samples: int

    @classmethod
    def from_columns(cls, columns: Mapping[str, Sequence[float]]) -> "SampleBatch":
        locked: dict[str, np.ndarray] = {}
        n = None
        for name, values in columns.items():
            arr = np.array(values, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError(f"column {name!r} must be one-dimensional")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise ValueError(f"column {name!r} length {arr.shape[0]} != {n}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"column {name!r} contains non-finite values")
            arr.setflags(write=False)
            locked[name] = arr
        if n is None:
            raise ValueError("batch needs at least one column")
        return cls(columns=locked, n_samples=int(n))

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise MissingColumn(name) from None


def concat_batches(a: SampleBatch, b: SampleBatch) -> SampleBatch:
    if set(a.columns) != set(b.columns):
        raise ValueError("batches must share the same columns")
    return SampleBatch.from_columns(
        {name: np.concatenate([a.columns[name], b.columns[name]]) for name in a.columns})


@dataclass(frozen=True)
class EvalResult:
    """Outputs (n_targets, n_samples); gradients (n_targets, n_samples, n_params)."""

    outputs: np.ndarray | None
    gradients: np.ndarray | None
    domain_fault: FaultInfo | None = None

    @property
    def faulted(self) -> bool:
        return self.domain_fault is not None


class _Fault(Exception):
    def __init__(self, sample_index: int, reason: str):
        self.info = FaultInfo(sample_index=sample_index, reason=reason)


def _first_bad(mask: np.ndarray) -> int:
    return int(np.argmax(mask))


def _check_finite(values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        raise _Fault(_first_bad(bad), f"non-finite {what}")


def _forward(node: Expr, batch: SampleBatch, params: np.ndarray, n: int,
             values: dict[int, np.ndarray]) -> np.ndarray:
    if isinstance(node, Const):
        out = np.full(n, node.value)
    elif isinstance(node, Param):
        out = np.full(n, params[node.index])
    elif isinstance(node, Var):
        out = batch.column(node.name)
    elif isinstance(node, Neg):
        out = -_forward(node.child, batch, params, n, values)
    elif isinstance(node, Bin):
        left = _forward(node.left, batch, params, n, values)
        right = _forward(node.right, batch, params, n, values)
        if node.op == "+":
            out = left + right
        elif node.op == "-":
            out = left - right
        elif node.op == "*":
            out = left * right
        else:
            small = np.abs(right) < DIV_GUARD
            if small.any():
                raise _Fault(_first_bad(small), "division by near-zero denominator")
            out = left / right
    elif isinstance(node, Pow):
        base = _forward(node.base, batch, params, n, values)
        if node.exponent < 0:
            small = np.abs(base) < DIV_GUARD
            if small.any():
                raise _Fault(_first_bad(small), "negative power of near-zero base")
        out = base ** float(node.exponent)
    elif isinstance(node, Call):
        arg = _forward(node.arg, batch, params, n, values)
        if node.func == "log":
            bad = arg <= 0.0
            if bad.any():
                raise _Fault(_first_bad(bad), "log of non-positive argument")
            out = np.log(arg)
        elif node.func == "sqrt":
            bad = arg < 0.0
            if bad.any():
                raise _Fault(_first_bad(bad), "sqrt of negative argument")
            out = np.sqrt(arg)
        else:
            out = getattr(np, node.func if node.func != "abs" else "abs")(arg)
    else:
        raise TypeError(f"not an expression node: {node!r}")
    _check_finite(out, "value")
    values[id(node)] = out
    return out


def _backward(node: Expr, adj: np.ndarray, values: dict[int, np.ndarray],
              grad: np.ndarray) -> None:
    """Propagate per-sample adjoints; accumulate into grad (n_params, n_samples)."""
    if isinstance(node, Const) or isinstance(node, Var):
        return
    if isinstance(node, Param):
        grad[node.index] += adj
        return
    if isinstance(node, Neg):
        _backward(node.child, -adj, values, grad)
        return
    if isinstance(node, Bin):
        left_v = values[id(node.left)]
        right_v = values[id(node.right)]
        if node.op == "+":
            _backward(node.left, adj, values, grad)
            _backward(node.right, adj, values, grad)
        elif node.op == "-":
            _backward(node.left, adj, values, grad)
            _backward(node.right, -adj, values, grad)
        elif node.op == "*":
            _backward(node.left, adj * right_v, values, grad)
            _backward(node.right, adj * left_v, values, grad)
        else:
            _backward(node.left, adj / right_v, values, grad)
            _backward(node.right, -adj * left_v / (right_v * right_v), values, grad)
        return
    if isinstance(node, Pow):
        base_v = values[id(node.base)]
        e = node.exponent
        if e == 0:
            return
        _backward(node.base, adj * e * base_v ** float(e - 1), values, grad)
        return
    if isinstance(node, Call):
        arg_v = values[id(node.arg)]
        out_v = values[id(node)]
        f = node.func
        if f == "sin":
            d = np.cos(arg_v)
        elif f == "cos":
            d = -np.sin(arg_v)
        elif f == "tan":
            d = 1.0 + out_v * out_v
        elif f == "exp":
            d = out_v
        elif f == "log":
            d = 1.0 / arg_v
        elif f == "sqrt":
            d = 0.5 / out_v
        elif f == "tanh":
            d = 1.0 - out_v * out_v
        else:  # abs; subgradient 0 at the kink
            d = np.sign(arg_v)
        _backward(node.arg, adj * d, values, grad)
        return
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(skeleton: Skeleton, params: Sequence[float], batch: SampleBatch) -> EvalResult:
    """Evaluate all targets; exact per-sample parameter gradients alongside."""
    p = np.asarray(params, dtype=np.float64)
    if p.shape != (skeleton.n_params,):
        raise ValueError(f"expected {skeleton.n_params} parameters, got shape {p.shape}")
    for name in variables_in(skeleton):
        if name not in batch.columns:
            raise MissingColumn(name)
    n = batch.n_samples
    n_t = len(skeleton.expressions)
    outputs = np.empty((n_t, n))
    gradients = np.zeros((n_t, n, skeleton.n_params))
    ones = np.ones(n)
    try:
        with np.errstate(all="ignore"):  # non-finite results become faults below
            for t, expr in enumerate(skeleton.expressions):
                values: dict[int, np.ndarray] = {}
                outputs[t] = _forward(expr, batch, p, n, values)
                if skeleton.n_params:
                    g = np.zeros((skeleton.n_params, n))
                    _backward(expr, ones, values, g)
                    bad = ~np.isfinite(g)
                    if bad.any():
                        raise _Fault(int(np.argmax(bad.any(axis=0))), "non-finite gradient")
                    gradients[t] = g.T
    except _Fault as fault:
        return EvalResult(outputs=None, gradients=None, domain_fault=fault.info)
    return EvalResult(outputs=outputs, gradients=gradients)


def gradient_check(skeleton: Skeleton, params: Sequence[float], batch: SampleBatch) -> float:
    """Max relative mismatch between reverse-mode and central differences.

    The denominator is floored at 1 so the measure stays meaningful where the
    true gradient vanishes.  Raises DomainFault if any evaluation in the
    stencil neighbourhood violates the domain.
    """
    p = np.asarray(params, dtype=np.float64)
    base = evaluate(skeleton, p, batch)
    if base.faulted:
        raise DomainFault(base.domain_fault)
    worst = 0.0
    for k in range(skeleton.n_params):
        h = 1e-6 * max(1.0, abs(p[k]))
        plus, minus = p.copy(), p.copy()
        plus[k] += h
        minus[k] -= h
        up = evaluate(skeleton, plus, batch)
        down = evaluate(skeleton, minus, batch)
        if up.faulted:
            raise DomainFault(up.domain_fault)
        if down.faulted:
            raise DomainFault(down.domain_fault)
        fd = (up.outputs - down.outputs) / (2.0 * h)
        ad = base.gradients[:, :, k]
        denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(ad)))
        worst = max(worst, float(np.max(np.abs(ad - fd) / denom)))
    return worst
