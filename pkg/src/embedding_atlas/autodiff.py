"""Tape-based reverse-mode differentiation for the toy transformer.

Model code is written against the primitives in this module (``matmul``,
``add``, ``softmax_rows``, ...). Called on plain arrays they just compute;
called on a :class:`Var` they also append a node to the Var's tape. Both
paths run the same numpy expression, so a recorded forward pass is
bitwise identical to an unrecorded one.

Only gradients with respect to the recorded input are produced. Weights
enter as constants.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import LN_EPS, DimensionError, as_tensor


class CapabilityError(TypeError):
    """A model function used an operation the tape cannot differentiate."""


@dataclass
class Node:
    op: str
    inputs: tuple  # slot index per operand, None for constants
    out: int
    backward: Callable


@dataclass
class Tape:
    nodes: list = field(default_factory=list)
    n_slots: int = 1  # slot 0 is the recorded input
    input_shape: tuple = ()
    output_slot: int | None = None
    output_shape: tuple = ()

    def __len__(self):
        return len(self.nodes)

    def new_slot(self) -> int:
        self.n_slots += 1
        return self.n_slots - 1


class Var:
    """A value on a tape. Supports only the primitives defined here."""

    __slots__ = ("value", "tape", "slot")
    __array_priority__ = 1000

    def __init__(self, value, tape, slot):
        self.value = value
        self.tape = tape
        self.slot = slot

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __mul__(self, other):
        if isinstance(other, Var):
            raise CapabilityError("elementwise product of two traced values is not a supported primitive")
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def __array_ufunc__(self, ufunc, method, *args, **kwargs):
        # lets `ndarray @ Var` and `ndarray + Var` reach the traced primitives
        if method == "__call__" and not kwargs and len(args) == 2:
            if ufunc is np.matmul:
                return matmul(*args)
            if ufunc is np.add:
                return add(*args)
            if ufunc is np.multiply and not all(isinstance(a, Var) for a in args):
                other = args[0] if isinstance(args[1], Var) else args[1]
                if np.ndim(other) == 0:
                    return scale(args[0] if isinstance(args[0], Var) else args[1], other)
        raise CapabilityError(f"numpy ufunc {ufunc.__name__!r} is not a supported primitive")

    def __array_function__(self, func, types, args, kwargs):
        raise CapabilityError(f"numpy function {func.__name__!r} is not a supported primitive")

    def __array__(self, *args, **kwargs):
        raise CapabilityError("traced values cannot be converted to plain arrays")

    def __repr__(self):
        return f"Var(shape={self.shape}, slot={self.slot})"


def _value(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*operands):
    tape = None
    for x in operands:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise CapabilityError("operands recorded on different tapes")
            tape = x.tape
    return tape


def _emit(op, operands, value, backward):
    tape = _tape_of(*operands)
    if tape is None:
        return value
    slots = tuple(x.slot if isinstance(x, Var) else None for x in operands)
    out = tape.new_slot()
    tape.nodes.append(Node(op, slots, out, backward))
    return Var(value, tape, out)


# -- primitives ----------------------------------------------------------------

def add(a, b):
    va, vb = _value(a), _value(b)
    if np.shape(va) != np.shape(vb):
        raise DimensionError(f"add: shapes {np.shape(va)} and {np.shape(vb)} differ")
    return _emit("add", (a, b), va + vb, lambda g: (g, g))


def scale(a, c):
    c = float(c)
    return _emit("scale", (a,), c * _value(a), lambda g: (c * g,))


def matmul(a, b):
    va, vb = _value(a), _value(b)
    if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {va.shape} by {vb.shape}")

    def backward(g):
        ga = g @ vb.T if isinstance(a, Var) else None
        gb = va.T @ g if isinstance(b, Var) else None
        return ga, gb

    return _emit("matmul", (a, b), va @ vb, backward)


def transpose(a, axes=None):
    va = _value(a)
    if axes is None:
        axes = tuple(reversed(range(va.ndim)))
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", (a,), np.ascontiguousarray(va.transpose(axes)),
                 lambda g: (g.transpose(inverse),))


def reshape(a, shape):
    va = _value(a)
    in_shape = va.shape
    return _emit("reshape", (a,), va.reshape(shape), lambda g: (g.reshape(in_shape),))


def take(a, key):
    """Basic (slice/integer) indexing."""
    va = _value(a)

    def backward(g):
        full = np.zeros_like(va)
        full[key] = g
        return (full,)

    return _emit("slice", (a,), np.ascontiguousarray(va[key]), backward)


def relu(a):
    va = _value(a)
    mask = va > 0  # subgradient 0 at the kink
    return _emit("relu", (a,), np.where(mask, va, 0.0), lambda g: (g * mask,))


def softmax_rows(a):
    va = _value(a)
    e = np.exp(va - va.max(axis=-1, keepdims=True))
    s = e / e.sum(axis=-1, keepdims=True)
    return _emit("softmax_rows", (a,), s,
                 lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def layer_norm(a, gamma, beta, eps=LN_EPS):
    va = _value(a)
    mu = va.mean(axis=-1, keepdims=True)
    xc = va - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = xc / sigma

    def backward(g):
        gh = g * gamma
        return ((gh - gh.mean(axis=-1, keepdims=True)
                 - xhat * (gh * xhat).mean(axis=-1, keepdims=True)) / sigma,)

    return _emit("layer_norm", (a,), gamma * xhat + beta, backward)


def mean_rows(a):
    """Mean over the leading (token) axis."""
    va = _value(a)
    count = va.shape[0]
    return _emit("mean_pool", (a,), va.mean(axis=0),
                 lambda g: (np.broadcast_to(g / count, va.shape),))


# -- tape driving --------------------------------------------------------------

def record(model_fn, x):
    """Run ``model_fn`` on ``x`` while recording. Returns ``(y, tape)``."""
    x = as_tensor(x)
    tape = Tape(input_shape=x.shape)
    y = model_fn(Var(x, tape, 0))
    if isinstance(y, Var):
        tape.output_slot = y.slot
        y = y.value
    else:
        # output does not depend on x
        y = as_tensor(y)
    tape.output_shape = y.shape
    return y, tape


def vjp(tape: Tape, cotangent):
    """Pull ``cotangent`` back through the tape: returns ``J^T c``."""
    cotangent = as_tensor(cotangent)
    if cotangent.shape != tape.output_shape:
        raise DimensionError(
            f"cotangent shape {cotangent.shape} does not match output {tape.output_shape}")
    if tape.output_slot is None:
        return np.zeros(tape.input_shape)
    adj = [None] * tape.n_slots
    adj[tape.output_slot] = cotangent
    for node in reversed(tape.nodes):
        g = adj[node.out]
        if g is None:
            continue
        grads = node.backward(g)
        for slot, gi in zip(node.inputs, grads):
            if slot is None or gi is None:
                continue
            adj[slot] = gi if adj[slot] is None else adj[slot] + gi
    if adj[0] is None:
        return np.zeros(tape.input_shape)
    return np.array(adj[0], dtype=np.float64)


def default_workers() -> int:
    env = os.environ.get("EMBEDDING_ATLAS_THREADS")
    if env:
        return max(1, int(env))
    return 1


def jacobian_from_tape(tape: Tape, workers=None):
    n = int(np.prod(tape.output_shape, dtype=np.int64))
    m = int(np.prod(tape.input_shape, dtype=np.int64))
    eye = np.eye(n)

    def row(i):
        return vjp(tape, eye[i].reshape(tape.output_shape)).reshape(m)

    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(row, range(n)))
    else:
        rows = [row(i) for i in range(n)]
    return np.stack(rows) if rows else np.zeros((0, m))


def jacobian(model_fn, x, workers=None):
    """Full Jacobian (output size x input size), one reverse pass per output."""
    _, tape = record(model_fn, x)
    return jacobian_from_tape(tape, workers)


def finite_diff_jacobian(model_fn, x, h=1e-5):
    """Central-difference Jacobian; column j is (f(x+h e_j) - f(x-h e_j)) / 2h."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    x = as_tensor(x)
    flat = x.reshape(-1)
    f0 = np.asarray(model_fn(x)).reshape(-1)
    jac = np.empty((f0.size, flat.size))
    for j in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[j] += h
        xm[j] -= h
        fp = np.asarray(model_fn(xp.reshape(x.shape))).reshape(-1)
        fm = np.asarray(model_fn(xm.reshape(x.shape))).reshape(-1)
        jac[:, j] = (fp - fm) / (2.0 * h)
    return jac
