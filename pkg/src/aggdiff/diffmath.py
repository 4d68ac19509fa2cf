"""Small dense math kernel with reverse-mode gradients.

Every value lives in a :class:`Var`.  Parameters are created with
``tracked=True``; an op whose inputs include a tracked ``Var`` records itself
on the active :class:`Tape` (if any) and its output becomes tracked too.
Outside a ``with tape:`` block nothing is recorded, and the forward values are
computed by exactly the same numpy expressions, so recording never changes a
result.

Only what the embedding model needs is here: vectors, matrices, a handful of
elementwise functions.  There is no broadcasting beyond scalar-times-array.
"""
from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "Var", "Tape", "TapeError", "ShapeError", "NondeterminismError",
    "const", "param", "affine", "matvec", "add", "sub", "scale", "dot",
    "concat", "take", "segment", "stack", "weighted_sum", "total",
    "exp", "log", "sigmoid", "tanh", "nonlinearity", "softmax",
    "softplus_scaled", "finite_diff_check", "active_tape",
]


class TapeError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


class NondeterminismError(RuntimeError):
    pass


class Var:
    """A float64 array (0-d, 1-d or 2-d) that may take part in backprop."""

    __slots__ = ("value", "tracked", "__weakref__")

    def __init__(self, value, tracked: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.tracked = tracked

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __float__(self) -> float:
        return float(self.value)

    def __len__(self) -> int:
        return len(self.value)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __repr__(self) -> str:
        flag = ", tracked" if self.tracked else ""
        return f"Var({self.value!r}{flag})"


def const(value) -> Var:
    return value if isinstance(value, Var) else Var(value)


def param(value) -> Var:
    return Var(np.array(value, dtype=np.float64), tracked=True)


_active: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _active[-1] if _active else None


class Tape:
    """Ordered record of primitive ops for one forward pass.

    Use as a context manager to record.  ``backward`` replays the record in
    reverse once; a second replay needs a fresh forward pass (or ``clear``
    followed by a new recording).
    """

    def __init__(self):
        self._nodes: list[tuple[Var, tuple[Var, ...], Callable]] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def __len__(self) -> int:
        return len(self._nodes)

    def clear(self) -> None:
        self._nodes.clear()
        self._spent = False

    def _record(self, out: Var, inputs: tuple[Var, ...], vjp: Callable) -> None:
        if self._spent:
            # a new forward after a replay starts a new record
            self._nodes.clear()
            self._spent = False
        self._nodes.append((out, inputs, vjp))

    def backward(self, loss: Var, params: Mapping[str, Var]) -> dict[str, np.ndarray]:
        """Gradient of scalar ``loss`` w.r.t. each entry of ``params``.

        Parameters the loss never touched get a zero array.
        """
        if self._spent:
            raise TapeError("tape already replayed; run a new forward pass first")
        if loss.value.shape != ():
            raise ShapeError(f"loss must be a scalar, got shape {loss.value.shape}")
        if not loss.tracked:
            # constant loss: nothing to replay
            self._spent = True
            return {name: np.zeros_like(p.value) for name, p in params.items()}
        if not self._nodes:
            raise TapeError("nothing recorded on this tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
        for out, inputs, vjp in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for x, gx in zip(inputs, vjp(g)):
                if gx is None or not x.tracked:
                    continue
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + gx
                else:
                    grads[key] = gx
        self._spent = True
        return {
            name: np.array(grads.get(id(p), np.zeros_like(p.value)), dtype=np.float64)
            for name, p in params.items()
        }


def _emit(value: np.ndarray, inputs: tuple[Var, ...], vjp: Callable) -> Var:
    tape = active_tape()
    if tape is not None and any(x.tracked for x in inputs):
        out = Var(value, tracked=True)
        tape._record(out, inputs, vjp)
        return out
    return Var(value)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name}: non-finite input")


# linear algebra ------------------------------------------------------------

def affine(W, x) -> Var:
    """``W @ x`` for a matrix ``W`` and vector ``x``."""
    W, x = const(W), const(x)
    if W.value.ndim != 2 or x.value.ndim != 1 or W.value.shape[1] != x.value.shape[0]:
        raise ShapeError(f"affine: cannot apply {W.value.shape} to {x.value.shape}")
    Wv, xv = W.value, x.value
    return _emit(Wv @ xv, (W, x), lambda g: (np.outer(g, xv), Wv.T @ g))


matvec = affine


def add(*xs) -> Var:
    xs = tuple(const(x) for x in xs)
    shape = xs[0].value.shape
    for x in xs[1:]:
        if x.value.shape != shape:
            raise ShapeError(f"add: shapes {shape} and {x.value.shape} differ")
    value = xs[0].value
    for x in xs[1:]:
        value = value + x.value
    return _emit(value, xs, lambda g: (g,) * len(xs))


def sub(a, b) -> Var:
    a, b = const(a), const(b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"sub: shapes {a.value.shape} and {b.value.shape} differ")
    return _emit(a.value - b.value, (a, b), lambda g: (g, -g))


def scale(x, c: float) -> Var:
    """Multiply by a constant scalar."""
    x = const(x)
    c = float(c)
    return _emit(x.value * c, (x,), lambda g: (g * c,))


def dot(a, b) -> Var:
    a, b = const(a), const(b)
    if a.value.ndim != 1 or a.value.shape != b.value.shape:
        raise ShapeError(f"dot: shapes {a.value.shape} and {b.value.shape}")
    av, bv = a.value, b.value
    return _emit(np.dot(av, bv), (a, b), lambda g: (g * bv, g * av))


def concat(a, b) -> Var:
    a, b = const(a), const(b)
    n = a.value.shape[0]
    return _emit(np.concatenate([a.value, b.value]), (a, b), lambda g: (g[:n], g[n:]))


def take(x, i: int) -> Var:
    """Row ``i`` of a matrix, or element ``i`` of a vector."""
    x = const(x)
    shape = x.value.shape

    def vjp(g):
        gx = np.zeros(shape)
        gx[i] = g
        return (gx,)

    return _emit(x.value[i].copy(), (x,), vjp)


def segment(x, start: int, stop: int) -> Var:
    x = const(x)
    n = x.value.shape[0]

    def vjp(g):
        gx = np.zeros(n)
        gx[start:stop] = g
        return (gx,)

    return _emit(x.value[start:stop].copy(), (x,), vjp)


def stack(xs: Sequence) -> Var:
    """Stack equal-length vectors into the rows of a matrix."""
    xs = tuple(const(x) for x in xs)
    if not xs:
        raise ShapeError("stack: empty input")
    value = np.stack([x.value for x in xs])
    return _emit(value, xs, lambda g: tuple(g[i] for i in range(len(xs))))


def weighted_sum(xs: Sequence, weights) -> Var:
    """``sum_i weights[i] * xs[i]`` with constant weights."""
    xs = tuple(const(x) for x in xs)
    w = np.asarray(weights, dtype=np.float64)
    if len(xs) != len(w) or not xs:
        raise ShapeError(f"weighted_sum: {len(xs)} vectors, {len(w)} weights")
    value = w @ np.stack([x.value for x in xs])
    return _emit(value, xs, lambda g: tuple(wi * g for wi in w))


def total(x) -> Var:
    x = const(x)
    shape = x.value.shape
    return _emit(np.sum(x.value), (x,), lambda g: (np.full(shape, float(g)),))


# elementwise ---------------------------------------------------------------

def exp(x) -> Var:
    x = const(x)
    y = np.exp(x.value)
    return _emit(y, (x,), lambda g: (g * y,))


def log(x) -> Var:
    x = const(x)
    if np.any(x.value <= 0):
        raise FloatingPointError("log: non-positive input")
    xv = x.value
    return _emit(np.log(xv), (x,), lambda g: (g / xv,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x) -> Var:
    x = const(x)
    _check_finite("sigmoid", x.value)
    y = _sigmoid(x.value)
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x) -> Var:
    x = const(x)
    _check_finite("tanh", x.value)
    y = np.tanh(x.value)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),))


def nonlinearity(x, kind: str = "sigmoid") -> Var:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown nonlinearity {kind!r}")


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - np.max(v))
    return e / np.sum(e)


def softmax(x) -> Var:
    x = const(x)
    if x.value.ndim != 1 or x.value.size == 0:
        raise ShapeError("softmax: need a non-empty vector")
    _check_finite("softmax", x.value)
    y = _softmax(x.value)
    return _emit(y, (x,), lambda g: (y * (g - np.dot(g, y)),))


_TINY = np.finfo(np.float64).tiny


def softplus_scaled(x, psi) -> Var:
    """``psi * log(1 + exp(x / psi))`` with a positive scalar ``psi``.

    ``x`` may be a scalar or a vector; ``psi`` is shared across entries.
    """
    x, psi = const(x), const(psi)
    if psi.value.shape != ():
        raise ShapeError("softplus_scaled: psi must be a scalar")
    p = float(psi.value)
    if not p > 0:
        raise ValueError(f"softplus_scaled: psi must be > 0, got {p}")
    _check_finite("softplus_scaled", x.value)
    r = x.value / p
    sp = np.logaddexp(0.0, r)
    s = _sigmoid(r)

    def vjp(g):
        return g * s, np.sum(g * (sp - r * s))

    # far in the negative tail exp underflows; keep the result strictly positive
    return _emit(np.maximum(p * sp, _TINY), (x, psi), vjp)


# verification --------------------------------------------------------------

def finite_diff_check(f: Callable[[], Var], params: Mapping[str, Var],
                      step: float = 1e-5) -> float:
    """Compare tape gradients of ``f()`` with central differences.

    ``f`` takes no arguments and reads the ``Var`` objects in ``params``.
    Returns the worst relative error over parameters, where each parameter's
    error is ``|analytic - numeric| / (|numeric| + 1e-8)`` in the Euclidean
    norm over its entries.
    """
    tape = Tape()
    with tape:
        loss = f()
    analytic = tape.backward(loss, params)
    base = float(loss.value)
    if float(f().value) != base:
        raise NondeterminismError("f returned different values for identical inputs")

    worst = 0.0
    for name, p in params.items():
        orig = p.value.copy()
        numeric = np.zeros_like(orig)
        for idx in np.ndindex(orig.shape):
            bumped = orig.copy()
            bumped[idx] += step
            p.value = bumped
            hi = float(f().value)
            bumped = orig.copy()
            bumped[idx] -= step
            p.value = bumped
            lo = float(f().value)
            numeric[idx] = (hi - lo) / (2.0 * step)
        p.value = orig
        err = np.linalg.norm(analytic[name] - numeric) / (np.linalg.norm(numeric) + 1e-8)
        worst = max(worst, float(err))
    return worst
