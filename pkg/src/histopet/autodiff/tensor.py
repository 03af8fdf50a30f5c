"""Reverse-mode automatic differentiation over numpy arrays."""

from __future__ import annotations

import contextlib
import threading

import numpy as np

_state = threading.local()


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


def _record_branch(mask) -> None:
    """Remember which side of a kink each element took (for grad checks)."""
    log = getattr(_state, "branches", None)
    if log is not None:
        log.append(np.packbits(np.asarray(mask, dtype=bool)).tobytes())


@contextlib.contextmanager
def _branch_log():
    prev = getattr(_state, "branches", None)
    _state.branches = log = []
    try:
        yield log
    finally:
        _state.branches = prev


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on this thread (inference mode)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """An array node in a computation graph.

    ``backward`` on a scalar result fills ``grad`` of every leaf created with
    ``requires_grad=True`` that the result depends on.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, op=""):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward, op):
        track = grad_enabled() and any(p.requires_grad for p in parents)
        if not track:
            return Tensor(data, op=op)
        return Tensor(data, True, parents, backward, op)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def backward(self, grad=None, retain_graph: bool = False):
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise GraphError("tensor does not depend on any parameter")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:  # leaf
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.dtype != parent.data.dtype:
                    pg = pg.astype(parent.data.dtype)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
            if not retain_graph:
                node._backward = _freed
                node._parents = ()

    # elementwise arithmetic ---------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
        return Tensor._make(a.data + b.data, (a, b), bw, "add")

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __mul__(self, other):
        other = _lift(other)
        a, b = self, other

        def bw(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
        return Tensor._make(a.data * b.data, (a, b), bw, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other)
        a, b = self, other
        out = a.data / b.data

        def bw(g):
            ga = g / b.data
            return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)
        return Tensor._make(out, (a, b), bw, "div")

    def __rtruediv__(self, other):
        return _lift(other) / self

    def __pow__(self, p: float):
        if isinstance(p, Tensor):
            raise TypeError("only constant exponents are supported")
        p = float(p)
        x = self.data
        out = x ** p

        def bw(g):
            with np.errstate(divide="ignore", invalid="ignore"):
                d = p * x ** (p - 1)
            d = np.where(x == 0, 0.0 if p < 1 else d, d)
            return (g * d,)
        return Tensor._make(out, (self,), bw, "pow")

    def abs(self):
        x = self.data
        _record_branch(x < 0)
        return Tensor._make(np.abs(x), (self,), lambda g: (g * np.sign(x),), "abs")

    def relu(self):
        x = self.data
        _record_branch(x > 0)
        return Tensor._make(np.maximum(x, 0), (self,), lambda g: (g * (x > 0),), "relu")

    # reductions and views -------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        shape = self.shape

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)
        return Tensor._make(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)),
                            (self,), bw, "sum")

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis, keepdims) * (1.0 / n)

    def max(self, axis=None, keepdims=False):
        """Maximum; the gradient flows to the first maximal element."""
        x = self.data
        axes = tuple(range(x.ndim)) if axis is None else tuple(np.atleast_1d(axis) % x.ndim)
        keep = [a for a in range(x.ndim) if a not in axes]
        moved = np.transpose(x, keep + list(axes))
        lead = moved.shape[:len(keep)]
        flat = moved.reshape(lead + (-1,))
        arg = flat.argmax(axis=-1)
        _record_branch(np.unpackbits(np.atleast_1d(arg).astype(">u8").view(np.uint8)))
        out = np.take_along_axis(flat, arg[..., None], -1)[..., 0]
        out_shape = tuple(1 if a in axes else n for a, n in enumerate(x.shape)) if keepdims else out.shape

        def bw(g):
            g = np.asarray(g).reshape(lead)
            gflat = np.zeros_like(flat)
            np.put_along_axis(gflat, arg[..., None], g[..., None], -1)
            gmoved = gflat.reshape(moved.shape)
            return (np.transpose(gmoved, np.argsort(keep + list(axes))),)
        return Tensor._make(np.asarray(out).reshape(out_shape), (self,), bw, "max")

    def astype(self, dtype):
        """Precision cast; the gradient is cast back to the source dtype."""
        dtype = np.dtype(dtype)
        if dtype == self.dtype:
            return self
        src = self.dtype
        return Tensor._make(self.data.astype(dtype), (self,), lambda g: (g.astype(src),), "cast")

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def __getitem__(self, index):
        shape, dtype = self.shape, self.dtype

        def bw(g):
            full = np.zeros(shape, dtype=dtype)
            full[index] = g
            return (full,)
        return Tensor._make(self.data[index], (self,), bw, "slice")


def _freed(g):
    raise GraphError("graph already freed; pass retain_graph=True to backward twice")


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def tensor(data, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad)


class GradCheckResult(float):
    """Max relative error, also carrying how many coordinates were compared."""

    checked: int = 0
    skipped: int = 0


def grad_check(fn, inputs, eps: float = 1e-4, coords=None, rng=None,
               skip_kinks: bool = False) -> GradCheckResult:
    """Largest relative error between backward gradients and central differences.

    ``fn`` maps the list ``inputs`` (float64 Tensors with ``requires_grad``) to a
    scalar Tensor.  Each input coordinate ``t`` is perturbed by
    ``eps * max(1, |t|)``.  ``coords`` caps the number of coordinates checked per
    input (chosen at random); ``None`` checks them all.  Relative error is
    ``|a - n| / max(|a|, |n|, 1e-12)``.

    With ``skip_kinks`` a coordinate is left out when either perturbed
    evaluation sends some relu/prelu/abs/max element down a different branch
    than the unperturbed one: the central difference then straddles a kink and
    measures nothing about the gradient.  ``result.skipped`` counts those.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise TypeError("grad_check needs float64 inputs")
        t.grad = None
    with _branch_log() as base:
        out = fn(inputs)
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    rng = np.random.default_rng(rng)
    worst = 0.0
    checked = skipped = 0
    with no_grad():
        for t, ga in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if coords is not None and coords < flat.size:
                idx = rng.choice(flat.size, coords, replace=False)
            for i in idx:
                orig = flat[i]
                h = eps * max(1.0, abs(orig))
                flat[i] = orig + h
                with _branch_log() as plus:
                    fp = fn(inputs).item()
                flat[i] = orig - h
                with _branch_log() as minus:
                    fm = fn(inputs).item()
                flat[i] = orig
                if skip_kinks and (plus != base or minus != base):
                    skipped += 1
                    continue
                num = (fp - fm) / (2 * h)
                a = ga.reshape(-1)[i]
                err = abs(a - num) / max(abs(a), abs(num), 1e-12)
                worst = max(worst, err)
                checked += 1
    result = GradCheckResult(worst)
    result.checked, result.skipped = checked, skipped
    return result
