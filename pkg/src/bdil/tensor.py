"""Dense float64 tensors with reverse-mode automatic differentiation.

Small, correctness-first engine: row-major contiguous numpy storage,
no views (reshape copies), general numpy broadcasting with gradient
un-broadcasting. Every published op checks its output for NaN/Inf and
raises instead of propagating silently.
"""

import numpy as np


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by '{op}'")


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Value node in the computation graph.

    `data` is always a contiguous float64 ndarray. `grad` is lazily
    allocated with the same shape. Repeated backward() calls without
    zeroing accumulate into `grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        _check_finite(self.data, _op)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = tuple(p for p in _parents if p.requires_grad) if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.shape != ():
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.ones((), dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- arithmetic -------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)

        def bwd(g):
            self._accum(_unbroadcast(g, self.shape)) if self.requires_grad else None
            other._accum(_unbroadcast(g, other.shape)) if other.requires_grad else None

        return Tensor(self.data + other.data, _parents=(self, other), _backward=bwd, _op="add")

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)

        def bwd(g):
            self._accum(_unbroadcast(g, self.shape)) if self.requires_grad else None
            other._accum(_unbroadcast(-g, other.shape)) if other.requires_grad else None

        return Tensor(self.data - other.data, _parents=(self, other), _backward=bwd, _op="sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)

        def bwd(g):
            self._accum(_unbroadcast(g * other.data, self.shape)) if self.requires_grad else None
            other._accum(_unbroadcast(g * self.data, other.shape)) if other.requires_grad else None

        return Tensor(self.data * other.data, _parents=(self, other), _backward=bwd, _op="mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        if np.any(other.data == 0.0):
            raise DomainError("division by zero")

        def bwd(g):
            self._accum(_unbroadcast(g / other.data, self.shape)) if self.requires_grad else None
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.data / other.data**2, other.shape))

        return Tensor(self.data / other.data, _parents=(self, other), _backward=bwd, _op="div")

    def __neg__(self):
        def bwd(g):
            self._accum(-g)

        return Tensor(-self.data, _parents=(self,), _backward=bwd, _op="neg")

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(f"matmul needs >=2-D operands, got {self.shape} and {other.shape}")
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(f"matmul inner dimensions disagree: {self.shape} vs {other.shape}")

        def bwd(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g @ np.swapaxes(other.data, -1, -2), self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(np.swapaxes(self.data, -1, -2) @ g, other.shape))

        return Tensor(self.data @ other.data, _parents=(self, other), _backward=bwd, _op="matmul")

    # ---- elementwise ------------------------------------------------

    def exp(self):
        # overflow surfaces as NonFiniteError in the constructor, not a warning
        with np.errstate(over="ignore"):
            out = np.exp(self.data)

        def bwd(g):
            self._accum(g * out)

        return Tensor(out, _parents=(self,), _backward=bwd, _op="exp")

    def log(self):
        if np.any(self.data <= 0.0):
            raise DomainError("log of non-positive input")

        def bwd(g):
            self._accum(g / self.data)

        return Tensor(np.log(self.data), _parents=(self,), _backward=bwd, _op="log")

    def relu(self):
        mask = self.data > 0.0  # subgradient at 0 is 0

        def bwd(g):
            self._accum(g * mask)

        return Tensor(np.where(mask, self.data, 0.0), _parents=(self,), _backward=bwd, _op="relu")

    def softplus(self):
        x = self.data
        out = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))
        sig = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.maximum(x, -700.0))),
                       np.exp(np.maximum(x, -700.0)) / (1.0 + np.exp(np.maximum(x, -700.0))))

        def bwd(g):
            self._accum(g * sig)

        return Tensor(out, _parents=(self,), _backward=bwd, _op="softplus")

    def square(self):
        def bwd(g):
            self._accum(g * 2.0 * self.data)

        return Tensor(self.data**2, _parents=(self,), _backward=bwd, _op="square")

    def sqrt(self):
        if np.any(self.data < 0.0):
            raise DomainError("sqrt of negative input")
        out = np.sqrt(self.data)

        def bwd(g):
            self._accum(g / (2.0 * out))

        return Tensor(out, _parents=(self,), _backward=bwd, _op="sqrt")

    def clip_min(self, low):
        """Elementwise max(x, low) with a constant floor; gradient is 0 where clipped."""
        mask = self.data > low

        def bwd(g):
            self._accum(g * mask)

        return Tensor(np.where(mask, self.data, low), _parents=(self,), _backward=bwd, _op="clip_min")

    # ---- reductions -------------------------------------------------

    def sum(self, axis=None):
        if self.size == 0:
            raise DomainError("reduction over an empty tensor")
        if axis is not None and not (-self.ndim <= axis < self.ndim):
            raise ShapeError(f"axis {axis} out of range for rank {self.ndim}")
        shape = self.shape

        def bwd(g):
            if axis is None:
                self._accum(np.broadcast_to(g, shape).copy())
            else:
                self._accum(np.broadcast_to(np.expand_dims(g, axis), shape).copy())

        return Tensor(self.data.sum(axis=axis), _parents=(self,), _backward=bwd, _op="sum")

    def mean(self, axis=None):
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis) / float(n)

    def logsumexp(self, axis=-1):
        if self.ndim == 0:
            raise ShapeError("logsumexp needs at least one axis")
        m = np.max(self.data, axis=axis, keepdims=True)
        shifted = np.exp(self.data - m)
        total = shifted.sum(axis=axis, keepdims=True)
        out = np.squeeze(m + np.log(total), axis=axis)
        soft = shifted / total

        def bwd(g):
            self._accum(np.expand_dims(g, axis) * soft)

        return Tensor(out, _parents=(self,), _backward=bwd, _op="logsumexp")

    # ---- shape / indexing -------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape

        def bwd(g):
            self._accum(g.reshape(old))

        return Tensor(self.data.reshape(shape).copy(), _parents=(self,), _backward=bwd, _op="reshape")

    def take(self, indices, axis=0):
        """Gather rows along `axis` by an integer index array (a constant)."""
        idx = np.asarray(indices, dtype=np.intp)
        ax = axis % self.ndim
        shape = self.shape

        def bwd(g):
            scatter = np.zeros(shape, dtype=np.float64)
            moved = np.moveaxis(scatter, ax, 0)
            np.add.at(moved, idx, np.moveaxis(g, ax, 0))
            self._accum(scatter)

        return Tensor(np.take(self.data, idx, axis=ax), _parents=(self,), _backward=bwd, _op="take")

    def select_last(self, indices):
        """Pick one entry per row along the last axis: out[...] = x[..., idx[...]]."""
        idx = np.broadcast_to(np.asarray(indices, dtype=np.intp), self.shape[:-1])
        if np.any(idx < 0) or np.any(idx >= self.shape[-1]):
            raise DomainError("select_last index out of range")
        out = np.take_along_axis(self.data, idx[..., None], axis=-1)[..., 0]
        shape = self.shape

        def bwd(g):
            scatter = np.zeros(shape, dtype=np.float64)
            np.put_along_axis(scatter, idx[..., None], g[..., None], axis=-1)
            self._accum(scatter)

        return Tensor(out, _parents=(self,), _backward=bwd, _op="select_last")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x):
    return Tensor(x, requires_grad=False)


def parameter(x):
    return Tensor(x, requires_grad=True)


def stack(tensors, axis=0):
    """Stack tensors of identical shape along a new axis."""
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack needs identical shapes, got {sorted(shapes)}")

    def bwd(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=axis))

    return Tensor(np.stack([t.data for t in tensors], axis=axis),
                  _parents=tuple(tensors), _backward=bwd, _op="stack")


def zero_grads(params):
    for p in params:
        p.zero_grad()


def finite_difference_check(f, params, h=1e-5):
    """Max relative error between analytic gradients of f() and central differences.

    f must rebuild its graph from the current .data of `params` on every
    call and be deterministic (freeze any Monte Carlo noise). The error
    per coordinate is |g_an - g_fd| / max(1, |g_fd|).
    """
    zero_grads(params)
    out = f()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gaf = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            gfd = (fp - fm) / (2.0 * h)
            err = abs(gaf[i] - gfd) / max(1.0, abs(gfd))
            worst = max(worst, err)
    return worst
