"""Dense numpy tensors with reverse-mode differentiation.

Only the primitives needed by the convolutional sentiment models are provided:
windowed convolution, masked pooling, activations, softmax, cross-entropy,
inverted dropout and the L2 penalty. Every op records its parents and a
backward rule; :func:`backward` walks the recorded graph in reverse
topological order.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

PROB_FLOOR = 1e-12


class Tensor:
    """A numpy array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op=""):
        if type(data) is not np.ndarray or data.dtype.kind != "f":
            if isinstance(data, Tensor):
                data = data.data
            data = np.asarray(data)
            if data.dtype.kind != "f":
                data = data.astype(np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None):
        return sum_(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def backward(self):
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else None)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return Tensor(arr)


def _node(data, parents, backward_fn, op):
    for p in parents:
        if p.requires_grad:
            return Tensor(data, True, tuple(parents), backward_fn, op)
    return Tensor(data, op=op)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, size in enumerate(shape):
        if size == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# -- graph -------------------------------------------------------------------


@dataclass
class ValueGraph:
    """Topologically ordered record of the ops that produced ``output``."""

    output: Tensor
    nodes: list = field(default_factory=list)

    @classmethod
    def trace(cls, output: Tensor) -> "ValueGraph":
        order, seen = [], set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(output, order)

    @property
    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]


def backward(loss, graph: ValueGraph | None = None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every trainable leaf.

    Leaves created with ``requires_grad=False`` (embeddings, inputs) are never
    touched.
    """
    if isinstance(loss, ValueGraph):
        graph, loss = loss, loss.output
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    graph = graph or ValueGraph.trace(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- elementwise and shape ops -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
                 "mul")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _node(ad ** exponent, (a,),
                 lambda g: (g * exponent * ad ** (exponent - 1),), "pow")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def _back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if bd.ndim > 1 \
                else np.multiply.outer(g, bd)
        if b.requires_grad:
            if bd.ndim == 1:
                gb = (ad * g[..., None]).reshape(-1, bd.shape[0]).sum(axis=0)
            elif ad.ndim == 1:
                gb = np.multiply.outer(ad, g)
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _node(ad @ bd, (a, b), _back, "matmul")


def sum_(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def _back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(a.data.sum(axis=axis), (a,), _back, "sum")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def swapaxes(a, ax1, ax2) -> Tensor:
    a = as_tensor(a)
    return _node(np.swapaxes(a.data, ax1, ax2), (a,),
                 lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


# -- activations ----------------------------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    active = x.data > 0
    return _node(np.where(active, x.data, 0.0).astype(x.data.dtype), (x,),
                 lambda g: (g * active,), "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _stable_sigmoid(x.data)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "none": lambda x: as_tensor(x)}


def activate(x, kind: str) -> Tensor:
    """Element-wise ``relu`` or ``sigmoid`` (``none`` passes through)."""
    try:
        return ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


# -- convolution and pooling -------------------------------------------------------


def conv_window(window, filt, bias) -> Tensor:
    """Pre-activation of one filter on one h x k window: sum(w * v) + b."""
    window, filt = as_tensor(window), as_tensor(filt)
    if window.shape != filt.shape:
        raise ValueError(f"window shape {window.shape} != filter shape {filt.shape}")
    return add(sum_(mul(window, filt)), bias)


def windows(matrix: np.ndarray, h: int) -> np.ndarray:
    """Stack the n-h+1 sliding h-row windows of ``matrix`` (..., n, k) as (..., n-h+1, h*k).

    Works on raw arrays only; the sentence matrices it is applied to are built
    from frozen embeddings and never need a gradient.
    """
    n, k = matrix.shape[-2:]
    if n < h:
        raise ValueError(f"sequence length {n} is shorter than window {h}; pad first")
    view = np.lib.stride_tricks.sliding_window_view(matrix, h, axis=-2)
    # view: (..., n-h+1, k, h) -> (..., n-h+1, h, k)
    view = np.swapaxes(view, -1, -2)
    return view.reshape(*matrix.shape[:-2], n - h + 1, h * k)


def feature_map(sentence, filt, bias, activation: str = "relu") -> Tensor:
    """Slide ``filt`` (h x k) over ``sentence`` (n x k); returns the n-h+1 activations."""
    filt = as_tensor(filt)
    sent = sentence.data if isinstance(sentence, Tensor) else np.asarray(sentence, dtype=float)
    if sent.ndim != 2 or filt.ndim != 2 or sent.shape[1] != filt.shape[1]:
        raise ValueError(f"incompatible sentence {sent.shape} and filter {filt.shape}")
    h = filt.shape[0]
    win = windows(sent, h)
    pre = add(matmul(win, reshape(filt, (h * sent.shape[1],))), bias)
    return activate(pre, activation)


def masked_max(x, mask, axis: int) -> Tensor:
    """Max along ``axis`` over positions where ``mask`` is true.

    The gradient flows to the first maximal position only.
    """
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not mask.any(axis=axis).all():
        raise ValueError("masked_max: a slice has no valid positions")
    filled = np.where(mask, x.data, -np.inf)
    idx = np.expand_dims(filled.argmax(axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)
    shape = x.shape

    def _back(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _node(out, (x,), _back, "masked_max")


def masked_mean(x, mask, axis: int) -> Tensor:
    x = as_tensor(x)
    weights = np.broadcast_to(np.asarray(mask, dtype=x.data.dtype), x.shape)
    counts = weights.sum(axis=axis, keepdims=True)
    if (counts == 0).any():
        raise ValueError("masked_mean: a slice has no valid positions")
    weights = weights / counts
    return _node((x.data * weights).sum(axis=axis), (x,),
                 lambda g: (np.expand_dims(g, axis) * weights,), "masked_mean")


def pool(fmap, mode: str = "max") -> Tensor:
    """Reduce a feature map to one scalar by ``max`` or ``avg`` pooling."""
    fmap = as_tensor(fmap)
    if fmap.data.size == 0:
        raise ValueError("cannot pool an empty feature map")
    mask = np.ones(fmap.shape, dtype=bool)
    if mode == "max":
        return masked_max(fmap, mask, axis=-1)
    if mode in ("avg", "mean"):
        return masked_mean(fmap, mask, axis=-1)
    raise ValueError(f"unknown pooling mode {mode!r}")


# -- classification head -----------------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; shift invariant by construction."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def _back(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _node(p, (x,), _back, "softmax")


def cross_entropy(probs, labels) -> Tensor:
    """Summed negative log-likelihood of ``labels`` under row-wise ``probs``.

    Probabilities are clamped at 1e-12 before the log; clamped entries get a
    zero gradient.
    """
    probs = as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    p = probs.data
    if p.ndim == 1:
        p = p[None, :]
    rows = np.arange(len(labels))
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= p.shape[-1]:
        raise ValueError("label index out of range")
    picked = p[rows, labels]
    clamped = np.maximum(picked, PROB_FLOOR)
    shape = probs.shape

    def _back(g):
        gp = np.zeros(p.shape, dtype=p.dtype)
        gp[rows, labels] = np.where(picked > PROB_FLOOR, -g / clamped, 0.0)
        return (gp.reshape(shape),)

    return _node(-np.log(clamped).sum(), (probs,), _back, "cross_entropy")


def sum_squares(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    total = sum(float(np.vdot(t.data, t.data)) for t in tensors)
    dtype = tensors[0].data.dtype if tensors else np.float64
    return _node(np.asarray(total, dtype=dtype), tensors,
                 lambda g: tuple(2.0 * g * t.data for t in tensors), "sum_squares")


def loss(probs, labels, params=(), lam: float = 0.0) -> Tensor:
    """Cross-entropy summed over the batch plus ``lam`` times the squared norm of ``params``.

    ``params`` is the regularized set only (convolution and classifier
    weights), never the embedding table.
    """
    ce = cross_entropy(probs, labels)
    params = list(params.values()) if isinstance(params, dict) else list(params)
    if lam == 0.0 or not params:
        return ce
    return add(ce, mul(sum_squares(params), lam))


def dropout(x, rate: float, rng: "RngStream | None" = None, training: bool = True) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, rescale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an RngStream")
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul(x, keep)


# -- randomness -------------------------------------------------------------------


class RngStream:
    """Seeded PCG64 stream; ``name`` selects an independent sub-stream.

    The same (seed, name) pair yields the same draws on every platform numpy
    supports, since PCG64 and SeedSequence are specified bit-for-bit.
    """

    algorithm = "numpy.PCG64/SeedSequence"

    def __init__(self, seed: int, name: str = ""):
        self.seed = int(seed)
        self.name = name
        key = (zlib.crc32(name.encode("utf-8")),) if name else ()
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))

    def child(self, name: str) -> "RngStream":
        return RngStream(self.seed, f"{self.name}/{name}" if self.name else name)

    def uniform(self, low, high, size=None, dtype=np.float64):
        return self._gen.uniform(low, high, size).astype(dtype, copy=False)

    def random(self, size=None):
        return self._gen.random(size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def get_state(self) -> dict:
        return {"seed": self.seed, "name": self.name,
                "bit_generator": self._gen.bit_generator.state}

    def set_state(self, state: dict):
        self._gen.bit_generator.state = state["bit_generator"]

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        rng = cls(state["seed"], state["name"])
        rng.set_state(state)
        return rng


# -- gradient checking ----------------------------------------------------------------


@dataclass
class GradCheckReport:
    errors: dict  # parameter name -> max relative error
    worst: tuple = ("", -1, 0.0)  # (name, flat index, error)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_error < tol


def grad_check(loss_fn, params: dict, step: float = 1e-5, floor: float = 1e-6,
               fault: float = 0.0) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` maps a dict of leaf Tensors (same keys as ``params``) to a
    scalar Tensor. Arrays in ``params`` must be float64; they are perturbed
    in place and restored. Relative error per entry is
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps roundoff in the
    difference quotient (about 1e-10 at step 1e-5 for O(1) losses) from
    dominating entries whose true gradient is near zero. ``fault`` scales the analytic
    gradient by ``1 + fault`` to self-test the checker.
    """
    for name, arr in params.items():
        if arr.dtype != np.float64:
            raise ValueError(f"grad_check needs float64 parameters ({name} is {arr.dtype})")
    leaves = {name: Tensor(arr, requires_grad=True) for name, arr in params.items()}
    out = loss_fn(leaves)
    backward(out)
    errors, worst = {}, ("", -1, 0.0)
    for name, arr in params.items():
        g = leaves[name].grad
        analytic = np.zeros_like(arr) if g is None else g * (1.0 + fault)
        flat = arr.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn({n: Tensor(a) for n, a in params.items()}).item()
            flat[i] = orig - step
            down = loss_fn({n: Tensor(a) for n, a in params.items()}).item()
            flat[i] = orig
            numeric[i] = (up - down) / (2 * step)
        a = analytic.reshape(-1)
        rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        errors[name] = float(rel.max()) if rel.size else 0.0
        if rel.size and rel.max() > worst[2]:
            worst = (name, int(rel.argmax()), float(rel.max()))
    return GradCheckReport(errors, worst)
