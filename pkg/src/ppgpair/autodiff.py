"""Dense numpy tensors with reverse-mode differentiation.

Each operation returns a new :class:`Tensor` that remembers its parents and
a closure mapping the output gradient to one gradient per parent. Calling
:func:`grad` walks that record in reverse topological order. Gradients are
recomputed from scratch on every call, so repeated calls return identical
results and nothing accumulates between them.

Only the operations the encoder/projector/predictor stack needs are here.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

EPS = 1e-8

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Populate ``.grad`` on every reachable leaf that requires grad.

        Existing ``.grad`` values on those leaves are overwritten.
        """
        leaves = [n for n in _toposort(self) if n.requires_grad and n._backward is None]
        for leaf, g in zip(leaves, grad(self, leaves)):
            leaf.grad = g

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __neg__ = lambda self: mul(self, -1.0)
    __matmul__ = lambda self, other: matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to each tensor in ``wrt``.

    Tensors that are unreachable from ``loss`` (including those only reachable
    through :func:`stop_gradient`) get an all-zero gradient.
    """
    wrt = list(wrt)
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return [grads.get(id(w), np.zeros_like(w.data)) for w in wrt]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def stop_gradient(x: Tensor) -> Tensor:
    """Forward identity that records no edge back to ``x``."""
    return Tensor(x.data)


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def take(x: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing."""
    def backward(g):
        out = np.zeros_like(x.data)
        out[idx] = g
        return (out,)

    return _node(x.data[idx], (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def tsum(x: Tensor, axis=None) -> Tensor:
    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _node(np.asarray(x.data.sum(axis=axis)), (x,), backward)


def tmean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis), np.asarray(1.0 / n, dtype=x.dtype))


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a)
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with ``weight`` shaped [out, in]."""
    out_data = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        out_data = out_data + bias.data
        parents.append(bias)

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _node(out_data, parents, backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x [B, Cin, L] with weight [Cout, Cin, k], zero padded."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d expects 3-d input and kernel, got {x.shape} and {weight.shape}")
    batch, c_in, length = x.shape
    c_out, w_in, k = weight.shape
    if w_in != c_in:
        raise ValueError(f"kernel expects {w_in} input channels, input has {c_in}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if k > length + 2 * padding:
        raise ValueError(f"kernel size {k} exceeds padded length {length + 2 * padding}")
    out_len = (length + 2 * padding - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, k, axis=2)[:, :, : stride * (out_len - 1) + 1 : stride]
    cols = windows.transpose(0, 2, 1, 3).reshape(batch * out_len, c_in * k)
    wmat = weight.data.reshape(c_out, c_in * k)
    out = (cols @ wmat.T).reshape(batch, out_len, c_out).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(batch * out_len, c_out)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ wmat).reshape(batch, out_len, c_in, k)
        gxp = np.zeros_like(xp)
        span = stride * (out_len - 1) + 1
        for j in range(k):
            gxp[:, :, j : j + span : stride] += gcols[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, padding : padding + length] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    parents = [x, weight] + ([bias] if bias is not None else [])
    return _node(out, parents, backward)


# ---------------------------------------------------------------- normalization and pooling

def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = EPS) -> Tensor:
    """Per-example normalization followed by a per-channel affine.

    For [B, C, L] input the statistics are taken over (C, L) of each example;
    for [B, D] input over D. No statistics are shared across the batch.
    """
    if x.ndim == 3:
        axes = (1, 2)
        gb, bb = gamma.data[None, :, None], beta.data[None, :, None]
        param_axes = (0, 2)
    elif x.ndim == 2:
        axes = (1,)
        gb, bb = gamma.data[None, :], beta.data[None, :]
        param_axes = (0,)
    else:
        raise ValueError(f"channel_norm expects 2-d or 3-d input, got {x.shape}")
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError("channel_norm affine parameters must match the channel dimension")
    n = int(np.prod([x.shape[a] for a in axes]))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv_std

    def backward(g):
        dxhat = g * gb
        s1 = dxhat.sum(axis=axes, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
        gx = (inv_std / n) * (n * dxhat - s1 - xhat * s2)
        return gx, (g * xhat).sum(axis=param_axes), g.sum(axis=param_axes)

    return _node(xhat * gb + bb, (x, gamma, beta), backward)


def batch_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = EPS) -> Tensor:
    """Normalize [B, D] features with statistics taken across the batch.

    Used only inside the projector, so it couples the examples of a training
    batch but never the encoder output h. ``gamma``/``beta`` may be omitted
    for a non-affine normalization.
    """
    if x.ndim != 2:
        raise ValueError(f"batch_norm expects [B, D], got {x.shape}")
    n = x.shape[0]
    mu = x.data.mean(axis=0, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=0, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * inv_std
    g_data = gamma.data[None, :] if gamma is not None else np.ones((1, x.shape[1]), dtype=x.dtype)
    out = xhat * g_data
    if beta is not None:
        out = out + beta.data[None, :]

    def backward(g):
        dxhat = g * g_data
        s1 = dxhat.sum(axis=0, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=0, keepdims=True)
        gx = (inv_std / n) * (n * dxhat - s1 - xhat * s2)
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=0))
        if beta is not None:
            grads.append(g.sum(axis=0))
        return grads

    parents = [x] + [t for t in (gamma, beta) if t is not None]
    return _node(out, parents, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the length axis: [B, C, L] -> [B, C]."""
    if x.ndim != 3:
        raise ValueError(f"global_avg_pool expects [B, C, L], got {x.shape}")
    length = x.shape[2]
    return _node(
        x.data.mean(axis=2),
        (x,),
        lambda g: (np.broadcast_to(g[:, :, None] / length, x.shape).copy(),),
    )


# ---------------------------------------------------------------- similarities and losses

def cosine_similarity(a: Tensor, b: Tensor, eps: float = EPS) -> Tensor:
    """Cosine similarity along the last axis, clamped to [-1, 1].

    1-d inputs give a scalar; [B, d] inputs give one value per row.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    sa = (a.data * a.data).sum(axis=-1)
    sb = (b.data * b.data).sum(axis=-1)
    if np.any(sa == 0) or np.any(sb == 0):
        raise ValueError("degenerate vector")
    e = np.asarray(eps, dtype=a.dtype)
    na = np.sqrt(sa + e)
    nb = np.sqrt(sb + e)
    dot = (a.data * b.data).sum(axis=-1)
    cos = dot / (na * nb)
    inside = np.abs(cos) <= 1
    out = np.clip(cos, -1, 1)

    def backward(g):
        g = np.where(inside, g, 0)
        ge = g[..., None]
        denom = (na * nb)[..., None]
        c = cos[..., None]
        ga = ge * (b.data / denom - c * a.data / (na * na)[..., None])
        gb = ge * (a.data / denom - c * b.data / (nb * nb)[..., None])
        return ga, gb

    return _node(np.asarray(out), (a, b), backward)


def mean_squared_error(pred: Tensor, target) -> Tensor:
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target {target.shape}")
    diff = pred.data - target
    n = diff.size
    return _node(
        np.asarray((diff * diff).mean()),
        (pred,),
        lambda g: (g * 2.0 * diff / n,),
    )


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under softmax(``logits``)."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"expected logits [B, K] and labels [B], got {logits.shape} and {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integer class indices")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label outside [0, n_classes)")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(labels.shape[0])
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (g * p / labels.shape[0],)

    return _node(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
