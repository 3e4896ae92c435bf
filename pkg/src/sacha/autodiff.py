"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Operations are recorded only while a :class:`Tape` is active and at least one
input requires a gradient; outside a tape every primitive is a plain numpy
computation, which is what rollouts use.

    with Tape() as tape:
        loss = mean(mul(x, x))
    backward(tape, loss)
"""
import io
import json
import zipfile
from collections import OrderedDict

import numpy as np

from .errors import ContractError, DimensionError

_ACTIVE = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


class Tape:
    """Records operations in creation order, which is a topological order."""

    def __init__(self):
        self.nodes = []
        self.params = OrderedDict()

    def watch(self, name, tensor):
        self.params[name] = tensor
        return tensor

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False


def no_tape():
    """Context manager that suspends recording (used for target computations)."""
    return _Suspend()


class _Suspend:
    def __enter__(self):
        self._saved = list(_ACTIVE)
        _ACTIVE.clear()

    def __exit__(self, *exc):
        _ACTIVE.extend(self._saved)
        return False


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        _ACTIVE[-1].nodes.append(out)
    return out


def backward(tape, loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a, c):
    """Multiply by a Python scalar."""
    a = as_tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(a):
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.maximum(a.data, 0), (a,), lambda g: (g * pos,))


def sigmoid(a):
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def detach(a):
    return Tensor(as_tensor(a).data)


# reductions and shape


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _make(y, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, index):
    a = as_tensor(a)

    basic = all(isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in
                (index if isinstance(index, tuple) else (index,)))

    def bw(g):
        out = np.zeros_like(a.data)
        if basic:
            out[index] += g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: {e}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(y, tuple(tensors), bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    y = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(y, tuple(tensors), bw)


def gather(a, index, axis=-1):
    """``take_along_axis`` with the gathered axis removed."""
    a = as_tensor(a)
    idx = np.expand_dims(np.asarray(index, dtype=np.int64), axis)
    if idx.ndim != a.ndim:
        raise DimensionError(f"gather: index shape {np.shape(index)} incompatible with {a.shape}")
    y = np.take_along_axis(a.data, idx, axis=axis)

    def bw(g):
        out = np.zeros_like(a.data)
        np.put_along_axis(out, idx, np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _make(np.squeeze(y, axis=axis), (a,), bw)


# linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    y = np.matmul(a.data, b.data)

    def bw(g):
        if b.ndim == 2:
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[-1])
            return ga, gb
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(y, (a, b), bw)


def linear(x, w, b=None):
    y = matmul(x, w)
    return y if b is None else add(y, b)


def conv2d(x, w, b=None):
    """Stride-1, zero-padded ('same') 2-D convolution.

    ``x`` is (N, H, W, C) and ``w`` is (kh, kw, C, O) with odd kernel sides.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2]:
        raise DimensionError(f"conv2d: input {x.shape} and kernel {w.shape} are incompatible")
    kh, kw = w.shape[:2]
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel sides must be odd, got {kh}x{kw}")
    n, h, wd, c = x.shape
    o = w.shape[3]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    # im2col: (n*h*wd, kh*kw*c) with column order (dy, dx, channel) matching w's layout
    cols = np.empty((n, h, wd, kh, kw, c), dtype=xp.dtype)
    for dy in range(kh):
        for dx in range(kw):
            cols[:, :, :, dy, dx, :] = xp[:, dy:dy + h, dx:dx + wd, :]
    cols = cols.reshape(n * h * wd, kh * kw * c)
    w2 = w.data.reshape(kh * kw * c, o)
    y = (cols @ w2).reshape(n, h, wd, o)

    def bw(g):
        g2 = g.reshape(n * h * wd, o)
        gw = (cols.T @ g2).reshape(w.shape)
        if not x.requires_grad:
            return None, gw
        gcols = (g2 @ w2.T).reshape(n, h, wd, kh, kw, c)
        gxp = np.zeros_like(xp)
        for dy in range(kh):
            for dx in range(kw):
                gxp[:, dy:dy + h, dx:dx + wd, :] += gcols[:, :, :, dy, dx, :]
        return gxp[:, ph:ph + h, pw:pw + wd, :], gw

    out = _make(y, (x, w), bw)
    return out if b is None else add(out, b)


# normalizers


def softmax(a, axis=-1, mask=None):
    """Softmax along ``axis``; positions where ``mask`` is False get weight exactly 0."""
    a = as_tensor(a)
    z = a.data if mask is None else np.where(mask, a.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), bw)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(y, (a,), bw)


# composite layers


def gru_cell(x, h, w_ih, w_hh, b_ih, b_hh):
    """One GRU step; gate order in the packed weights is (reset, update, new)."""
    x, h = as_tensor(x), as_tensor(h)
    hs = h.shape[-1]
    if w_ih.shape[-1] != 3 * hs or w_hh.shape != (hs, 3 * hs):
        raise DimensionError(f"gru_cell: hidden {hs} inconsistent with weights {w_ih.shape}, {w_hh.shape}")
    gi = linear(x, w_ih, b_ih)
    gh = linear(h, w_hh, b_hh)
    r = sigmoid(add(gi[..., :hs], gh[..., :hs]))
    z = sigmoid(add(gi[..., hs:2 * hs], gh[..., hs:2 * hs]))
    n = tanh(add(gi[..., 2 * hs:], mul(r, gh[..., 2 * hs:])))
    return add(n, mul(z, sub(h, n)))


def multi_head_attention(query, kv, mask, wq, wk, wv, wo, bo, n_heads):
    """Single-query multi-head attention.

    ``query`` is (N, d), ``kv`` is (N, K, d) and ``mask`` is a boolean (N, K)
    array; masked keys receive zero weight. Returns (N, d_out).
    """
    query, kv = as_tensor(query), as_tensor(kv)
    if query.ndim != 2 or kv.ndim != 3 or kv.shape[0] != query.shape[0]:
        raise DimensionError(f"multi_head_attention: query {query.shape} vs keys {kv.shape}")
    n, k = kv.shape[:2]
    d = wq.shape[1]
    if d % n_heads:
        raise DimensionError(f"multi_head_attention: width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n, k):
        raise DimensionError(f"multi_head_attention: mask shape {mask.shape} != {(n, k)}")
    q = reshape(matmul(query, wq), (n, n_heads, 1, dh))
    keys = transpose(reshape(matmul(kv, wk), (n, k, n_heads, dh)), (0, 2, 3, 1))
    vals = transpose(reshape(matmul(kv, wv), (n, k, n_heads, dh)), (0, 2, 1, 3))
    scores = scale(matmul(q, keys), 1.0 / np.sqrt(dh))
    weights = softmax(scores, axis=-1, mask=mask[:, None, None, :])
    attended = reshape(matmul(weights, vals), (n, d))
    return linear(attended, wo, bo)


# parameters


class ParameterSet(OrderedDict):
    """Named tensors; names are stable keys for averaging, checkpoints and grad checks."""

    def arrays(self):
        return OrderedDict((k, v.data) for k, v in self.items())

    def zero_grad(self):
        for p in self.values():
            p.grad = None

    def copy(self, requires_grad=None):
        out = ParameterSet()
        for k, v in self.items():
            rg = v.requires_grad if requires_grad is None else requires_grad
            out[k] = Tensor(v.data.copy(), requires_grad=rg, name=k)
        return out

    def subset(self, prefix):
        return ParameterSet((k, v) for k, v in self.items() if k.startswith(prefix))

    def load_arrays(self, arrays):
        for k, v in arrays.items():
            if k not in self:
                raise ContractError(f"unknown parameter {k!r}")
            if self[k].shape != v.shape:
                raise DimensionError(f"parameter {k!r}: shape {v.shape} != {self[k].shape}")
            self[k].data = np.array(v, dtype=self[k].dtype)

    def soft_update_from(self, online, tau):
        """self <- (1 - tau) * self + tau * online, elementwise."""
        if not 0.0 < tau <= 1.0:
            raise ContractError(f"tau must lie in (0, 1], got {tau}")
        for k, p in self.items():
            src = online[k].data
            if tau == 1.0:
                p.data = src.copy()
            else:
                p.data = (1.0 - tau) * p.data + tau * src


CHECKPOINT_FORMAT = "sacha-parameters"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, metadata=None):
    """Write a zip container: ``manifest.json`` plus one raw ``.npy`` per tensor."""
    entries = []
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for i, (name, arr) in enumerate(params.items()):
            arr = np.ascontiguousarray(arr.data if isinstance(arr, Tensor) else arr)
            member = f"tensors/{i:04d}.npy"
            buf = io.BytesIO()
            np.save(buf, arr, allow_pickle=False)
            zf.writestr(member, buf.getvalue())
            entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str, "file": member})
        manifest = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "entries": entries,
            "metadata": metadata or {},
        }
        zf.writestr("manifest.json", json.dumps(manifest, indent=2))


def load_checkpoint(path):
    """Return ``(OrderedDict name -> array, metadata)``."""
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise ContractError(f"{path}: not a parameter checkpoint")
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
        arrays = OrderedDict()
        for e in manifest["entries"]:
            arr = np.load(io.BytesIO(zf.read(e["file"])), allow_pickle=False)
            if list(arr.shape) != e["shape"] or arr.dtype.str != e["dtype"]:
                raise ContractError(f"{path}: entry {e['name']!r} does not match its manifest record")
            arrays[e["name"]] = arr
    return arrays, manifest.get("metadata", {})


class Adam:
    """Adaptive moment estimation over a ParameterSet (in-place updates)."""

    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        if self.lr == 0.0:
            return
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_arrays(self, prefix):
        out = OrderedDict()
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.m[k]
            out[f"{prefix}.v.{k}"] = self.v[k]
        out[f"{prefix}.t"] = np.array(self.t, dtype=np.int64)
        return out

    def load_state_arrays(self, prefix, arrays):
        for k in self.params:
            self.m[k] = arrays[f"{prefix}.m.{k}"].copy()
            self.v[k] = arrays[f"{prefix}.v.{k}"].copy()
        self.t = int(arrays[f"{prefix}.t"])


def grad_check(fn, params, eps=1e-5, n_coords=200, rng=None):
    """Max relative error between tape gradients and central differences.

    ``fn`` builds a scalar Tensor from ``params`` (a mapping of name to
    Tensor). Coordinates are subsampled uniformly when there are more than
    ``n_coords``; the denominator is ``max(|a|, |b|, 1e-8)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params.values():
        p.grad = None
        p.requires_grad = True
    with Tape() as tape:
        loss = fn()
    backward(tape, loss)
    names = list(params)
    sizes = [params[k].data.size for k in names]
    total = int(np.sum(sizes))
    flat = np.arange(total) if total <= n_coords else np.sort(rng.choice(total, n_coords, replace=False))
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for f in flat:
        which = int(np.searchsorted(offsets, f, side="right") - 1)
        p = params[names[which]]
        idx = np.unravel_index(f - offsets[which], p.shape)
        analytic = 0.0 if p.grad is None else float(p.grad[idx])
        orig = p.data[idx]
        p.data[idx] = orig + eps
        plus = float(fn().data)
        p.data[idx] = orig - eps
        minus = float(fn().data)
        p.data[idx] = orig
        numeric = (plus - minus) / (2.0 * eps)
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
