"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Provides exactly the primitives the EIS GAN needs (1D convolution, dense
layers, leaky ReLU, the two loss heads) plus an AdamP-style optimizer.
Every op records onto the active Tape; replaying a tape with identical
inputs is bit-for-bit deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NdgradError(Exception):
    """Base error for autodiff failures."""


class ShapeError(NdgradError):
    """Operand shapes do not conform."""


class NonFiniteError(NdgradError):
    """NaN or Inf encountered at an op boundary."""


_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """Dense float64 array node in the computation graph."""

    __slots__ = ("data", "parents", "backward_fn", "is_param", "name", "scale_invariant")

    def __init__(self, data, is_param=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values in tensor {name or '<anon>'}")
        self.parents: tuple = ()
        self.backward_fn = None
        self.is_param = bool(is_param)
        self.name = name
        self.scale_invariant = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        tag = self.name or ("param" if self.is_param else "tensor")
        return f"Tensor({tag}, shape={self.data.shape})"


class Tape:
    """Ordered record of primitive ops; consumed by backward()."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        return False


def _record(out_data, parents, backward_fn):
    out = Tensor(out_data)
    if _ACTIVE_TAPE is not None:
        out.parents = parents
        out.backward_fn = backward_fn
        _ACTIVE_TAPE.nodes.append(out)
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

@dataclass
class ConvKernelBank:
    """1D convolution parameters: kernels (K_out, R_in, K_w) and biases (K_out,)."""

    kernels: Tensor
    biases: Tensor

    def __post_init__(self):
        if self.kernels.data.ndim != 3:
            raise ShapeError(f"kernels must be 3D, got shape {self.kernels.shape}")
        k_out, r_in, k_w = self.kernels.shape
        if k_out < 1 or r_in < 1 or k_w < 1:
            raise ShapeError(f"invalid kernel bank shape {self.kernels.shape}")
        if self.biases.shape != (k_out,):
            raise ShapeError(
                f"biases shape {self.biases.shape} does not match K_out={k_out}")

    def params(self):
        return [self.kernels, self.biases]


def conv1d(x: Tensor, bank: ConvKernelBank, padding: int = 0) -> Tensor:
    """Valid cross-correlation with stride 1 after symmetric zero padding.

    Accepts (R_in, L) or batched (B, R_in, L) input; output length is
    L + 2*padding - K_w + 1.
    """
    x = _as_tensor(x)
    w, b = bank.kernels, bank.biases
    k_out, r_in, k_w = w.shape
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or xd.shape[1] != r_in:
        raise ShapeError(
            f"conv1d input shape {x.shape} incompatible with kernel R_in={r_in}")
    length = xd.shape[2]
    if length + 2 * padding < k_w:
        raise ShapeError(f"L={length} with padding={padding} shorter than kernel K_w={k_w}")
    batch = xd.shape[0]
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding)))
    l_out = length + 2 * padding - k_w + 1
    # im2col: a single GEMM per conv beats windowed einsum at these sizes
    win = np.lib.stride_tricks.sliding_window_view(xp, k_w, axis=2)
    col = win.transpose(1, 3, 0, 2).reshape(r_in * k_w, batch * l_out)
    w_mat = w.data.reshape(k_out, r_in * k_w)
    out = (w_mat @ col).reshape(k_out, batch, l_out).transpose(1, 0, 2) \
        + b.data[None, :, None]

    def bw(g):
        gb = g[None] if squeeze and g.ndim == 2 else g
        g_mat = gb.transpose(1, 0, 2).reshape(k_out, batch * l_out)
        gw = (g_mat @ col.T).reshape(k_out, r_in, k_w)
        gbias = g_mat.sum(axis=1)
        gcol = (w_mat.T @ g_mat).reshape(r_in, k_w, batch, l_out).transpose(2, 0, 1, 3)
        gxp = np.zeros_like(xp)
        for k in range(k_w):
            gxp[:, :, k:k + l_out] += gcol[:, :, k, :]
        gx = gxp[:, :, padding:padding + length] if padding else gxp
        return (gx[0] if squeeze else gx), gw, gbias

    return _record(out[0] if squeeze else out, (x, w, b), bw)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map weights @ x + bias; x may be (n,) or batched (B, n)."""
    x, weights, bias = _as_tensor(x), _as_tensor(weights), _as_tensor(bias)
    m, n = weights.shape
    if x.data.shape[-1] != n or bias.shape != (m,):
        raise ShapeError(
            f"dense shapes do not conform: x{x.shape} W{weights.shape} b{bias.shape}")
    out = x.data @ weights.data.T + bias.data

    def bw(g):
        g2 = g if g.ndim == 2 else g[None]
        x2 = x.data if x.data.ndim == 2 else x.data[None]
        gw = g2.T @ x2
        gb = g2.sum(axis=0)
        gx = g @ weights.data
        return gx, gw, gb

    return _record(out, (x, weights, bias), bw)


def leaky_relu(x: Tensor, alpha: float) -> Tensor:
    if not 0.0 < alpha < 1.0:
        raise NdgradError(f"alpha must lie in (0,1), got {alpha}")
    x = _as_tensor(x)
    out = np.maximum(alpha * x.data, x.data)

    def bw(g):
        return (np.where(x.data > 0, g, alpha * g),)

    return _record(out, (x,), bw)


def bce_logit_loss(logit: Tensor, target_is_real: bool) -> Tensor:
    """Binary cross-entropy on logits, averaged over all elements.

    Numerically stable: -log sigmoid(l) for real targets, -log(1-sigmoid(l))
    for fake, both via logaddexp.
    """
    logit = _as_tensor(logit)
    n = max(logit.size, 1)
    if target_is_real:
        out = np.logaddexp(0.0, -logit.data).mean() if logit.size else 0.0
    else:
        out = np.logaddexp(0.0, logit.data).mean() if logit.size else 0.0

    def bw(g):
        p = 1.0 / (1.0 + np.exp(-logit.data))
        d = (p - 1.0) if target_is_real else p
        return (g * d / n,)

    return _record(out, (logit,), bw)


def gaussian_nll(pred_mean: Tensor, code, fixed_sigma: float) -> Tensor:
    """Negative log density of `code` under N(pred_mean, fixed_sigma^2 I).

    Summed over code dimensions, averaged over the batch; `code` is a
    constant (no gradient flows into it).
    """
    if fixed_sigma <= 0:
        raise NdgradError(f"fixed_sigma must be positive, got {fixed_sigma}")
    pred_mean = _as_tensor(pred_mean)
    c = np.asarray(code, dtype=np.float64)
    if c.shape != pred_mean.shape:
        raise ShapeError(f"code shape {c.shape} != pred_mean shape {pred_mean.shape}")
    k = c.shape[-1] if c.ndim else 1
    batch = c.shape[0] if c.ndim == 2 else 1
    var = fixed_sigma ** 2
    resid = pred_mean.data - c
    out = (0.5 * np.sum(resid ** 2) / var + 0.5 * k * batch * np.log(2 * np.pi * var)) / batch

    def bw(g):
        return (g * resid / (var * batch),)

    return _record(out, (pred_mean,), bw)


def avg_pool1d(x: Tensor, width: int = 2) -> Tensor:
    """Non-overlapping average pool along the last axis; trailing remainder dropped."""
    x = _as_tensor(x)
    length = x.data.shape[-1]
    l_out = length // width
    if l_out < 1:
        raise ShapeError(f"pool width {width} exceeds length {length}")
    trimmed = x.data[..., :l_out * width]
    out = trimmed.reshape(*x.data.shape[:-1], l_out, width).mean(axis=-1)

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[..., :l_out * width] = np.repeat(g, width, axis=-1) / width
        return (gx,)

    return _record(out, (x,), bw)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    x = _as_tensor(x)
    out = np.repeat(x.data, factor, axis=-1)

    def bw(g):
        return (g.reshape(*x.data.shape, factor).sum(axis=-1),)

    return _record(out, (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def bw(g):
        return (g.reshape(x.data.shape),)

    return _record(out, (x,), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def scale(x: Tensor, factor: float) -> Tensor:
    x = _as_tensor(x)
    return _record(x.data * factor, (x,), lambda g: (g * factor,))


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    return _record(x.data.sum(), (x,), lambda g: (g * np.ones_like(x.data),))


def mean_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = max(x.size, 1)
    return _record(x.data.mean(), (x,), lambda g: (g * np.ones_like(x.data) / n,))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(tape: Tape, loss: Tensor, params) -> list[np.ndarray]:
    """Reverse sweep over the tape; returns dLoss/dParam aligned with params.

    Parameters not reached by the loss get zero gradients.
    """
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def clip_global_norm(grads, max_norm: float):
    """Scale the gradient list so its global L2 norm is at most max_norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if total > max_norm > 0:
        factor = max_norm / total
        grads = [g * factor for g in grads]
    return grads, total


class AdamP:
    """Adam with bias correction and optional radial-update projection.

    The projection removes the component of the update parallel to the
    weights for scale-invariant parameter blocks (those followed by a
    normalization layer). No block in this architecture is scale-invariant,
    so with defaults the optimizer behaves exactly like Adam.
    """

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, projection=True):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.projection = projection
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise NdgradError("gradient list does not match parameter list")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite gradient; step rejected")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.projection and p.scale_invariant:
                w = p.data
                denom = float(np.sum(w * w))
                if denom > 0:
                    update = update - (float(np.sum(update * w)) / denom) * w
            p.data -= self.lr * update
