"""Dense tensors with reverse-mode autodiff, scoped to what the nets need.

The op set is deliberately closed: convolutions (1-D dilated, 2-D), batch
normalization, relu, max/average pooling, linear, elementwise arithmetic,
reshapes, log-softmax, pairwise squared distances and a mean-NLL reduction.
No general broadcasting (bias-add only), no retained graphs: `backward`
frees the recorded graph as it walks it, so each episode builds a fresh one.

Training runs in float32; gradient checking builds the same graphs in
float64 (`grad_check`).
"""

from __future__ import annotations

import numpy as np

from . import backend


class ShapeMismatch(ValueError):
    pass


class InvalidHyperparameter(ValueError):
    pass


class NotScalar(ValueError):
    pass


class DetachedGraph(ValueError):
    pass


class MissingGrad(ValueError):
    pass


class EvalWithoutStats(ValueError):
    """Batchnorm asked to use running statistics that were never populated."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (eval-mode forward)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() on shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"


class Parameter(Tensor):
    """A named trainable tensor carrying its Adam state."""

    __slots__ = ("name", "adam_m", "adam_v", "adam_step_count")

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.adam_m: np.ndarray | None = None
        self.adam_v: np.ndarray | None = None
        self.adam_step_count = 0


def _op(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _check_same_dtype(*tensors: Tensor):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ShapeMismatch(f"mixed dtypes {dt} vs {t.dtype}")


# ---------------------------------------------------------------- arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of same-shape tensors (residual connections)."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"add {a.shape} vs {b.shape}")
    _check_same_dtype(a, b)
    return _op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"sub {a.shape} vs {b.shape}")
    _check_same_dtype(a, b)
    return _op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul {a.shape} vs {b.shape}")
    _check_same_dtype(a, b)
    return _op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)
    return _op(a.data * s, (a,), lambda g: (g * s,))


def neg(a: Tensor) -> Tensor:
    return _op(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    _check_same_dtype(a, b)
    return _op(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def sum_all(a: Tensor) -> Tensor:
    return _op(
        np.asarray(a.data.sum(), dtype=a.dtype),
        (a,),
        lambda g: (np.full_like(a.data, g.reshape(())),),
    )


def mean_all(a: Tensor) -> Tensor:
    n = a.dtype.type(a.size)
    return _op(
        np.asarray(a.data.mean(), dtype=a.dtype),
        (a,),
        lambda g: (np.full_like(a.data, g.reshape(()) / n),),
    )


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def flatten(a: Tensor) -> Tensor:
    """Collapse all but the batch axis."""
    return reshape(a, (a.shape[0], -1))


def narrow(a: Tensor, start: int, stop: int) -> Tensor:
    """Rows start:stop along axis 0 (splitting a batched forward pass)."""
    if not 0 <= start <= stop <= a.shape[0]:
        raise ShapeMismatch(f"narrow [{start}:{stop}] of {a.shape}")

    def backward(g):
        gx = np.zeros_like(a.data)
        gx[start:stop] = g
        return (gx,)

    return _op(a.data[start:stop].copy(), (a,), backward)


# ------------------------------------------------------------- nonlinearity


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _op(np.where(mask, a.data, a.dtype.type(0)), (a,), lambda g: (g * mask,))


# -------------------------------------------------------------- convolution


def conv1d_temporal(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    dilation: int = 1,
    padding: int = 0,
) -> Tensor:
    """Dilated 1-D cross-correlation over (batch, channels, length).

    out[b,o,t] = sum_{c,j} w[o,c,j] * xpad[b,c, t*stride + j*dilation].
    """
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeMismatch(f"conv1d needs 3-D input/weight, got {x.shape}, {w.shape}")
    B, C, L = x.shape
    O, Cw, K = w.shape
    if C != Cw:
        raise ShapeMismatch(f"conv1d channels {C} vs weight {Cw}")
    if K < 1 or stride < 1 or dilation < 1 or padding < 0:
        raise InvalidHyperparameter(f"k={K} stride={stride} dilation={dilation} pad={padding}")
    if L + 2 * padding < dilation * (K - 1) + 1:
        raise InvalidHyperparameter(
            f"length {L}+2*{padding} shorter than dilated kernel span {dilation * (K - 1) + 1}"
        )
    _check_same_dtype(x, w)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    out = backend.conv1d_forward(xp, w.data, stride, dilation)
    if bias is not None:
        if bias.shape != (O,):
            raise ShapeMismatch(f"conv1d bias {bias.shape} vs ({O},)")
        out = out + bias.data[None, :, None]

    lp = L + 2 * padding

    def backward(g):
        g = np.ascontiguousarray(g)
        gxp = backend.conv1d_backward_input(g, w.data, stride, dilation, lp)
        gx = gxp[:, :, padding : padding + L] if padding else gxp
        gw = backend.conv1d_backward_weight(g, xp, stride, dilation, K)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    parents = (x, w) if bias is None else (x, w, bias)
    return _op(out, parents, backward)


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> Tensor:
    """2-D cross-correlation over (batch, channels, height, width)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatch(f"conv2d needs 4-D input/weight, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    if C != Cw:
        raise ShapeMismatch(f"conv2d channels {C} vs weight {Cw}")
    if min(kh, kw, sh, sw) < 1 or min(ph, pw) < 0:
        raise InvalidHyperparameter(f"kernel {kh}x{kw} stride {stride} pad {padding}")
    if H + 2 * ph < kh or W + 2 * pw < kw:
        raise InvalidHyperparameter("input smaller than kernel")
    _check_same_dtype(x, w)

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    out = backend.conv2d_forward(xp, w.data, sh, sw)
    if bias is not None:
        if bias.shape != (O,):
            raise ShapeMismatch(f"conv2d bias {bias.shape} vs ({O},)")
        out = out + bias.data[None, :, None, None]

    hp, wp = H + 2 * ph, W + 2 * pw

    def backward(g):
        g = np.ascontiguousarray(g)
        gxp = backend.conv2d_backward_input(g, w.data, sh, sw, hp, wp)
        gx = gxp[:, :, ph : ph + H, pw : pw + W] if ph or pw else gxp
        gw = backend.conv2d_backward_weight(g, xp, sh, sw, kh, kw)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if bias is None else (x, w, bias)
    return _op(out, parents, backward)


# ------------------------------------------------------------------ pooling


def maxpool2d(x: Tensor, kernel: tuple[int, int], stride: tuple[int, int] | None = None) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeMismatch(f"maxpool2d needs 4-D input, got {x.shape}")
    kh, kw = kernel
    sh, sw = stride if stride is not None else kernel
    B, C, H, W = x.shape
    if H < kh or W < kw:
        raise ShapeMismatch(f"pool window {kernel} larger than input {H}x{W}")
    out, idx = backend.maxpool2d_forward(x.data, kh, kw, sh, sw)

    def backward(g):
        return (backend.maxpool2d_backward(np.ascontiguousarray(g), idx, H, W),)

    return _op(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over all spatial positions per channel: (B,C,...) -> (B,C)."""
    if x.data.ndim < 3:
        raise ShapeMismatch(f"global_avg_pool needs spatial axes, got {x.shape}")
    spatial = x.shape[2:]
    n = x.dtype.type(int(np.prod(spatial)))
    axes = tuple(range(2, x.data.ndim))
    out = x.data.mean(axis=axes)

    def backward(g):
        gexp = (g / n).reshape(g.shape + (1,) * len(spatial))
        return (np.broadcast_to(gexp, x.shape).astype(x.dtype, copy=True),)

    return _op(out, (x,), backward)


# ------------------------------------------------------------------- linear


def linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map: (B,in) @ (out,in)^T + bias."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"linear {x.shape} with weight {w.shape}")
    _check_same_dtype(x, w)
    out = x.data @ w.data.T
    if bias is not None:
        if bias.shape != (w.shape[0],):
            raise ShapeMismatch(f"linear bias {bias.shape} vs ({w.shape[0]},)")
        out = out + bias.data[None, :]

    def backward(g):
        if bias is None:
            return g @ w.data, g.T @ x.data
        return g @ w.data, g.T @ x.data, g.sum(axis=0)

    parents = (x, w) if bias is None else (x, w, bias)
    return _op(out, parents, backward)


# ---------------------------------------------------------------- batchnorm


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over batch and spatial axes (axis 1 = C).

    Train mode normalizes with batch statistics and folds them into the
    running arrays in place (exponential average, unbiased variance); eval
    mode normalizes with the running arrays. The caller is responsible for
    refusing eval before any statistics exist.
    """
    if x.data.ndim < 2:
        raise ShapeMismatch(f"batchnorm needs a channel axis, got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeMismatch(f"batchnorm affine shapes {gamma.shape}/{beta.shape} vs C={C}")
    _check_same_dtype(x, gamma, beta)

    axes = (0,) + tuple(range(2, x.data.ndim))
    cshape = (1, C) + (1,) * (x.data.ndim - 2)
    n = int(np.prod([x.shape[a] for a in axes]))

    if train:
        m = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * m.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        m = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = (x.data - m.reshape(cshape)) * inv_std.reshape(cshape)
    out = gamma.data.reshape(cshape) * xhat + beta.data.reshape(cshape)

    def backward(g):
        gxhat = g * gamma.data.reshape(cshape)
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        if not train:
            return gxhat * inv_std.reshape(cshape), ggamma, gbeta
        # batch statistics depend on x: standard train-mode backward
        istd = inv_std.reshape(cshape)
        centered = x.data - m.reshape(cshape)
        gvar = (gxhat * centered).sum(axis=axes) * (-0.5) * inv_std**3
        gmean = (gxhat * -istd).sum(axis=axes) + gvar * (-2.0 / n) * centered.sum(axis=axes)
        gx = (
            gxhat * istd
            + gvar.reshape(cshape) * 2.0 * centered / x.dtype.type(n)
            + gmean.reshape(cshape) / x.dtype.type(n)
        )
        return gx.astype(x.dtype, copy=False), ggamma, gbeta

    return _op(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


# --------------------------------------------------------- episode-math ops


def log_softmax(x: Tensor) -> Tensor:
    """Row-wise log softmax with max subtraction, (M, C) -> (M, C)."""
    if x.data.ndim != 2:
        raise ShapeMismatch(f"log_softmax needs 2-D input, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    softmax = np.exp(out)

    def backward(g):
        return (g - softmax * g.sum(axis=1, keepdims=True),)

    return _op(out.astype(x.dtype, copy=False), (x,), backward)


def pairwise_sqdist(q: Tensor, p: Tensor) -> Tensor:
    """Squared Euclidean distances: (M,D) x (C,D) -> (M,C)."""
    if q.data.ndim != 2 or p.data.ndim != 2 or q.shape[1] != p.shape[1]:
        raise ShapeMismatch(f"pairwise_sqdist {q.shape} vs {p.shape}")
    _check_same_dtype(q, p)
    diff = q.data[:, None, :] - p.data[None, :, :]  # (M, C, D)
    out = (diff * diff).sum(axis=2)

    def backward(g):
        gq = 2.0 * np.einsum("mc,mcd->md", g, diff)
        gp = -2.0 * np.einsum("mc,mcd->cd", g, diff)
        return gq.astype(q.dtype, copy=False), gp.astype(p.dtype, copy=False)

    return _op(out, (q, p), backward)


def nll_mean(log_probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the labelled entries, a scalar."""
    if log_probs.data.ndim != 2:
        raise ShapeMismatch(f"nll_mean needs 2-D log-probs, got {log_probs.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    M, C = log_probs.shape
    if labels.shape != (M,):
        raise ShapeMismatch(f"labels {labels.shape} vs rows {M}")
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= C:
        raise IndexError(f"label outside [0, {C})")
    picked = log_probs.data[np.arange(M), labels]
    out = np.asarray(-picked.mean(), dtype=log_probs.dtype)

    def backward(g):
        gl = np.zeros_like(log_probs.data)
        gl[np.arange(M), labels] = -g.reshape(()) / log_probs.dtype.type(M)
        return (gl,)

    return _op(out, (log_probs,), backward)


# ----------------------------------------------------------------- backward


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; frees the graph as it goes.

    Gradients accumulate into `.grad` of every reachable requires-grad leaf;
    repeated calls (on fresh graphs) keep accumulating until the optimizer
    consumes and clears them.
    """
    if loss.data.size != 1:
        raise NotScalar(f"backward on shape {loss.shape}")
    if loss._backward is None and not loss.requires_grad:
        raise DetachedGraph("loss does not participate in a recorded graph")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        fn = node._backward
        if fn is None or node.grad is None:
            continue
        grads = fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.ascontiguousarray(g)
            else:
                parent.grad = parent.grad + g
    for node in topo:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node.grad = None  # interior value; only leaves keep gradients


# --------------------------------------------------------------------- adam


def adam_step(
    params,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update per parameter; gradients are cleared."""
    for p in params:
        if p.grad is None:
            raise MissingGrad(getattr(p, "name", "<tensor>"))
        g = p.grad.astype(p.dtype, copy=False)
        if p.adam_m is None:
            p.adam_m = np.zeros_like(p.data)
            p.adam_v = np.zeros_like(p.data)
        p.adam_step_count += 1
        t = p.adam_step_count
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1**t)
        v_hat = p.adam_v / (1.0 - beta2**t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
        p.grad = None


# --------------------------------------------------------------- grad check


def grad_check(
    loss_fn,
    params,
    h: float = 1e-4,
    n_directions: int = 3,
    elementwise_limit: int = 64,
    seed: int = 0,
):
    """Central-difference check of d(loss)/d(param) for every parameter.

    Small parameters are probed coordinate by coordinate; large ones along
    `n_directions` random unit directions (2 forward passes each), which
    exercises every element through the dot product. `loss_fn` must be a
    deterministic function of the parameter values. Returns
    {name: max relative error}; the relative error divides by
    max(|numeric|, |analytic|, 1e-2) so near-zero derivatives are judged
    on an absolute scale.

    h is applied in the parameter's own dtype. The default h=1e-4 suits
    float64 graphs; float32 graphs need a coarser step (h around 1e-2) and
    a looser tolerance since the loss itself carries ~1e-7 relative noise.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = {}
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGrad(getattr(p, "name", f"param{i}"))
        analytic[i] = p.grad.astype(np.float64).copy()
        p.grad = None

    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}
    for i, p in enumerate(params):
        name = getattr(p, "name", f"param{i}")
        flat = p.data.reshape(-1)
        if p.size <= elementwise_limit:
            directions = np.eye(p.size, dtype=np.float64)
        else:
            directions = rng.standard_normal((n_directions, p.size))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        worst = 0.0
        orig = flat.copy()
        for v in directions:
            vt = (v * h).astype(p.dtype)
            with no_grad():
                flat[:] = orig + vt
                f_plus = float(loss_fn().data.reshape(()))
                flat[:] = orig - vt
                f_minus = float(loss_fn().data.reshape(()))
                flat[:] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            ana = float(analytic[i].reshape(-1) @ v)
            err = abs(numeric - ana) / max(abs(numeric), abs(ana), 1e-2)
            worst = max(worst, err)
        report[name] = worst
    return report
