"""The four embedding networks and their batched forward pass.

Two families share one layer toolbox:

* temporal nets (``td-resnet7``, ``tc-resnet8``) see MFCC coefficients as
  40 channels over a 49-step time axis and end in global average pooling;
* image nets (``cnn-trad-fpool3``, ``c64``) see the 49x40 matrix as a
  one-channel picture.

td-resnet7 is the tc-resnet8 skeleton with kernels shrunk to 7, stride
fixed at 1 and block dilations 1/2/4, so its receptive field still spans
an entire one-second utterance.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .features import LAYOUT_FRAMES, LAYOUT_TEMPORAL, FeatureMatrix
from .tensor import EvalWithoutStats, Parameter, Tensor

N_MFCC = 40
N_FRAMES = 49

TD_RESNET7 = "td-resnet7"
TC_RESNET8 = "tc-resnet8"
CNN_TRAD_FPOOL3 = "cnn-trad-fpool3"
C64 = "c64"
ALL_KINDS = (TD_RESNET7, TC_RESNET8, CNN_TRAD_FPOOL3, C64)


class LayoutMismatch(ValueError):
    """Feature layout does not match what the network consumes."""


def _init_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(seed))


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class _Module:
    def forward(self, x: Tensor, train: bool) -> Tensor:
        raise NotImplementedError

    def named_parameters(self, prefix: str):
        return
        yield  # pragma: no cover

    def state_arrays(self, prefix: str):
        return
        yield  # pragma: no cover

    def spec(self) -> dict:
        raise NotImplementedError


class Conv1d(_Module):
    def __init__(self, c_in, c_out, k, *, stride=1, dilation=1, padding=0,
                 bias=False, rng, dtype):
        self.hp = dict(op="conv1d", c_in=c_in, c_out=c_out, k=k, stride=stride,
                       dilation=dilation, padding=padding, bias=bias)
        self.weight = Parameter(
            _kaiming_uniform(rng, (c_out, c_in, k), c_in * k, dtype), name="weight")
        self.bias = Parameter(np.zeros(c_out, dtype), name="bias") if bias else None

    def forward(self, x, train):
        hp = self.hp
        return T.conv1d_temporal(x, self.weight, self.bias, stride=hp["stride"],
                                 dilation=hp["dilation"], padding=hp["padding"])

    def named_parameters(self, prefix):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias

    def spec(self):
        return dict(self.hp)


class Conv2d(_Module):
    def __init__(self, c_in, c_out, kernel, *, stride=(1, 1), padding=(0, 0),
                 bias=False, rng, dtype):
        kh, kw = kernel
        self.hp = dict(op="conv2d", c_in=c_in, c_out=c_out, kernel=[kh, kw],
                       stride=list(stride), padding=list(padding), bias=bias)
        self.weight = Parameter(
            _kaiming_uniform(rng, (c_out, c_in, kh, kw), c_in * kh * kw, dtype),
            name="weight")
        self.bias = Parameter(np.zeros(c_out, dtype), name="bias") if bias else None

    def forward(self, x, train):
        return T.conv2d(x, self.weight, self.bias,
                        stride=tuple(self.hp["stride"]),
                        padding=tuple(self.hp["padding"]))

    def named_parameters(self, prefix):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias

    def spec(self):
        return dict(self.hp)


class BatchNorm(_Module):
    def __init__(self, channels, *, dtype, momentum=0.1, eps=1e-5):
        self.hp = dict(op="batchnorm", channels=channels, momentum=momentum, eps=eps)
        self.gamma = Parameter(np.ones(channels, dtype), name="gamma")
        self.beta = Parameter(np.zeros(channels, dtype), name="beta")
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.batches_tracked = 0

    def forward(self, x, train):
        if train:
            self.batches_tracked += 1
        elif self.batches_tracked == 0:
            raise EvalWithoutStats("eval-mode batchnorm before any training batch")
        return T.batchnorm(x, self.gamma, self.beta, self.running_mean,
                           self.running_var, train,
                           momentum=self.hp["momentum"], eps=self.hp["eps"])

    def named_parameters(self, prefix):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta

    def state_arrays(self, prefix):
        yield f"{prefix}.running_mean", self.running_mean
        yield f"{prefix}.running_var", self.running_var

    def spec(self):
        return dict(self.hp)


class ReLU(_Module):
    def forward(self, x, train):
        return T.relu(x)

    def spec(self):
        return dict(op="relu")


class MaxPool2d(_Module):
    def __init__(self, kernel):
        self.kernel = tuple(kernel)

    def forward(self, x, train):
        return T.maxpool2d(x, self.kernel)

    def spec(self):
        return dict(op="maxpool2d", kernel=list(self.kernel))


class GlobalAvgPool(_Module):
    def forward(self, x, train):
        return T.global_avg_pool(x)

    def spec(self):
        return dict(op="global_avg_pool")


class Flatten(_Module):
    def forward(self, x, train):
        return T.flatten(x)

    def spec(self):
        return dict(op="flatten")


class Linear(_Module):
    def __init__(self, n_in, n_out, *, rng, dtype):
        self.hp = dict(op="linear", n_in=n_in, n_out=n_out)
        self.weight = Parameter(_kaiming_uniform(rng, (n_out, n_in), n_in, dtype),
                                name="weight")
        self.bias = Parameter(np.zeros(n_out, dtype), name="bias")

    def forward(self, x, train):
        return T.linear(x, self.weight, self.bias)

    def named_parameters(self, prefix):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias

    def spec(self):
        return dict(self.hp)


class ResBlock1d(_Module):
    """conv-bn-relu-conv-bn plus a shortcut, relu after the add.

    The shortcut is a 1x1 conv + bn exactly when channels or stride change,
    identity otherwise.
    """

    def __init__(self, c_in, c_out, k, *, dilation=1, stride_first=1, padding,
                 rng, dtype):
        self.hp = dict(op="resblock1d", c_in=c_in, c_out=c_out, k=k,
                       dilation=dilation, stride_first=stride_first, padding=padding)
        self.conv1 = Conv1d(c_in, c_out, k, stride=stride_first, dilation=dilation,
                            padding=padding, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm(c_out, dtype=dtype)
        self.conv2 = Conv1d(c_out, c_out, k, stride=1, dilation=dilation,
                            padding=padding, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm(c_out, dtype=dtype)
        if c_in != c_out or stride_first != 1:
            self.shortcut_conv = Conv1d(c_in, c_out, 1, stride=stride_first,
                                        rng=rng, dtype=dtype)
            self.shortcut_bn = BatchNorm(c_out, dtype=dtype)
        else:
            self.shortcut_conv = None
            self.shortcut_bn = None

    def forward(self, x, train):
        h = T.relu(self.bn1.forward(self.conv1.forward(x, train), train))
        h = self.bn2.forward(self.conv2.forward(h, train), train)
        if self.shortcut_conv is not None:
            s = self.shortcut_bn.forward(self.shortcut_conv.forward(x, train), train)
        else:
            s = x
        return T.relu(T.add(h, s))

    def _children(self):
        pairs = [("conv1", self.conv1), ("bn1", self.bn1),
                 ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.shortcut_conv is not None:
            pairs += [("shortcut_conv", self.shortcut_conv),
                      ("shortcut_bn", self.shortcut_bn)]
        return pairs

    def named_parameters(self, prefix):
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}.{name}")

    def state_arrays(self, prefix):
        for name, child in self._children():
            yield from child.state_arrays(f"{prefix}.{name}")

    def spec(self):
        return dict(self.hp)


class Network:
    """An ordered chain of modules plus metadata for checkpoints."""

    def __init__(self, kind, input_layout, embedding_dim, modules, dtype):
        self.kind = kind
        self.input_layout = input_layout
        self.embedding_dim = embedding_dim
        self.modules = list(modules)  # (name, module) pairs
        self.dtype = np.dtype(dtype)
        names = [pname for name, module in self.modules
                 for pname, _ in module.named_parameters(name)]
        if len(names) != len(set(names)):
            raise ValueError("duplicate parameter names")

    def forward(self, x: Tensor, train: bool) -> Tensor:
        for _, module in self.modules:
            x = module.forward(x, train)
        return x

    def named_parameters(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for name, module in self.modules:
            for pname, p in module.named_parameters(name):
                out[pname] = p
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, module in self.modules:
            for sname, arr in module.state_arrays(name):
                out[sname] = arr
        return out

    def bn_modules(self):
        for name, module in self.modules:
            if isinstance(module, BatchNorm):
                yield module
            elif isinstance(module, ResBlock1d):
                for _, child in module._children():
                    if isinstance(child, BatchNorm):
                        yield child

    def spec(self) -> dict:
        return {
            "kind": self.kind,
            "input_layout": self.input_layout,
            "embedding_dim": self.embedding_dim,
            "layers": [{"name": n, **m.spec()} for n, m in self.modules],
        }


def build_td_resnet7(seed: int = 0, dtype=np.float32) -> Network:
    """Dilated temporal ResNet: stem k=3, three k=7 blocks at dilation 1/2/4,
    all stride 1 with length-preserving padding, channels 16-24-32-48, then
    global average pooling to a 48-dim embedding."""
    rng = _init_rng(seed)
    mods = [
        ("stem.conv", Conv1d(N_MFCC, 16, 3, padding=1, rng=rng, dtype=dtype)),
        ("stem.bn", BatchNorm(16, dtype=dtype)),
        ("stem.relu", ReLU()),
        ("block1", ResBlock1d(16, 24, 7, dilation=1, padding=3, rng=rng, dtype=dtype)),
        ("block2", ResBlock1d(24, 32, 7, dilation=2, padding=6, rng=rng, dtype=dtype)),
        ("block3", ResBlock1d(32, 48, 7, dilation=4, padding=12, rng=rng, dtype=dtype)),
        ("pool", GlobalAvgPool()),
    ]
    return Network(TD_RESNET7, LAYOUT_TEMPORAL, 48, mods, dtype)


def build_tc_resnet8(seed: int = 0, dtype=np.float32) -> Network:
    """Temporal ResNet with k=9 blocks, first conv of each block stride 2
    (lengths 49 -> 25 -> 13 -> 7), channels 16-24-32-48, 48-dim embedding."""
    rng = _init_rng(seed)
    mods = [
        ("stem.conv", Conv1d(N_MFCC, 16, 3, padding=1, rng=rng, dtype=dtype)),
        ("stem.bn", BatchNorm(16, dtype=dtype)),
        ("stem.relu", ReLU()),
        ("block1", ResBlock1d(16, 24, 9, stride_first=2, padding=4, rng=rng, dtype=dtype)),
        ("block2", ResBlock1d(24, 32, 9, stride_first=2, padding=4, rng=rng, dtype=dtype)),
        ("block3", ResBlock1d(32, 48, 9, stride_first=2, padding=4, rng=rng, dtype=dtype)),
        ("pool", GlobalAvgPool()),
    ]
    return Network(TC_RESNET8, LAYOUT_TEMPORAL, 48, mods, dtype)


def build_cnn_trad_fpool3(seed: int = 0, dtype=np.float32) -> Network:
    """Two conv layers, frequency-only pooling, a 32-unit linear bottleneck
    and a 128-unit dense layer whose ReLU output is the embedding."""
    rng = _init_rng(seed)
    mods = [
        ("conv1", Conv2d(1, 64, (20, 8), bias=True, rng=rng, dtype=dtype)),
        ("relu1", ReLU()),
        ("pool", MaxPool2d((1, 3))),
        ("conv2", Conv2d(64, 64, (10, 4), bias=True, rng=rng, dtype=dtype)),
        ("relu2", ReLU()),
        ("flatten", Flatten()),
        ("linear", Linear(64 * 21 * 8, 32, rng=rng, dtype=dtype)),
        ("dense", Linear(32, 128, rng=rng, dtype=dtype)),
        ("relu3", ReLU()),
    ]
    return Network(CNN_TRAD_FPOOL3, LAYOUT_FRAMES, 128, mods, dtype)


def build_c64(seed: int = 0, dtype=np.float32) -> Network:
    """Four conv-bn-relu-pool blocks of 64 maps on the 49x40 image;
    flattening the final 3x2 maps gives a 384-dim embedding."""
    rng = _init_rng(seed)
    mods = []
    c_in = 1
    for i in range(1, 5):
        mods += [
            (f"block{i}.conv", Conv2d(c_in, 64, (3, 3), padding=(1, 1), rng=rng, dtype=dtype)),
            (f"block{i}.bn", BatchNorm(64, dtype=dtype)),
            (f"block{i}.relu", ReLU()),
            (f"block{i}.pool", MaxPool2d((2, 2))),
        ]
        c_in = 64
    mods.append(("flatten", Flatten()))
    return Network(C64, LAYOUT_FRAMES, 64 * 3 * 2, mods, dtype)


_BUILDERS = {
    TD_RESNET7: build_td_resnet7,
    TC_RESNET8: build_tc_resnet8,
    CNN_TRAD_FPOOL3: build_cnn_trad_fpool3,
    C64: build_c64,
}


def build_network(kind: str, seed: int = 0, dtype=np.float32) -> Network:
    if kind not in _BUILDERS:
        raise ValueError(f"unknown architecture {kind!r}; expected one of {ALL_KINDS}")
    return _BUILDERS[kind](seed=seed, dtype=dtype)


def batch_from_features(features, network: Network) -> np.ndarray:
    """Stack FeatureMatrix values into the array layout the network eats."""
    mats = list(features)
    if network.input_layout == LAYOUT_TEMPORAL:
        for m in mats:
            if m.layout != LAYOUT_TEMPORAL:
                raise LayoutMismatch(f"{network.kind} needs temporal-conv features")
        arr = np.stack([m.values for m in mats])  # (B, 40, 49)
    else:
        for m in mats:
            if m.layout != LAYOUT_FRAMES:
                raise LayoutMismatch(f"{network.kind} needs frame-major features")
        arr = np.stack([m.values for m in mats])[:, None, :, :]  # (B, 1, 49, 40)
    return arr.astype(network.dtype)


def embed(network: Network, features, train: bool) -> Tensor:
    """Run a batch of feature matrices through the network.

    Train mode records the backward graph and updates batchnorm running
    statistics; eval mode does neither.
    """
    if isinstance(features, np.ndarray):
        x = Tensor(features.astype(network.dtype, copy=False))
        out = _forward(network, x, train)
    else:
        x = Tensor(batch_from_features(features, network))
        out = _forward(network, x, train)
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"non-finite embedding from {network.kind}")
    return out


def _forward(network: Network, x: Tensor, train: bool) -> Tensor:
    if train:
        return network.forward(x, train=True)
    with T.no_grad():
        return network.forward(x, train=False)


def param_count(network: Network) -> int:
    return sum(p.size for p in network.parameters())
