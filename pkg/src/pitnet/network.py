"""Model graphs: named parameters, forward with cached activations, exact
hand-derived backward, and the two classifier architectures.

``build_proposed_model`` is the dilated residual net: a three-conv stem,
three residual modules where the last one trades stride for dilation 2 (so
the final feature map keeps its extent), adaptive average pooling to a
small grid, and a 3x3 conv classifier emitting 1x1 logits per class. There
is no max-pooling and no fully connected layer.

``build_light_resnet`` is the width-matched reference: a 7x7 stride-2 stem,
a stride-2 average pool where a max-pool would normally sit, and the first
three residual stages at the same widths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import ConfigError, ShapeError, StateError


@dataclass
class Param:
    """A named tensor. ``kind`` is "param" for learned weights and "buffer"
    for running statistics; only params count toward the parameter total."""
    name: str
    data: np.ndarray
    trainable: bool = True
    kind: str = "param"


class Conv:
    def __init__(self, name, in_ch, out_ch, kernel, stride=1, padding=0,
                 dilation=1, bias=False, *, rng, dtype):
        # Kaiming normal, fan-out, ReLU gain.
        std = math.sqrt(2.0 / (out_ch * kernel * kernel))
        w = rng.normal(0.0, std, size=(out_ch, in_ch, kernel, kernel))
        self.weight = Param(f"{name}.weight", w.astype(dtype))
        self.bias = Param(f"{name}.bias", np.zeros(out_ch, dtype=dtype)) if bias else None
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self._cache = None

    def forward(self, x, training):
        b = self.bias.data if self.bias is not None else None
        y, self._cache = layers.conv2d_forward(
            x, self.weight.data, b, self.stride, self.padding, self.dilation)
        return y

    def backward(self, grad, table):
        gx, gw, gb = layers.conv2d_backward(grad, self._cache)
        if self.weight.trainable:
            table[self.weight.name] = gw
        if self.bias is not None and self.bias.trainable:
            table[self.bias.name] = gb
        return gx

    def params(self):
        yield self.weight
        if self.bias is not None:
            yield self.bias


class BatchNorm:
    def __init__(self, name, channels, *, dtype):
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = Param(f"{name}.running_mean",
                                  np.zeros(channels, dtype=dtype),
                                  trainable=False, kind="buffer")
        self.running_var = Param(f"{name}.running_var",
                                 np.ones(channels, dtype=dtype),
                                 trainable=False, kind="buffer")
        self._cache = None

    def forward(self, x, training):
        y, self._cache = layers.batchnorm2d_forward(
            x, self.gamma.data, self.beta.data,
            self.running_mean.data, self.running_var.data, training)
        return y

    def backward(self, grad, table):
        gx, ggamma, gbeta = layers.batchnorm2d_backward(grad, self._cache)
        if self.gamma.trainable:
            table[self.gamma.name] = ggamma
        if self.beta.trainable:
            table[self.beta.name] = gbeta
        return gx

    def params(self):
        yield from (self.gamma, self.beta, self.running_mean, self.running_var)


class ConvBlock:
    """conv -> batchnorm -> optional ReLU. The conv carries no bias."""

    def __init__(self, name, in_ch, out_ch, kernel, stride=1, padding=0,
                 dilation=1, relu=True, *, rng, dtype):
        self.conv = Conv(f"{name}.conv", in_ch, out_ch, kernel, stride,
                         padding, dilation, bias=False, rng=rng, dtype=dtype)
        self.bn = BatchNorm(f"{name}.bn", out_ch, dtype=dtype)
        self.relu = relu
        self._mask = None

    def forward(self, x, training):
        y = self.bn.forward(self.conv.forward(x, training), training)
        if self.relu:
            y, self._mask = layers.relu_forward(y)
        return y

    def backward(self, grad, table):
        if self.relu:
            grad = layers.relu_backward(grad, self._mask)
        return self.conv.backward(self.bn.backward(grad, table), table)

    def params(self):
        yield from self.conv.params()
        yield from self.bn.params()


class BasicBlock:
    """Two 3x3 conv blocks plus a skip connection and a post-add ReLU.

    The skip is the identity when shapes allow, otherwise a 1x1 projection
    conv block (no ReLU) matching stride and channels.
    """

    def __init__(self, name, in_ch, out_ch, stride=1, dilation=1, *, rng, dtype):
        pad = dilation  # keeps extent for 3x3 kernels at stride 1
        self.conv1 = ConvBlock(f"{name}.conv1", in_ch, out_ch, 3, stride,
                               pad, dilation, relu=True, rng=rng, dtype=dtype)
        self.conv2 = ConvBlock(f"{name}.conv2", out_ch, out_ch, 3, 1,
                               pad, dilation, relu=False, rng=rng, dtype=dtype)
        if in_ch != out_ch or stride != 1:
            self.shortcut = ConvBlock(f"{name}.shortcut", in_ch, out_ch, 1,
                                      stride, 0, 1, relu=False, rng=rng, dtype=dtype)
        else:
            self.shortcut = None
        self._mask = None

    def forward(self, x, training):
        main = self.conv2.forward(self.conv1.forward(x, training), training)
        skip = self.shortcut.forward(x, training) if self.shortcut else x
        y, self._mask = layers.relu_forward(layers.residual_add(main, skip))
        return y

    def backward(self, grad, table):
        grad = layers.relu_backward(grad, self._mask)
        gx = self.conv1.backward(self.conv2.backward(grad, table), table)
        if self.shortcut:
            gx = gx + self.shortcut.backward(grad, table)
        else:
            gx = gx + grad
        return gx

    def params(self):
        yield from self.conv1.params()
        yield from self.conv2.params()
        if self.shortcut:
            yield from self.shortcut.params()


class PoolToTarget:
    """Adaptive average pool to a fixed target grid."""

    def __init__(self, target):
        self.target = target
        self._cache = None

    def forward(self, x, training):
        y, self._cache = layers.adaptive_avgpool2d_forward(x, self.target)
        return y

    def backward(self, grad, table):
        return layers.adaptive_avgpool2d_backward(grad, self._cache)

    def params(self):
        return iter(())


class PoolHalf:
    """Stride-2 average pool (the max-pool stand-in in the reference stem)."""

    def __init__(self):
        self._cache = None

    def forward(self, x, training):
        target = ((x.shape[2] + 1) // 2, (x.shape[3] + 1) // 2)
        y, self._cache = layers.adaptive_avgpool2d_forward(x, target)
        return y

    def backward(self, grad, table):
        return layers.adaptive_avgpool2d_backward(grad, self._cache)

    def params(self):
        return iter(())


@dataclass
class ModelConfig:
    input_size: tuple = (224, 224)
    stem_channels: tuple = (32, 32, 64)
    module_channels: tuple = (64, 128, 256)
    blocks_per_module: int = 2
    module3_dilation: int = 2
    classifier_pool: tuple = (3, 3)
    class_count: int = 4

    def __post_init__(self):
        for extent in self.classifier_pool:
            if extent not in (1, 3):
                raise ConfigError(
                    "classifier_pool extents must be 1 or 3 so the 3x3 "
                    f"classifier can emit 1x1 logits, got {self.classifier_pool}")
        if len(self.stem_channels) != 3 or len(self.module_channels) != 3:
            raise ConfigError("stem_channels and module_channels must have 3 entries")
        if self.blocks_per_module < 1:
            raise ConfigError("blocks_per_module must be >= 1")
        if self.class_count < 2:
            raise ConfigError("class_count must be >= 2")
        if self.module3_dilation < 1:
            raise ConfigError("module3_dilation must be >= 1")


class Model:
    """An ordered stack of layers with a flat named-parameter table."""

    def __init__(self, kind, config, seq):
        self.kind = kind
        self.config = config
        self.seq = seq
        self._params = {}
        for layer in seq:
            for p in layer.params():
                if p.name in self._params:
                    raise ConfigError(f"duplicate parameter name {p.name}")
                self._params[p.name] = p
        self._forward_done = False

    def params(self):
        return list(self._params.values())

    def named(self):
        return dict(self._params)

    def param_count(self) -> int:
        """Element count of learned parameters; running stats excluded.
        Freezing does not change the count."""
        return sum(p.data.size for p in self._params.values() if p.kind == "param")

    def freeze(self, prefixes) -> list:
        frozen = []
        for prefix in prefixes:
            hit = False
            for p in self._params.values():
                if p.kind == "param" and p.name.startswith(prefix):
                    p.trainable = False
                    frozen.append(p.name)
                    hit = True
            if not hit:
                raise ConfigError(f"freeze prefix {prefix!r} matches no parameter")
        return sorted(set(frozen))

    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (n, 3, h, w) input, got {x.shape}")
        for layer in self.seq:
            x = layer.forward(x, training)
        n, c, h, w = x.shape
        if (h, w) != (1, 1):
            raise ShapeError(f"classifier produced {h}x{w} logits, expected 1x1")
        self._forward_done = True
        return x.reshape(n, c)

    def backward(self, grad_logits: np.ndarray) -> dict:
        """Gradients for every trainable parameter, keyed by name."""
        if not self._forward_done:
            raise StateError("backward called before forward")
        grad = grad_logits.reshape(grad_logits.shape[0], grad_logits.shape[1], 1, 1)
        table = {}
        for layer in reversed(self.seq):
            grad = layer.backward(grad, table)
        self._forward_done = False
        return table


def _classifier(config, in_ch, rng, dtype):
    # Padding chosen so a 3x3 kernel maps the pool target to 1x1 logits.
    pad = 0 if config.classifier_pool[0] == 3 else 1
    return Conv("classifier", in_ch, config.class_count, 3, 1, pad, 1,
                bias=True, rng=rng, dtype=dtype)


def _residual_module(name, in_ch, out_ch, first_stride, dilation, count, rng, dtype):
    blocks = [BasicBlock(f"{name}.0", in_ch, out_ch, first_stride, dilation,
                         rng=rng, dtype=dtype)]
    for b in range(1, count):
        blocks.append(BasicBlock(f"{name}.{b}", out_ch, out_ch, 1, dilation,
                                 rng=rng, dtype=dtype))
    return blocks


def build_proposed_model(config: ModelConfig = None, seed: int = 0,
                         dtype=np.float32) -> Model:
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    s0, s1, s2 = config.stem_channels
    m1, m2, m3 = config.module_channels
    seq = [
        ConvBlock("stem.0", 3, s0, 3, 2, 1, rng=rng, dtype=dtype),
        ConvBlock("stem.1", s0, s1, 3, 1, 1, rng=rng, dtype=dtype),
        ConvBlock("stem.2", s1, s2, 3, 1, 1, rng=rng, dtype=dtype),
    ]
    n = config.blocks_per_module
    seq += _residual_module("module1", s2, m1, 1, 1, n, rng, dtype)
    seq += _residual_module("module2", m1, m2, 2, 1, n, rng, dtype)
    # Module 3 keeps its extent: stride 1 with dilation instead.
    seq += _residual_module("module3", m2, m3, 1, config.module3_dilation,
                            n, rng, dtype)
    seq.append(PoolToTarget(config.classifier_pool))
    seq.append(_classifier(config, m3, rng, dtype))
    return Model("proposed", config, seq)


def build_light_resnet(config: ModelConfig = None, seed: int = 0,
                       dtype=np.float32) -> Model:
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    m1, m2, m3 = config.module_channels
    seq = [
        ConvBlock("stem.0", 3, m1, 7, 2, 3, rng=rng, dtype=dtype),
        PoolHalf(),
    ]
    n = config.blocks_per_module
    seq += _residual_module("module1", m1, m1, 1, 1, n, rng, dtype)
    seq += _residual_module("module2", m1, m2, 2, 1, n, rng, dtype)
    seq += _residual_module("module3", m2, m3, 2, 1, n, rng, dtype)
    seq.append(PoolToTarget(config.classifier_pool))
    seq.append(_classifier(config, m3, rng, dtype))
    return Model("light_resnet", config, seq)


MODEL_BUILDERS = {
    "proposed": build_proposed_model,
    "light_resnet": build_light_resnet,
}


def build_model(kind: str, config: ModelConfig = None, seed: int = 0,
                dtype=np.float32) -> Model:
    if kind not in MODEL_BUILDERS:
        raise ConfigError(f"unknown model kind {kind!r}; choose from "
                          f"{sorted(MODEL_BUILDERS)}")
    return MODEL_BUILDERS[kind](config, seed, dtype)
