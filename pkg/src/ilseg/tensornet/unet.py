"""Dual-head 3D U-Net built from the primitives in :mod:`ilseg.tensornet.ops`.

Layout for ``encoder_channels = [c0, c1, c2, c3]``::

    enc0: conv(in->c0) GN ReLU conv(c0->c0) GN ReLU          -- skip 0
    pool, enc1 (c0->c1), pool, enc2 (c1->c2), pool, enc3 (c2->c3)
    dec2: up(enc3) ++ skip 2 -> conv(c3+c2->c2) ... conv(c2->c2)
    dec1, dec0 likewise
    head: 1x1x1 conv(c0->out_channels), sigmoid per channel

Parameter names follow ``<block>.<layer>.<weight|bias>`` with layers ``conv1``,
``gn1``, ``conv2``, ``gn2``; iteration order of ``Network.params`` is
enc0..enc3, dec2..dec0, head, and checkpoints preserve it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops

FULL_CHANNELS = (8, 16, 32, 64)
DESK_CHANNELS = (4, 8, 16, 32)


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 1
    out_channels: int = 2
    encoder_channels: tuple = FULL_CHANNELS
    groupnorm_groups: int = 4
    precision: str = "f32"

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        ch = self.encoder_channels
        if self.in_channels not in (1, 2) or self.out_channels not in (1, 2):
            raise ValueError("in_channels and out_channels must be 1 or 2")
        if len(ch) != 4 or any(b <= a for a, b in zip(ch, ch[1:])) or ch[0] < 1:
            raise ValueError(f"encoder_channels must be 4 strictly increasing positives, got {ch}")
        if self.groupnorm_groups < 1 or any(c % self.groupnorm_groups for c in ch):
            raise ValueError(f"groupnorm_groups={self.groupnorm_groups} must divide every encoder width {ch}")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be 'f32' or 'f64'")

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32

    def to_dict(self):
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _block_specs(cfg: UNetConfig):
    """(block name, input channels, output channels) for every double-conv block."""
    c = cfg.encoder_channels
    specs = [("enc0", cfg.in_channels, c[0])]
    specs += [(f"enc{i}", c[i - 1], c[i]) for i in (1, 2, 3)]
    specs += [(f"dec{i}", c[i + 1] + c[i], c[i]) for i in (2, 1, 0)]
    return specs


def parameter_shapes(cfg: UNetConfig) -> dict:
    shapes = {}
    for name, cin, cout in _block_specs(cfg):
        shapes[f"{name}.conv1.weight"] = (cout, cin, 3, 3, 3)
        shapes[f"{name}.conv1.bias"] = (cout,)
        shapes[f"{name}.gn1.weight"] = (cout,)
        shapes[f"{name}.gn1.bias"] = (cout,)
        shapes[f"{name}.conv2.weight"] = (cout, cout, 3, 3, 3)
        shapes[f"{name}.conv2.bias"] = (cout,)
        shapes[f"{name}.gn2.weight"] = (cout,)
        shapes[f"{name}.gn2.bias"] = (cout,)
    shapes["head.weight"] = (cfg.out_channels, cfg.encoder_channels[0], 1, 1, 1)
    shapes["head.bias"] = (cfg.out_channels,)
    return shapes


def is_decayed(name: str) -> bool:
    """Only convolution kernels take weight decay; biases and norm affines do not."""
    return name.endswith(".weight") and ".gn" not in name


@dataclass
class Network:
    config: UNetConfig
    params: dict
    _tape: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        expected = parameter_shapes(self.config)
        if list(self.params) != list(expected):
            raise ValueError("parameter names/order do not match the configuration")
        for name, shape in expected.items():
            p = self.params[name]
            if p.shape != shape:
                raise ValueError(f"{name}: shape {p.shape}, expected {shape}")
            if not np.isfinite(p).all():
                raise ValueError(f"{name}: non-finite values")

    def copy(self) -> "Network":
        return Network(self.config, {k: v.copy() for k, v in self.params.items()})

    # ------------------------------------------------------------------ forward

    def _conv(self, x, name):
        y, cache = ops.conv3d_forward(x, self.params[name + ".weight"], self.params[name + ".bias"])
        self._tape.append(("conv", name, cache))
        return y

    def _gn_relu(self, x, name):
        y, cache = ops.groupnorm_forward(
            x, self.params[name + ".weight"], self.params[name + ".bias"], self.config.groupnorm_groups
        )
        self._tape.append(("gn", name, cache))
        y, mask = ops.relu_forward(y)
        self._tape.append(("relu", None, mask))
        return y

    def _block(self, x, name):
        x = self._gn_relu(self._conv(x, f"{name}.conv1"), f"{name}.gn1")
        return self._gn_relu(self._conv(x, f"{name}.conv2"), f"{name}.gn2")

    def forward_logits(self, x):
        cfg = self.config
        if x.ndim != 5 or x.shape[1] != cfg.in_channels:
            raise ops.ShapeError(f"expected (B, {cfg.in_channels}, Z, Y, X) input, got {x.shape}")
        if any(s % 8 for s in x.shape[2:]):
            raise ops.ShapeError(f"spatial dims must be divisible by 8, got {x.shape[2:]}")
        self._tape = []
        x = np.asarray(x, dtype=cfg.dtype)
        skips = []
        for level in range(4):
            if level:
                x, cache = ops.maxpool2_forward(x)
                self._tape.append(("pool", level - 1, cache))
            x = self._block(x, f"enc{level}")
            skips.append(x)
        for level in (2, 1, 0):
            x, shape = ops.upsample2_forward(x)
            self._tape.append(("up", None, shape))
            x, sizes = ops.concat_forward([skips[level], x])
            self._tape.append(("cat", level, sizes))
            x = self._block(x, f"dec{level}")
        return self._conv(x, "head")

    def forward(self, x):
        """Per-channel sigmoid probabilities, same spatial shape as ``x``."""
        p, cache = ops.sigmoid_forward(self.forward_logits(x))
        self._tape.append(("sigmoid", None, cache))
        return p

    # ------------------------------------------------------------------ backward

    def backward(self, dout):
        """Gradients of a scalar loss given d(loss)/d(output of the last forward call).

        Returns ``(grads, dinput)`` with ``grads`` ordered like ``params``.
        """
        if not self._tape:
            raise RuntimeError("backward called without a preceding forward")
        grads = {}
        skip_grads = {}
        g = dout
        for kind, name, cache in reversed(self._tape):
            if kind == "sigmoid":
                g = ops.sigmoid_backward(g, cache)
            elif kind == "conv":
                g, grads[name + ".weight"], grads[name + ".bias"] = ops.conv3d_backward(g, cache)
            elif kind == "gn":
                g, grads[name + ".weight"], grads[name + ".bias"] = ops.groupnorm_backward(g, cache)
            elif kind == "relu":
                g = ops.relu_backward(g, cache)
            elif kind == "cat":
                skip_grads[name], g = ops.concat_backward(g, cache)
            elif kind == "up":
                g = ops.upsample2_backward(g, cache)
            elif kind == "pool":
                # the pooled tensor was also a skip input: merge both branches
                g = ops.maxpool2_backward(g, cache) + skip_grads.pop(name)
        self._tape = []
        return {k: grads[k] for k in self.params}, g

    def predict(self, x):
        """Forward pass without keeping the tape."""
        p = self.forward(x)
        self._tape = []
        return p


def init_parameters(config: UNetConfig, seed: int = 0) -> Network:
    """He-normal convolution kernels, zero biases, unit/zero group-norm affine."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if ".gn" in name:
            fill = 1.0 if name.endswith(".weight") else 0.0
            params[name] = np.full(shape, fill, dtype=config.dtype)
        elif name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=config.dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(config.dtype)
    return Network(config, params)


def unet_forward(net: Network, x):
    return net.forward(x)
