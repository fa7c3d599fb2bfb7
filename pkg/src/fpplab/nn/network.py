"""The configurable fringe-order CNN (plain stack or small UNet)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InvalidArgument
from . import autograd as ag
from .autograd import Tensor

ACTIVATIONS = ("relu", "leaky_relu")


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture of the order network.

    With ``downsample_levels > 0`` the network is a UNet: ``channels`` lists
    the width of each resolution level (so it has ``downsample_levels + 1``
    entries) and ``depth`` is the number of convolutions per block. With
    ``downsample_levels == 0`` it is a plain stack with one block per entry of
    ``channels``.

    ``coord_channels`` appends two fixed normalised-coordinate planes to the
    input; ``input_skip`` feeds the raw input to the output head;
    ``head_channels`` > 0 inserts a hidden 1x1 layer before the output.
    """

    in_channels: int = 1
    channels: tuple = (16, 32, 64)
    kernel_size: int = 3
    depth: int = 2
    downsample_levels: int = 2
    activation: str = "relu"
    coord_channels: bool = True
    input_skip: bool = True
    head_channels: int = 16

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise InvalidArgument("kernel_size must be a positive odd number")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"activation must be one of {ACTIVATIONS}")
        if self.depth < 1 or not self.channels or min(self.channels) < 1:
            raise InvalidArgument("need depth >= 1 and positive channel counts")
        if self.downsample_levels < 0:
            raise InvalidArgument("downsample_levels must be >= 0")
        if self.downsample_levels and len(self.channels) != self.downsample_levels + 1:
            raise InvalidArgument(f"a UNet with {self.downsample_levels} downsampling levels needs "
                                  f"{self.downsample_levels + 1} channel entries, got {len(self.channels)}")
        if self.in_channels < 1:
            raise InvalidArgument("in_channels must be >= 1")

    @property
    def total_in(self) -> int:
        return self.in_channels + (2 if self.coord_channels else 0)

    def to_dict(self) -> dict:
        return asdict(self)


def _conv_shapes(cfg: NetworkConfig) -> list:
    """(name, out, in, k) for every convolution, in forward order."""
    k = cfg.kernel_size
    shapes = []

    def block(prefix, cin, cout):
        for i in range(cfg.depth):
            shapes.append((f"{prefix}.conv{i}", cout, cin if i == 0 else cout, k))

    cin = cfg.total_in
    if cfg.downsample_levels == 0:
        for i, c in enumerate(cfg.channels):
            block(f"layer{i}", cin, c)
            cin = c
        last = cin
    else:
        for lvl, c in enumerate(cfg.channels):
            block(f"enc{lvl}", cin, c)
            cin = c
        for lvl in range(cfg.downsample_levels - 1, -1, -1):
            block(f"dec{lvl}", cin + cfg.channels[lvl], cfg.channels[lvl])
            cin = cfg.channels[lvl]
        last = cin
    head_in = last + (cfg.total_in if cfg.input_skip else 0)
    if cfg.head_channels:
        shapes.append(("head.hidden", cfg.head_channels, head_in, 1))
        head_in = cfg.head_channels
    shapes.append(("head.out", 1, head_in, 1))
    return shapes


def init_params(cfg: NetworkConfig, seed: int = 0) -> dict:
    """Kaiming-uniform fan-in initialisation, bound ``1/sqrt(fan_in)`` for weights and biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, o, i, k in _conv_shapes(cfg):
        bound = 1.0 / np.sqrt(i * k * k)
        params[f"{name}.weight"] = Tensor(rng.uniform(-bound, bound, (o, i, k, k)), requires_grad=True,
                                          name=f"{name}.weight")
        params[f"{name}.bias"] = Tensor(rng.uniform(-bound, bound, (o,)), requires_grad=True,
                                        name=f"{name}.bias")
    return params


def zero_params(cfg: NetworkConfig) -> dict:
    params = init_params(cfg, 0)
    for t in params.values():
        t.data[...] = 0.0
    return params


def coordinate_planes(h: int, w: int) -> np.ndarray:
    """(2, H, W) column and row coordinates scaled to [-1, 1]."""
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    return np.stack([np.broadcast_to(xs[None, :], (h, w)), np.broadcast_to(ys[:, None], (h, w))])


class OrderNet:
    """Forward pass of the order network over a parameter dictionary."""

    def __init__(self, cfg: NetworkConfig, params: dict | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)
        missing = [n for n, *_ in _conv_shapes(cfg) if f"{n}.weight" not in self.params]
        if missing:
            raise InvalidArgument(f"parameters missing for layers {missing}")

    def _act(self, t):
        return ag.relu(t) if self.cfg.activation == "relu" else ag.leaky_relu(t)

    def _conv(self, name, x, act=True):
        out = ag.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])
        return self._act(out) if act else out

    def _block(self, prefix, x):
        for i in range(self.cfg.depth):
            x = self._conv(f"{prefix}.conv{i}", x)
        return x

    def __call__(self, x) -> Tensor:
        return self.forward(x)

    def forward(self, x) -> Tensor:
        """Map a (C, H, W) input to the (1, H, W) raw order map k_o."""
        cfg = self.cfg
        x = ag.as_tensor(x)
        if x.ndim != 3 or x.shape[0] != cfg.in_channels:
            raise InvalidArgument(f"expected input of shape ({cfg.in_channels}, H, W), got {x.shape}")
        _, h, w = x.shape
        factor = 2 ** cfg.downsample_levels
        if h % factor or w % factor:
            raise InvalidArgument(f"input {h}x{w} is not divisible by {factor}")
        if cfg.coord_channels:
            x = ag.concat([x, Tensor(coordinate_planes(h, w))], axis=0)
        inp = x
        if cfg.downsample_levels == 0:
            for i in range(len(cfg.channels)):
                x = self._block(f"layer{i}", x)
        else:
            skips = []
            for lvl in range(len(cfg.channels)):
                if lvl:
                    x = ag.max_pool2d(x)
                x = self._block(f"enc{lvl}", x)
                skips.append(x)
            for lvl in range(cfg.downsample_levels - 1, -1, -1):
                x = ag.concat([ag.upsample2x(x), skips[lvl]], axis=0)
                x = self._block(f"dec{lvl}", x)
        if cfg.input_skip:
            x = ag.concat([x, inp], axis=0)
        if cfg.head_channels:
            x = self._conv("head.hidden", x)
        return self._conv("head.out", x, act=False)

    def parameters(self) -> list:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return int(sum(t.size for t in self.params.values()))


def forward(net: OrderNet, x) -> Tensor:
    return net.forward(x)


def network_input(phi_high, phi_low=None, mask=None) -> np.ndarray:
    """Stack phase maps into network input channels, scaled by 1/pi.

    Channel order is (high, low). Pixels outside ``mask`` are set to zero.
    """
    chans = [np.asarray(phi_high, dtype=np.float64) / np.pi]
    if phi_low is not None:
        chans.append(np.asarray(phi_low, dtype=np.float64) / np.pi)
    x = np.stack(chans)
    if mask is not None:
        x = x * np.asarray(mask, dtype=bool)[None]
    return x
