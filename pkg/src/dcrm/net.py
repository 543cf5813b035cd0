"""Differentiable building blocks and the UNet heteroencoder.

Reverse mode is delegated to ``torch.autograd``; everything runs in float64
on the CPU.  :class:`Tape` wraps one forward graph so callers can pull
parameter gradients for an arbitrary output cotangent exactly once.
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

DTYPE = torch.float64
CKPT_MAGIC = b"DCRMCKPT"


class TapeConsumedError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


# --------------------------------------------------------------------------- ops


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None, padding: int = 1) -> torch.Tensor:
    """Channel-summed 2D correlation plus bias, stride 1."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {tuple(x.shape)}, filters {tuple(weight.shape)}")
    return F.conv2d(x, weight, bias, stride=1, padding=padding)


def relu(x: torch.Tensor) -> torch.Tensor:
    # where() gives slope 1 at x == 0
    return torch.where(x >= 0, x, torch.zeros_like(x))


def leaky_relu(x: torch.Tensor, slope: float = 0.2) -> torch.Tensor:
    return torch.where(x >= 0, x, slope * x)


def maxpool2(x: torch.Tensor) -> torch.Tensor:
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ValueError(f"max pooling needs even spatial dims, got {tuple(x.shape[-2:])}")
    return F.max_pool2d(x, kernel_size=2, stride=2)


def upsample2(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="nearest")


def batchnorm(x, scale, shift, running_mean, running_var, training: bool, momentum: float = 0.1, eps: float = 1e-5):
    return F.batch_norm(x, running_mean, running_var, scale, shift, training=training, momentum=momentum, eps=eps)


def dropout(x: torch.Tensor, p: float, training: bool, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


# ----------------------------------------------------------------------- network


@dataclass
class NetworkConfig:
    input_resolution: int = 33
    in_channels: int = 2
    out_channels: int = 1
    depth: int = 4
    base_channels: int = 8
    leaky_slope: float = 0.2
    dropout_p: float = 0.5
    dropout_blocks: int = 2
    kernel_size: int = 3
    upsample: str = "nearest"
    seed: int = 0

    @classmethod
    def full_size(cls, **overrides) -> "NetworkConfig":
        cfg = dict(input_resolution=128, depth=6, base_channels=32, dropout_blocks=3)
        cfg.update(overrides)
        return cls(**cfg)

    @property
    def working_resolution(self) -> int:
        """Internal resolution: the input is zero-padded up to a multiple of ``2**depth``."""
        m = 2**self.depth
        return m * math.ceil(self.input_resolution / m)

    def to_dict(self) -> dict:
        return asdict(self)


def _init_conv(conv: nn.Conv2d, gen: torch.Generator):
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        conv.weight.uniform_(-bound, bound, generator=gen)
        conv.bias.uniform_(-bound, bound, generator=gen)


class ConvBN(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1, dtype=DTYPE)
        self.bn = nn.BatchNorm2d(cout, dtype=DTYPE)

    def forward(self, x):
        return batchnorm(
            conv2d(x, self.conv.weight, self.conv.bias),
            self.bn.weight, self.bn.bias, self.bn.running_mean, self.bn.running_var,
            training=self.training,
        )


class ContractingBlock(nn.Module):
    def __init__(self, cin: int, slope: float, dropout_p: float):
        super().__init__()
        self.c1 = ConvBN(cin, 2 * cin)
        self.c2 = ConvBN(2 * cin, 2 * cin)
        self.slope = slope
        self.dropout_p = dropout_p

    def forward(self, x, generator=None):
        x = leaky_relu(self.c1(x), self.slope)
        x = leaky_relu(self.c2(x), self.slope)
        x = dropout(x, self.dropout_p, self.training, generator)
        return maxpool2(x), x


class ExpandingBlock(nn.Module):
    def __init__(self, cin: int):
        super().__init__()
        self.c1 = ConvBN(2 * cin, cin // 2)
        self.c2 = ConvBN(cin // 2, cin // 2)

    def forward(self, x, skip):
        x = torch.cat([upsample2(x), skip], dim=1)
        x = relu(self.c1(x))
        return relu(self.c2(x))


class UNet(nn.Module):
    """Input convolution, ``depth`` contracting and expanding blocks, output convolution."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        if config.kernel_size != 3 or config.upsample != "nearest":
            raise ValueError("only 3x3 kernels with nearest upsampling are supported")
        self.config = config
        c = config.base_channels
        self.inc = nn.Conv2d(config.in_channels, c, 3, padding=1, dtype=DTYPE)
        self.down = nn.ModuleList()
        for i in range(config.depth):
            p = config.dropout_p if i < config.dropout_blocks else 0.0
            self.down.append(ContractingBlock(c * 2**i, config.leaky_slope, p))
        self.up = nn.ModuleList(ExpandingBlock(c * 2 ** (config.depth - i)) for i in range(config.depth))
        self.outc = nn.Conv2d(c, config.out_channels, 3, padding=1, dtype=DTYPE)
        self.generator = torch.Generator().manual_seed(config.seed + 1)
        self.reset_parameters(config.seed)
        self.block_shapes: list = []

    def reset_parameters(self, seed: int):
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                _init_conv(m, gen)
            elif isinstance(m, nn.BatchNorm2d):
                m.reset_parameters()

    def forward(self, x: torch.Tensor, record_shapes: bool = False) -> torch.Tensor:
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2:] != (cfg.input_resolution,) * 2:
            raise ValueError(
                f"expected input [N, {cfg.in_channels}, {cfg.input_resolution}, {cfg.input_resolution}], "
                f"got {tuple(x.shape)}"
            )
        extra = cfg.working_resolution - cfg.input_resolution
        lo = extra // 2
        if extra:
            x = F.pad(x, (lo, extra - lo, lo, extra - lo))
        shapes = []

        def rec(name, a, b):
            if record_shapes:
                shapes.append((name, tuple(a.shape), tuple(b.shape)))

        y = conv2d(x, self.inc.weight, self.inc.bias)
        rec("conv_in", x, y)
        skips = []
        for i, blk in enumerate(self.down):
            y_new, s = blk(y, self.generator)
            rec(f"contract_{i + 1}", y, y_new)
            skips.append(s)
            y = y_new
        for i, blk in enumerate(self.up):
            y_new = blk(y, skips[-1 - i])
            rec(f"expand_{i + 1}", y, y_new)
            y = y_new
        out = conv2d(y, self.outc.weight, self.outc.bias)
        rec("conv_out", y, out)
        if record_shapes:
            self.block_shapes = shapes
        if extra:
            out = out[..., lo : lo + cfg.input_resolution, lo : lo + cfg.input_resolution]
        return out


def build_network(config: NetworkConfig) -> UNet:
    return UNet(config)


# -------------------------------------------------------------------- tape / grad


@dataclass
class Tape:
    """One recorded forward graph: the output and the parameters it depends on."""

    output: torch.Tensor
    params: list
    names: list
    consumed: bool = field(default=False)


def unet_forward(model: UNet, inputs, mode: str = "train") -> tuple[torch.Tensor, Tape]:
    """Forward pass in ``train`` or ``eval`` mode, returning the output and its tape."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    model.train(mode == "train")
    x = torch.as_tensor(inputs, dtype=DTYPE)
    out = model(x)
    names, params = zip(*[(n, p) for n, p in model.named_parameters() if p.requires_grad])
    return out, Tape(out, list(params), list(names))


def backward(tape: Tape, cotangent) -> dict:
    """Vector-Jacobian product of the recorded graph; a tape can be consumed once."""
    if tape.consumed:
        raise TapeConsumedError("tape already consumed by a previous backward pass")
    cot = torch.as_tensor(cotangent, dtype=DTYPE)
    if cot.shape != tape.output.shape:
        raise ValueError(f"cotangent shape {tuple(cot.shape)} != output shape {tuple(tape.output.shape)}")
    grads = torch.autograd.grad(tape.output, tape.params, grad_outputs=cot, allow_unused=True)
    tape.consumed = True
    return {
        n: (torch.zeros_like(p) if g is None else g) for n, p, g in zip(tape.names, tape.params, grads)
    }


# --------------------------------------------------------------------- checkpoint


def _state_tensors(model: UNet):
    return [(k, v) for k, v in model.state_dict().items() if v.is_floating_point()]


def save_checkpoint(model: UNet, path, meta: Optional[dict] = None) -> None:
    """``DCRMCKPT`` + u32 JSON length + JSON config echo + f64 tensors in declaration order."""
    header = json.dumps({"network": model.config.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for _, t in _state_tensors(model):
        buf.write(t.detach().to(DTYPE).contiguous().numpy().astype("<f8").tobytes())
    with open(os.fspath(path), "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[UNet, dict]:
    with open(os.fspath(path), "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    if len(raw) < 12:
        raise CheckpointError("truncated checkpoint header")
    (n,) = struct.unpack_from("<I", raw, 8)
    try:
        header = json.loads(raw[12 : 12 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    model = UNet(NetworkConfig(**header["network"]))
    pos = 12 + n
    state = model.state_dict()
    for k, t in _state_tensors(model):
        nbytes = t.numel() * 8
        if pos + nbytes > len(raw):
            raise CheckpointError(f"truncated checkpoint payload at {k}")
        arr = torch.frombuffer(bytearray(raw[pos : pos + nbytes]), dtype=DTYPE).reshape(t.shape)
        state[k] = arr.clone()
        pos += nbytes
    if pos != len(raw):
        raise CheckpointError("checkpoint payload size does not match its config")
    model.load_state_dict(state)
    return model, header.get("meta", {})
