"""VQ-VAE generator: mirrored CNN encoder/decoder around the quantizer.

The encoder is an initial conv, N downsampling blocks (three residual
dilated units then a strided conv that doubles the channels), and a
residual two-layer LSTM.  The decoder reverses the flow: residual LSTM,
N upsampling blocks with the rate list reversed and channels halving, and
a final projection to one waveform channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

import numpy as np

from vqcodec import nd
from vqcodec.errors import CodecError, ConfigError
from vqcodec.nn import LSTM, Conv1d, ConvTranspose1d, Module, Snake
from vqcodec.quantizer import VectorQuantizer, VqConfig, VqOutput

RESIDUAL_DILATIONS = (1, 3, 9)
RESIDUAL_KERNEL = 7


@dataclass(frozen=True)
class ModelConfig:
    n_blocks: int
    rates: tuple
    base_channels: int
    vq: VqConfig
    sample_rate: int = 16000

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(self.rates))
        if len(self.rates) != self.n_blocks:
            raise ConfigError(
                f"{self.n_blocks} blocks need {self.n_blocks} rates, got {self.rates}"
            )
        if any(r < 1 for r in self.rates):
            raise ConfigError(f"rates must be >= 1, got {self.rates}")
        if self.vq.input_dim != self.final_channels:
            raise ConfigError(
                f"vq input_dim {self.vq.input_dim} != final channels "
                f"{self.final_channels}"
            )

    @property
    def downsample_rate(self):
        return prod(self.rates)

    @property
    def final_channels(self):
        return self.base_channels * 2 ** self.n_blocks

    @property
    def frame_rate(self):
        return self.sample_rate / self.downsample_rate


def preset(name, codebook_size=None, code_dim=8):
    """Architecture presets.

    base: N=4, rates (2,4,5,5), channels 32..512, K=8192
    big:  N=5, rates (2,2,5,5,2), channels 48..1536, K=8192
    toy:  N=3, rates (2,4,5), channels 8..64, K=64 (desk-scale runs)
    """
    table = {
        "base": dict(n_blocks=4, rates=(2, 4, 5, 5), base_channels=32, k=8192),
        "big": dict(n_blocks=5, rates=(2, 2, 5, 5, 2), base_channels=48, k=8192),
        "toy": dict(n_blocks=3, rates=(2, 4, 5), base_channels=8, k=64),
    }
    if name not in table:
        raise ConfigError(f"unknown preset '{name}' (choose from {sorted(table)})")
    spec = table[name]
    final = spec["base_channels"] * 2 ** spec["n_blocks"]
    vq = VqConfig(
        input_dim=final,
        code_dim=code_dim,
        codebook_size=codebook_size if codebook_size is not None else spec["k"],
    )
    return ModelConfig(
        n_blocks=spec["n_blocks"],
        rates=spec["rates"],
        base_channels=spec["base_channels"],
        vq=vq,
    )


class ResidualUnit(Module):
    """snake -> dilated conv (K=7, same padding) -> snake -> 1x1 conv, + skip."""

    def __init__(self, channels, dilation, rng, dtype):
        super().__init__()
        self.snake1 = Snake(channels, dtype=dtype)
        self.conv1 = Conv1d(channels, channels, RESIDUAL_KERNEL, dilation=dilation,
                            padding=dilation * (RESIDUAL_KERNEL - 1) // 2,
                            rng=rng, dtype=dtype)
        self.snake2 = Snake(channels, dtype=dtype)
        self.conv2 = Conv1d(channels, channels, 1, rng=rng, dtype=dtype)

    def __call__(self, x):
        y = self.conv2(self.snake2(self.conv1(self.snake1(x))))
        return nd.add(x, y)


class EncoderBlock(Module):
    """Residual units then a strided conv that downsamples by ``rate``."""

    def __init__(self, channels, rate, rng, dtype):
        super().__init__()
        self.rate = rate
        self.units = [ResidualUnit(channels, d, rng, dtype) for d in RESIDUAL_DILATIONS]
        self.snake = Snake(channels, dtype=dtype)
        # K = 2r with padding ceil(r/2) keeps T_out = T / r exactly
        self.down = Conv1d(channels, channels * 2, 2 * rate, stride=rate,
                           padding=(rate + 1) // 2, rng=rng, dtype=dtype)

    def __call__(self, x):
        for unit in self.units:
            x = unit(x)
        return self.down(self.snake(x))


class DecoderBlock(Module):
    """Strided transposed conv that upsamples by ``rate``, then units."""

    def __init__(self, channels, rate, rng, dtype):
        super().__init__()
        self.rate = rate
        self.snake = Snake(channels, dtype=dtype)
        self.up = ConvTranspose1d(channels, channels // 2, 2 * rate, stride=rate,
                                  padding=0, rng=rng, dtype=dtype)
        # trim K - r samples so T_out = T * r exactly
        self.trim_left = (rate + 1) // 2
        self.trim_right = rate - self.trim_left
        self.units = [ResidualUnit(channels // 2, d, rng, dtype)
                      for d in RESIDUAL_DILATIONS]

    def __call__(self, x):
        t_in = x.shape[2]
        y = self.up(self.snake(x))
        y = nd.narrow(y, 2, self.trim_left, t_in * self.rate)
        for unit in self.units:
            y = unit(y)
        return y


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        c = cfg.base_channels
        self.conv_in = Conv1d(1, c, RESIDUAL_KERNEL, padding=3, rng=rng, dtype=dtype)
        self.blocks = []
        for rate in cfg.rates:
            self.blocks.append(EncoderBlock(c, rate, rng, dtype))
            c *= 2
        self.lstm = LSTM(c, c, layers=2, rng=rng, dtype=dtype)

    def __call__(self, x):
        h = self.conv_in(x)
        for block in self.blocks:
            h = block(h)
        seq = nd.transpose(h, (0, 2, 1))
        seq = nd.add(seq, self.lstm(seq))
        return nd.transpose(seq, (0, 2, 1))


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        c = cfg.final_channels
        self.lstm = LSTM(c, c, layers=2, rng=rng, dtype=dtype)
        self.blocks = []
        for rate in reversed(cfg.rates):
            self.blocks.append(DecoderBlock(c, rate, rng, dtype))
            c //= 2
        self.snake_out = Snake(c, dtype=dtype)
        self.conv_out = Conv1d(c, 1, RESIDUAL_KERNEL, padding=3, rng=rng, dtype=dtype)

    def __call__(self, z_d):
        seq = nd.transpose(z_d, (0, 2, 1))
        seq = nd.add(seq, self.lstm(seq))
        y = nd.transpose(seq, (0, 2, 1))
        for block in self.blocks:
            y = block(y)
        return self.conv_out(self.snake_out(y))


@dataclass
class GeneratorOutput:
    reconstruction: nd.Tensor
    vq: VqOutput


class Generator(Module):
    """Encoder, vector quantizer, and mirrored decoder."""

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng, dtype)
        self.quantizer = VectorQuantizer(cfg.vq, rng, dtype=dtype)
        self.decoder = Decoder(cfg, rng, dtype)

    def encode(self, x) -> nd.Tensor:
        """[B, 1, T] -> latents [B, final_channels, T/R]; T must divide by R."""
        x = x if isinstance(x, nd.Tensor) else nd.Tensor(x)
        if x.ndim != 3 or x.shape[1] != 1:
            raise CodecError(f"encode expects [B, 1, T], got {x.shape}")
        r = self.cfg.downsample_rate
        if x.shape[2] % r != 0:
            raise CodecError(
                f"input length {x.shape[2]} is not a multiple of the "
                f"downsampling rate {r}"
            )
        return self.encoder(x)

    def decode(self, z_d) -> nd.Tensor:
        """[B, final_channels, T_h] -> waveform [B, 1, R*T_h]."""
        return self.decoder(z_d)

    def forward(self, x) -> GeneratorOutput:
        h = self.encode(x)
        vq = self.quantizer.forward(h)
        return GeneratorOutput(self.decode(vq.z_d), vq)

    def encode_to_indices(self, x) -> np.ndarray:
        """[B, 1, T] -> code indices [B, T/R] (no gradients)."""
        with nd.no_grad():
            h = self.encode(x)
            vq = self.quantizer.forward(h)
        return vq.indices

    def decode_from_indices(self, indices) -> np.ndarray:
        """Code indices [B, T_h] -> waveform [B, 1, R*T_h] (no gradients)."""
        with nd.no_grad():
            z_d = self.quantizer.decode_indices(indices)
            out = self.decode(z_d)
        return out.data


def build(cfg: ModelConfig, seed, dtype=np.float32) -> Generator:
    """Deterministically initialize a generator from a seed."""
    rng = np.random.default_rng(seed)
    return Generator(cfg, rng, dtype=dtype)


def count_params(module: Module) -> int:
    """Number of learnable scalars."""
    return module.count_params()
