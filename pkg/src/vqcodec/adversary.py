"""Waveform discriminators and GAN losses.

Two families: period discriminators that fold the waveform into a
[T/p, p] grid to expose periodic artifacts, and spectrogram discriminators
that run 2-D stacks over STFT magnitudes at several resolutions.  Both are
trained with least-squares GAN losses plus an L1 feature-matching term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from vqcodec import dsp, nd
from vqcodec.errors import CodecError, ConfigError
from vqcodec.nn import Conv2d, Module

LEAKY_SLOPE = 0.1


@dataclass(frozen=True)
class MpdConfig:
    periods: tuple = (2, 3, 5, 7, 11)
    channels: tuple = (16, 32, 64, 128)
    kernel: tuple = (5, 3)
    stride: tuple = (3, 1)

    def __post_init__(self):
        if len(set(self.periods)) != len(self.periods) or min(self.periods) < 2:
            raise ConfigError(f"periods must be distinct and >= 2, got {self.periods}")


@dataclass(frozen=True)
class MsStftConfig:
    n_ffts: tuple = (512, 1024, 2048)
    hops: tuple | None = None
    channels: tuple = (16, 32, 64, 128)
    kernel: tuple = (3, 3)
    stride: tuple = (2, 2)

    def __post_init__(self):
        hops = self.hops if self.hops is not None else tuple(n // 4 for n in self.n_ffts)
        object.__setattr__(self, "hops", tuple(hops))
        if len(self.hops) != len(self.n_ffts):
            raise ConfigError("n_ffts and hops must have the same length")
        for n in self.n_ffts:
            if n < 2 or n & (n - 1):
                raise ConfigError(f"n_fft values must be powers of two, got {n}")


@dataclass
class DiscOutput:
    logits: nd.Tensor
    features: list = field(default_factory=list)


class _Stack2d(Module):
    """Shared conv2d tower: N strided layers with LeakyReLU, then a
    1-channel projection."""

    def __init__(self, channels, kernel, stride, post_kernel, rng, dtype):
        super().__init__()
        self.convs = []
        c_in = 1
        pad = (kernel[0] // 2, kernel[1] // 2)
        for c_out in channels:
            self.convs.append(
                Conv2d(c_in, c_out, kernel, stride=stride, padding=pad,
                       rng=rng, dtype=dtype)
            )
            c_in = c_out
        self.conv_post = Conv2d(
            c_in, 1, post_kernel, stride=(1, 1),
            padding=(post_kernel[0] // 2, post_kernel[1] // 2),
            rng=rng, dtype=dtype,
        )

    def __call__(self, x) -> DiscOutput:
        features = []
        for conv in self.convs:
            x = nd.leaky_relu(conv(x), LEAKY_SLOPE)
            features.append(x)
        return DiscOutput(self.conv_post(x), features)


def fold_period(x, period):
    """Right-pad [B, 1, T] (reflect) to a multiple of ``period`` and fold to
    [B, 1, T'/period, period]; columns index the periodic phase."""
    b, c, t = x.shape
    pad = (-t) % period
    if pad:
        flat = nd.reshape(x, (b * c, t))
        flat = nd.pad_reflect1d(flat, 0, pad)
        x = nd.reshape(flat, (b, c, t + pad))
        t += pad
    return nd.reshape(x, (b, c, t // period, period))


class PeriodDiscriminator(Module):
    """Config kernel/stride are (time, phase); the grid is processed with
    time innermost (transposed) for memory locality -- identical math."""

    def __init__(self, period, cfg: MpdConfig, rng, dtype):
        super().__init__()
        self.period = period
        k_t, k_p = cfg.kernel
        s_t, s_p = cfg.stride
        self.stack = _Stack2d(cfg.channels, (k_p, k_t), (s_p, s_t), (1, 3),
                              rng, dtype)

    def __call__(self, x) -> DiscOutput:
        grid = fold_period(x, self.period)
        return self.stack(nd.transpose(grid, (0, 1, 3, 2)))


class MultiPeriodDiscriminator(Module):
    def __init__(self, cfg: MpdConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.subs = [PeriodDiscriminator(p, cfg, rng, dtype) for p in cfg.periods]

    def forward(self, x):
        return [sub(x) for sub in self.subs]


class SpectrogramDiscriminator(Module):
    """Runs on the time-major magnitude grid [B, 1, frames, bins]."""

    def __init__(self, n_fft, hop, cfg: MsStftConfig, rng, dtype):
        super().__init__()
        self.stft = dsp.StftConfig(n_fft=n_fft, hop=hop)
        self.stack = _Stack2d(cfg.channels, cfg.kernel, cfg.stride, (3, 1),
                              rng, dtype)

    def __call__(self, x) -> DiscOutput:
        b, _, t = x.shape
        mag = dsp.framed_magnitude(nd.reshape(x, (b, t)), self.stft)
        grid = nd.reshape(mag, (b, 1, mag.shape[1], mag.shape[2]))
        return self.stack(grid)


class MultiStftDiscriminator(Module):
    def __init__(self, cfg: MsStftConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.subs = [
            SpectrogramDiscriminator(n, h, cfg, rng, dtype)
            for n, h in zip(cfg.n_ffts, cfg.hops)
        ]

    def forward(self, x):
        return [sub(x) for sub in self.subs]


class DiscriminatorSet(Module):
    """MPD and MS-STFT discriminators evaluated together."""

    def __init__(self, mpd_cfg=None, msstft_cfg=None, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.mpd = MultiPeriodDiscriminator(mpd_cfg or MpdConfig(), rng, dtype=dtype)
        self.msstft = MultiStftDiscriminator(msstft_cfg or MsStftConfig(), rng, dtype=dtype)

    def forward(self, x):
        return self.mpd.forward(x) + self.msstft.forward(x)


def build_discriminators(seed, dtype=np.float32, mpd_cfg=None, msstft_cfg=None):
    rng = np.random.default_rng(seed)
    return DiscriminatorSet(mpd_cfg, msstft_cfg, rng=rng, dtype=dtype)


def lsgan_losses(real_logits, fake_logits):
    """Least-squares GAN losses summed over sub-discriminators.

    d_loss = sum_i mean((real_i - 1)^2) + mean(fake_i^2)
    g_loss = sum_i mean((fake_i - 1)^2)
    """
    if len(real_logits) != len(fake_logits):
        raise CodecError(
            f"{len(real_logits)} real vs {len(fake_logits)} fake logit sets"
        )
    d_loss = None
    g_loss = None
    for real, fake in zip(real_logits, fake_logits):
        d_term = nd.add(
            nd.mean(nd.power(nd.sub(real, 1.0), 2)),
            nd.mean(nd.power(fake, 2)),
        )
        g_term = nd.mean(nd.power(nd.sub(fake, 1.0), 2))
        d_loss = d_term if d_loss is None else nd.add(d_loss, d_term)
        g_loss = g_term if g_loss is None else nd.add(g_loss, g_term)
    return d_loss, g_loss


def feature_matching(real_features, fake_features):
    """Mean L1 distance over all (sub-discriminator, layer) feature pairs.

    Real features are treated as constants; during the generator step the
    discriminator parameters are frozen, so only the generator receives
    gradient.
    """
    if len(real_features) != len(fake_features):
        raise CodecError("feature structure mismatch between real and fake")
    total = None
    count = 0
    for real_list, fake_list in zip(real_features, fake_features):
        if len(real_list) != len(fake_list):
            raise CodecError("feature structure mismatch between real and fake")
        for real, fake in zip(real_list, fake_list):
            if real.shape != fake.shape:
                raise CodecError(
                    f"feature map shape mismatch: {real.shape} vs {fake.shape}"
                )
            term = nd.mean(nd.absolute(nd.sub(nd.stop_gradient(real), fake)))
            total = term if total is None else nd.add(total, term)
            count += 1
    if count == 0:
        raise CodecError("feature matching needs at least one feature map")
    return nd.mul(total, 1.0 / count)
