"""Spectral analysis: STFT magnitudes, mel filterbanks, the multi-scale
log-mel reconstruction loss, and the mel-cepstral-distortion metric.

The STFT is framing plus a matmul against a precomputed DFT basis, so its
gradient falls out of the tensor core without any complex arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct

from vqcodec import nd
from vqcodec.errors import CodecError, ConfigError

LOG_EPS = 1e-5

# (n_fft, n_mels) pairs for the reconstruction loss; hop is always n_fft/4
DEFAULT_MEL_SCALES = ((64, 5), (128, 8), (256, 16), (512, 32), (1024, 64), (2048, 128))


@dataclass(frozen=True)
class StftConfig:
    """Hann-windowed, reflect-center-padded STFT analysis settings."""

    n_fft: int
    hop: int

    def __post_init__(self):
        if self.n_fft < 2 or self.n_fft & (self.n_fft - 1):
            raise ConfigError(f"n_fft must be a power of two, got {self.n_fft}")
        if self.hop <= 0 or self.hop > self.n_fft:
            raise ConfigError(f"hop must lie in (0, n_fft], got {self.hop}")

    @property
    def n_bins(self):
        return self.n_fft // 2 + 1


@dataclass(frozen=True)
class MelScaleSpec:
    """Triangular mel filterbank settings (HTK mel scale)."""

    n_fft: int
    n_mels: int
    sample_rate: int
    f_min: float = 0.0
    f_max: float | None = None
    log_floor: float = LOG_EPS

    def __post_init__(self):
        f_max = self.sample_rate / 2 if self.f_max is None else self.f_max
        object.__setattr__(self, "f_max", float(f_max))
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if not 0.0 <= self.f_min < self.f_max <= self.sample_rate / 2:
            raise ConfigError(
                f"need 0 <= f_min < f_max <= sr/2, got ({self.f_min}, {self.f_max})"
            )


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def _hann(n_fft, dtype):
    n = np.arange(n_fft, dtype=np.float64)
    win = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / n_fft)
    return win.astype(dtype)


@lru_cache(maxsize=None)
def _dft_basis(n_fft, dtype):
    """[n_fft, 2*n_bins] matrix: real parts then negated imaginary parts."""
    n_bins = n_fft // 2 + 1
    n = np.arange(n_fft, dtype=np.float64)[:, None]
    k = np.arange(n_bins, dtype=np.float64)[None, :]
    ang = 2.0 * np.pi * n * k / n_fft
    return np.concatenate([np.cos(ang), -np.sin(ang)], axis=1).astype(dtype)


@lru_cache(maxsize=None)
def _mel_weights(n_fft, n_mels, sample_rate, f_min, f_max, dtype):
    n_bins = n_fft // 2 + 1
    freqs = np.arange(n_bins, dtype=np.float64) * sample_rate / n_fft
    mel_pts = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_bins), dtype=np.float64)
    for m in range(n_mels):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
        if not np.any(fb[m] > 0):
            raise ConfigError(
                f"mel filter {m} has empty support: n_mels={n_mels} too large "
                f"for n_fft={n_fft} at {sample_rate} Hz"
            )
    return fb.astype(dtype)


def mel_filterbank(spec: MelScaleSpec):
    """Triangular filterbank [n_mels, n_fft/2+1]; each row is unimodal."""
    fb = _mel_weights(
        spec.n_fft, spec.n_mels, spec.sample_rate, spec.f_min, spec.f_max, "float64"
    )
    return nd.Tensor(fb)


def _frame_count(t, hop):
    return t // hop + 1


def framed_magnitude(x: nd.Tensor, cfg: StftConfig) -> nd.Tensor:
    """STFT magnitudes laid out [B, frames, n_bins] (time-major), the
    layout consumed by the mel loss and the spectrogram discriminators."""
    t = x.shape[-1]
    pad = cfg.n_fft // 2
    if t <= pad:
        raise ConfigError(
            f"signal length {t} too short for n_fft {cfg.n_fft} center padding"
        )
    padded = nd.pad_reflect1d(x, pad, pad)
    frames = nd.frame(padded, cfg.n_fft, cfg.hop)
    n_frames = frames.shape[1]
    dtype = x.dtype.name
    win = nd.Tensor(_hann(cfg.n_fft, dtype))
    basis = nd.Tensor(_dft_basis(cfg.n_fft, dtype))
    windowed = nd.mul(frames, win)
    b = frames.shape[0]
    flat = nd.reshape(windowed, (b * n_frames, cfg.n_fft))
    spec = nd.matmul(flat, basis)
    re = nd.narrow(spec, 1, 0, cfg.n_bins)
    im = nd.narrow(spec, 1, cfg.n_bins, cfg.n_bins)
    mag = nd.safe_sqrt(nd.add(nd.power(re, 2), nd.power(im, 2)))
    return nd.reshape(mag, (b, n_frames, cfg.n_bins))


def stft_magnitude(x, cfg: StftConfig) -> nd.Tensor:
    """STFT magnitudes of a [B, T] batch as [B, n_fft/2+1, frames].

    frames = floor(T/hop) + 1 with reflect center padding.
    """
    x = x if isinstance(x, nd.Tensor) else nd.Tensor(x)
    if x.ndim != 2:
        raise CodecError(f"stft_magnitude expects [B, T], got {x.shape}")
    mag = framed_magnitude(x, cfg)
    assert mag.shape[1] == _frame_count(x.shape[-1], cfg.hop)
    return nd.transpose(mag, (0, 2, 1))


def multi_scale_mel_loss(x, x_hat, scales=None, sample_rate=16000):
    """Sum over scales of the mean L1 distance between log-mel spectrograms.

    ``scales`` is a list of (n_fft, n_mels) pairs; hop is n_fft/4 and the
    mel spectrogram is log(mel_fb @ |STFT| + 1e-5).  Zero iff the two
    signals have identical spectra on every scale.
    """
    if scales is None:
        scales = DEFAULT_MEL_SCALES
    if not scales:
        raise ConfigError("multi_scale_mel_loss needs at least one scale")
    x = x if isinstance(x, nd.Tensor) else nd.Tensor(x)
    x_hat = x_hat if isinstance(x_hat, nd.Tensor) else nd.Tensor(x_hat)
    if x.shape != x_hat.shape:
        raise CodecError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    if x.ndim != 2:
        raise CodecError(f"multi_scale_mel_loss expects [B, T], got {x.shape}")

    dtype = x_hat.dtype.name
    total = None
    for n_fft, n_mels in scales:
        cfg = StftConfig(n_fft=n_fft, hop=n_fft // 4)
        fb = nd.Tensor(
            _mel_weights(n_fft, n_mels, sample_rate, 0.0, sample_rate / 2, dtype)
        )
        term = None
        logmels = []
        for sig in (x, x_hat):
            mag = framed_magnitude(sig, cfg)
            b, n_frames, n_bins = mag.shape
            flat = nd.reshape(mag, (b * n_frames, n_bins))
            mel = nd.matmul(flat, nd.transpose(fb, (1, 0)))
            logmels.append(nd.log(nd.add(mel, LOG_EPS)))
        term = nd.mean(nd.absolute(nd.sub(logmels[0], logmels[1])))
        total = term if total is None else nd.add(total, term)
    return total


# ---------------------------------------------------------------------------
# mel cepstral distortion (evaluation-only, plain numpy)

MCD_N_FFT = 1024
MCD_HOP = 256
MCD_N_MELS = 80
MCD_N_COEFFS = 13


def _stft_mag_np(x, n_fft, hop):
    pad = n_fft // 2
    padded = np.pad(np.asarray(x, dtype=np.float64), pad, mode="reflect")
    n_frames = _frame_count(len(x), hop)
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * _hann(n_fft, "float64")
    spec = frames @ _dft_basis(n_fft, "float64")
    n_bins = n_fft // 2 + 1
    return np.sqrt(spec[:, :n_bins] ** 2 + spec[:, n_bins:] ** 2)


def mel_cepstra(x, sample_rate=16000):
    """Per-frame mel cepstra [frames, MCD_N_COEFFS], c0 excluded."""
    mag = _stft_mag_np(x, MCD_N_FFT, MCD_HOP)
    fb = _mel_weights(MCD_N_FFT, MCD_N_MELS, sample_rate, 0.0, sample_rate / 2, "float64")
    logmel = np.log(mag @ fb.T + LOG_EPS)
    coeffs = dct(logmel, type=2, norm="ortho", axis=1)
    return coeffs[:, 1:MCD_N_COEFFS + 1]


def mcd(reference, degraded, sample_rate=16000):
    """Mel cepstral distortion in dB between equal-length signals.

    Mean over frames of (10/ln10) * sqrt(2 * sum of squared cepstral
    differences) using 13 coefficients (c0 excluded), frame-aligned with no
    time warping.  Zero for identical inputs; symmetric and non-negative.
    """
    ref = np.asarray(reference, dtype=np.float64).reshape(-1)
    deg = np.asarray(degraded, dtype=np.float64).reshape(-1)
    if ref.shape != deg.shape:
        raise CodecError(f"length mismatch: {ref.shape[0]} vs {deg.shape[0]}")
    diff = mel_cepstra(ref, sample_rate) - mel_cepstra(deg, sample_rate)
    frame_dist = np.sqrt(2.0 * np.sum(diff ** 2, axis=1))
    return float((10.0 / np.log(10.0)) * frame_dist.mean())
