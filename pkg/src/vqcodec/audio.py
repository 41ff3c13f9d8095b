"""WAV ingestion (16-bit PCM mono) and the synthetic test-signal generator."""

from __future__ import annotations

import wave

import numpy as np

from vqcodec.errors import ConfigError, FormatError

INT16_SCALE = 32767.0


def read_wav(path):
    """Load a mono 16-bit PCM WAV as (sample_rate, float array in [-1, 1])."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            frames = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: not a readable WAV file ({exc})") from exc
    if channels != 1:
        raise ConfigError(
            f"{path}: expected mono audio, got {channels} channels (no downmixing)"
        )
    if width != 2:
        raise ConfigError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    return rate, samples


def write_wav(path, sample_rate, samples):
    """Write a float array (clipped to [-1, 1]) as mono 16-bit PCM."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64).reshape(-1), -1.0, 1.0)
    pcm = np.round(clipped * INT16_SCALE).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(sample_rate))
        fh.writeframes(pcm.tobytes())


def synthetic_dataset(count, seed, sample_rate=16000):
    """Seeded corpus of sinusoid mixtures for self-contained runs.

    Each signal is 2-4 s: 2-5 components at 80-3000 Hz with slow sinusoidal
    amplitude envelopes, plus low-level noise, peak-normalized to 0.8.
    """
    if count < 1:
        raise ConfigError("synthetic dataset needs count >= 1")
    rng = np.random.default_rng(seed)
    signals = []
    for _ in range(count):
        duration = rng.uniform(2.0, 4.0)
        n = int(duration * sample_rate)
        t = np.arange(n) / sample_rate
        sig = np.zeros(n)
        for _ in range(int(rng.integers(2, 6))):
            freq = np.exp(rng.uniform(np.log(80.0), np.log(3000.0)))
            amp = rng.uniform(0.2, 1.0)
            env_rate = rng.uniform(0.25, 3.0)
            env = 0.5 * (1.0 + np.sin(2 * np.pi * env_rate * t + rng.uniform(0, 2 * np.pi)))
            sig += amp * env * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
        sig += 0.003 * rng.standard_normal(n)
        sig *= 0.8 / np.max(np.abs(sig))
        signals.append(sig)
    return signals
