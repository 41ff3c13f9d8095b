"""Single-codebook vector quantizer.

Latents are projected to a low-dimensional space, L2-normalized, and
snapped to the nearest normalized codeword (cosine distance).  The
codebook is learned by plain gradient descent through an L1 codebook loss;
no moving-average update.  Gradients cross the quantization boundary via
the straight-through estimator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vqcodec import nd
from vqcodec.errors import CodecError, ConfigError, ShapeError
from vqcodec.nn import Module

NORM_EPS = 1e-12


@dataclass(frozen=True)
class VqConfig:
    input_dim: int
    code_dim: int = 8
    codebook_size: int = 8192

    def __post_init__(self):
        if self.code_dim > self.input_dim:
            raise ConfigError(
                f"code_dim {self.code_dim} exceeds input_dim {self.input_dim}"
            )
        if self.codebook_size < 2:
            raise ConfigError("codebook_size must be >= 2")


class Codebook(Module):
    """K learnable code vectors, initialized uniformly on the unit sphere."""

    def __init__(self, size, dim, rng, dtype=np.float32):
        super().__init__()
        raw = rng.standard_normal((size, dim))
        raw /= np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), NORM_EPS)
        self.vectors = nd.Parameter(raw.astype(dtype), decay=False)

    @property
    def size(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


def _frames(z):
    """[B, D, T] -> contiguous [B*T, D] plus the (B, T) shape."""
    if z.ndim != 3:
        raise ShapeError(f"expected [B, D, T], got {z.shape}")
    b, d, t = z.shape
    flat = nd.reshape(nd.transpose(z, (0, 2, 1)), (b * t, d))
    return flat, b, t


def _unframes(flat, b, t, d):
    return nd.transpose(nd.reshape(flat, (b, t, d)), (0, 2, 1))


def project_down(h, w_down):
    """Per-frame linear map [B, input_dim, T] -> [B, code_dim, T]."""
    flat, b, t = _frames(h)
    out = nd.matmul(flat, nd.transpose(w_down, (1, 0)))
    return _unframes(out, b, t, w_down.shape[0])


def project_up(z_q, w_up):
    """Per-frame linear map [B, code_dim, T] -> [B, input_dim, T]."""
    flat, b, t = _frames(z_q)
    out = nd.matmul(flat, nd.transpose(w_up, (1, 0)))
    return _unframes(out, b, t, w_up.shape[0])


def nearest_codes(z_e_frames, codebook_vectors):
    """Indices of the closest normalized codewords for [n, D] frames.

    Distance is squared L2 between L2-normalized frames and codewords,
    equivalently cosine distance; ties break toward the lowest index.
    """
    z = np.asarray(z_e_frames, dtype=np.float64)
    c = np.asarray(codebook_vectors, dtype=np.float64)
    zn = z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), NORM_EPS)
    cn = c / np.maximum(np.linalg.norm(c, axis=1, keepdims=True), NORM_EPS)
    # monotone in squared distance: ||a-b||^2 = 2 - 2 a.b on the sphere
    return np.argmax(zn @ cn.T, axis=1)


def quantize(z_e, codebook: Codebook):
    """Snap [B, code_dim, T] latents to normalized codewords.

    Returns (indices [B, T], z_q [B, code_dim, T]); z_q carries gradient to
    the codebook only.
    """
    flat, b, t = _frames(z_e)
    indices = nearest_codes(flat.data, codebook.vectors.data).reshape(b, t)
    rows = nd.gather_rows(codebook.vectors, indices.reshape(-1))
    z_q = _unframes(nd.l2_normalize(rows, axis=1, eps=NORM_EPS), b, t, codebook.dim)
    return indices, z_q


def straight_through(z_e, z_q):
    """Forward value of z_q with the gradient passed unchanged to z_e.

    Equivalent to z_e + stopgrad(z_q - z_e) but forwards z_q bit-exactly.
    """
    if z_e.shape != z_q.shape:
        raise ShapeError(f"shape mismatch: {z_e.shape} vs {z_q.shape}")
    return nd.override_value(z_e, z_q)


def vq_losses(z_e, z_q):
    """L1 codebook and commitment losses in the normalized space.

    codebook_loss = mean |stopgrad(normalize(z_e)) - z_q|  (moves codewords)
    commitment_loss = mean |normalize(z_e) - stopgrad(z_q)|  (moves encoder)
    """
    z_n = nd.l2_normalize(z_e, axis=1, eps=NORM_EPS)
    codebook_loss = nd.mean(nd.absolute(nd.sub(nd.stop_gradient(z_n), z_q)))
    commitment_loss = nd.mean(nd.absolute(nd.sub(z_n, nd.stop_gradient(z_q))))
    return codebook_loss, commitment_loss


def utilization(indices, codebook_size):
    """Fraction of the codebook selected at least once; 0 for no frames."""
    idx = np.asarray(indices).reshape(-1)
    if idx.size == 0:
        return 0.0
    return float(np.unique(idx).size) / float(codebook_size)


def approx_bitrate(indices, frame_rate):
    """Empirical-entropy bitrate in kbps at the given frame rate."""
    idx = np.asarray(indices).reshape(-1)
    if idx.size == 0:
        raise CodecError("approx_bitrate needs at least one code index")
    _, counts = np.unique(idx, return_counts=True)
    p = counts / counts.sum()
    entropy_bits = float(-(p * np.log2(p)).sum()) + 0.0
    return frame_rate * entropy_bits / 1000.0


@dataclass
class VqOutput:
    z_d: nd.Tensor
    indices: np.ndarray
    codebook_loss: nd.Tensor
    commitment_loss: nd.Tensor


class VectorQuantizer(Module):
    """Down-projection, normalized lookup, STE, and up-projection."""

    def __init__(self, cfg: VqConfig, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        scale = 1.0 / np.sqrt(cfg.input_dim)
        self.w_down = nd.Parameter(
            (rng.standard_normal((cfg.code_dim, cfg.input_dim)) * scale).astype(dtype)
        )
        self.codebook = Codebook(cfg.codebook_size, cfg.code_dim, rng, dtype=dtype)
        self.w_up = nd.Parameter(
            (rng.standard_normal((cfg.input_dim, cfg.code_dim))
             / np.sqrt(cfg.code_dim)).astype(dtype)
        )

    def forward(self, h) -> VqOutput:
        z_e = project_down(h, self.w_down)
        indices, z_q = quantize(z_e, self.codebook)
        codebook_loss, commitment_loss = vq_losses(z_e, z_q)
        z_d = project_up(straight_through(z_e, z_q), self.w_up)
        return VqOutput(z_d, indices, codebook_loss, commitment_loss)

    def lookup(self, indices) -> nd.Tensor:
        """Normalized codewords for decoded index arrays [B, T]."""
        idx = np.asarray(indices)
        rows = nd.gather_rows(self.codebook.vectors, idx.reshape(-1))
        z_q = nd.l2_normalize(rows, axis=1, eps=NORM_EPS)
        return _unframes(z_q, idx.shape[0], idx.shape[1], self.codebook.dim)

    def decode_indices(self, indices) -> nd.Tensor:
        """Project decoded indices back up to the decoder input space."""
        return project_up(self.lookup(indices), self.w_up)
