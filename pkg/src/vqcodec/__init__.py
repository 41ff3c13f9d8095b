"""Desk-scale low-bitrate neural speech codec with single-codebook VQ."""

__version__ = "0.1.0"
