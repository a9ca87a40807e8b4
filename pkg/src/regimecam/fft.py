"""Radix-2 decimation-in-time FFT, vectorized over leading axes."""
from __future__ import annotations

import numpy as np

from .errors import NonPowerOfTwo


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_power_of_two(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_last(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise NonPowerOfTwo(f"length {n} is not a power of two")
    lead = x.shape[:-1]
    a = np.asarray(x, dtype=np.complex128)[..., _bit_reverse_indices(n)]
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        # twiddles evaluated directly, not by recurrence, to keep errors at ulp level
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return a


def fft(x: np.ndarray) -> np.ndarray:
    """Unnormalized forward DFT along the last axis."""
    return _fft_last(x)


def ifft(x: np.ndarray) -> np.ndarray:
    return _fft_last(x, inverse=True) / x.shape[-1]


def fft2(grid: np.ndarray) -> np.ndarray:
    """Forward 2-D DFT over the last two axes: rows first, then columns."""
    g = np.asarray(grid)
    if g.ndim < 2:
        raise ValueError("fft2 needs at least two dimensions")
    h, w = g.shape[-2:]
    if not (is_power_of_two(h) and is_power_of_two(w)):
        raise NonPowerOfTwo(f"grid {h}x{w} must have power-of-two sides")
    rows = _fft_last(g)
    return np.swapaxes(_fft_last(np.swapaxes(rows, -1, -2)), -1, -2)


def ifft2(spec: np.ndarray) -> np.ndarray:
    h, w = spec.shape[-2:]
    rows = _fft_last(spec, inverse=True)
    out = np.swapaxes(_fft_last(np.swapaxes(rows, -1, -2), inverse=True), -1, -2)
    return out / (h * w)


def center_spectrum(spec: np.ndarray) -> np.ndarray:
    """Swap quadrants so the DC bin sits at (H//2, W//2)."""
    h, w = spec.shape[-2:]
    return np.roll(spec, (h // 2, w // 2), axis=(-2, -1))


def zero_pad_pow2(grid: np.ndarray) -> np.ndarray:
    h, w = grid.shape[-2:]
    ph, pw = next_power_of_two(h), next_power_of_two(w)
    if (ph, pw) == (h, w):
        return grid
    out = np.zeros(grid.shape[:-2] + (ph, pw), dtype=grid.dtype)
    out[..., :h, :w] = grid
    return out
