"""Discrete Fourier transforms: naive reference, fast paths and model layers.

Conventions: the forward transform is unnormalized and the inverse carries
``1/N`` (``1/(M*N)`` in 2D). Power-of-two lengths use an iterative radix-2
Cooley-Tukey; any other length goes through Bluestein's chirp-z so lengths
such as 1751 are transformed exactly, without zero padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import Tensor, as_tensor, linear_map
from .exceptions import DimensionError

__all__ = [
    "ComplexTensor",
    "dft1d_naive",
    "idft1d_naive",
    "dft2d_naive",
    "fft",
    "ifft",
    "fft2",
    "ifft2",
    "fft1d",
    "ifft1d",
    "fft2d",
    "ifft2d",
    "spectral_forward",
    "spectral_inverse",
]


@dataclass(frozen=True)
class ComplexTensor:
    """Pair of real tensors holding the real and imaginary parts."""

    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise DimensionError(
                f"real/imag shapes differ: {self.re.shape} vs {self.im.shape}"
            )

    @classmethod
    def from_numpy(cls, z):
        z = np.asarray(z, dtype=np.complex128)
        return cls(Tensor(z.real), Tensor(z.imag))

    @classmethod
    def from_real(cls, x):
        x = as_tensor(x)
        return cls(x, Tensor(np.zeros(x.shape)))

    @property
    def shape(self):
        return self.re.shape

    def numpy(self):
        return self.re.data + 1j * self.im.data

    def conj(self):
        return ComplexTensor(self.re, Tensor(-self.im.data))


def _check_nonempty(shape, naxes):
    if len(shape) < naxes or any(n < 1 for n in shape[-naxes:]):
        raise DimensionError(f"transform needs non-empty trailing axes, got shape {shape}")


# reference transforms ---------------------------------------------------


def dft1d_naive(x: ComplexTensor) -> ComplexTensor:
    """O(N^2) evaluation of the defining sum along the last axis."""
    z = x.numpy()
    _check_nonempty(z.shape, 1)
    n = z.shape[-1]
    idx = np.arange(n)
    out = np.empty_like(z)
    for k in range(n):
        # k*n is reduced mod N so the phase stays small for long inputs
        w = np.exp(-2j * np.pi * ((k * idx) % n) / n)
        out[..., k] = z @ w
    return ComplexTensor.from_numpy(out)


def idft1d_naive(X: ComplexTensor) -> ComplexTensor:
    Z = X.numpy()
    _check_nonempty(Z.shape, 1)
    n = Z.shape[-1]
    idx = np.arange(n)
    out = np.empty_like(Z)
    for m in range(n):
        w = np.exp(2j * np.pi * ((m * idx) % n) / n)
        out[..., m] = (Z @ w) / n
    return ComplexTensor.from_numpy(out)


def dft2d_naive(x: ComplexTensor) -> ComplexTensor:
    """Quadruple-loop evaluation of the 2D DFT over the last two axes."""
    z = x.numpy()
    _check_nonempty(z.shape, 2)
    M, N = z.shape[-2:]
    out = np.zeros_like(z)
    for k in range(M):
        for l in range(N):
            acc = 0j
            for m in range(M):
                for n in range(N):
                    acc = acc + z[..., m, n] * np.exp(
                        -2j * np.pi * (k * m / M + l * n / N)
                    )
            out[..., k, l] = acc
    return ComplexTensor.from_numpy(out)


# fast kernels on complex ndarrays ---------------------------------------


@lru_cache(maxsize=64)
def _bit_reverse(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _twiddles(size):
    half = size // 2
    return np.exp(-2j * np.pi * np.arange(half) / size)


def _radix2(a):
    """Iterative decimation-in-time FFT along the last axis (length 2^m)."""
    n = a.shape[-1]
    lead = a.shape[:-1]
    a = a[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        a = a.reshape(*lead, n // size, size)
        even = a[..., :half]
        odd = a[..., half:] * _twiddles(size)
        a = np.concatenate((even + odd, even - odd), axis=-1)
        size *= 2
    return a.reshape(*lead, n)


@lru_cache(maxsize=32)
def _bluestein_plan(n):
    m = 1 << (2 * n - 2).bit_length()
    k = np.arange(n)
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1 :] = np.conj(chirp[1:])[::-1]
    return m, chirp, _radix2(b)


def _bluestein(a):
    n = a.shape[-1]
    m, chirp, fb = _bluestein_plan(n)
    buf = np.zeros(a.shape[:-1] + (m,), dtype=np.complex128)
    buf[..., :n] = a * chirp
    # inverse of the padded transform via the conjugation identity
    conv = np.conj(_radix2(np.conj(_radix2(buf) * fb))) / m
    return conv[..., :n] * chirp


def fft(a, axis=-1):
    """Forward DFT of a complex ndarray along ``axis``."""
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim == 0 or a.shape[axis] < 1:
        raise DimensionError(f"fft needs a non-empty axis, got shape {a.shape}")
    a = np.moveaxis(a, axis, -1)
    n = a.shape[-1]
    if n == 1:
        out = a.copy()
    elif n & (n - 1) == 0:
        out = _radix2(a)
    else:
        out = _bluestein(a)
    return np.moveaxis(out, -1, axis)


def ifft(a, axis=-1):
    a = np.asarray(a, dtype=np.complex128)
    n = a.shape[axis] if a.ndim else 0
    return np.conj(fft(np.conj(a), axis)) / n


def fft2(a):
    """2D DFT over the last two axes: rows first, then columns."""
    return fft(fft(a, axis=-1), axis=-2)


def ifft2(a):
    return ifft(ifft(a, axis=-1), axis=-2)


def fft1d(x: ComplexTensor) -> ComplexTensor:
    return ComplexTensor.from_numpy(fft(x.numpy()))


def ifft1d(X: ComplexTensor) -> ComplexTensor:
    return ComplexTensor.from_numpy(ifft(X.numpy()))


def fft2d(x: ComplexTensor) -> ComplexTensor:
    _check_nonempty(x.shape, 2)
    return ComplexTensor.from_numpy(fft2(x.numpy()))


def ifft2d(X: ComplexTensor) -> ComplexTensor:
    _check_nonempty(X.shape, 2)
    return ComplexTensor.from_numpy(ifft2(X.numpy()))


# differentiable real <-> frequency bridges -------------------------------


def _re_fft2(x):
    return fft2(x).real


def _re_ifft2(x):
    return ifft2(x).real


def _layer_scales(x, norm):
    mn = x.shape[-1] * x.shape[-2]
    if norm == "backward":
        return 1.0, 1.0 / mn
    if norm == "ortho":
        return 1.0 / math.sqrt(mn), 1.0 / math.sqrt(mn)
    raise ValueError(f"norm must be 'backward' or 'ortho', got {norm!r}")


def spectral_forward(x, norm="backward"):
    """FFT layer: real part of the 2D DFT over (time, feature) per sample.

    The map is real-linear and its adjoint is ``g -> Re(conj(F) g)``, which
    is what backward applies. ``norm="ortho"`` scales the transform by
    ``1/sqrt(M*N)`` so it is unitary; the default keeps the transform
    unnormalized.
    """
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"spectral layers need at least 2-d input, got {x.shape}")
    fwd, _ = _layer_scales(x, norm)
    mn = x.shape[-1] * x.shape[-2]
    return linear_map(
        x, lambda a: fwd * _re_fft2(a), lambda g: (fwd * mn) * _re_ifft2(g)
    )


def spectral_inverse(x, norm="backward"):
    """IFFT layer: real part of the 2D inverse DFT (``1/(M*N)`` by default)."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"spectral layers need at least 2-d input, got {x.shape}")
    _, inv = _layer_scales(x, norm)
    mn = x.shape[-1] * x.shape[-2]
    return linear_map(
        x, lambda a: (inv * mn) * _re_ifft2(a), lambda g: inv * _re_fft2(g)
    )
