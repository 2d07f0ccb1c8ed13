"""Software model of an optical random-projection co-processor.

The device multiplies binary inputs by a fixed Gaussian transmission matrix
and adds Gaussian read-out noise. Real-valued inputs are mapped into the
unit box, quantised to ``bit_depth`` bits and sent plane by plane; the
decoded output is the weighted sum of the per-plane products.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .rff import as_generator

MAGIC = b"OPUSIM1\x00"
_HEADER = struct.Struct("<8sqqqd")


def next_pow2(n: int) -> int:
    if n < 1:
        raise ValueError("dimension must be positive")
    return 1 << (int(n) - 1).bit_length()


def normalize_input(box, x, counter: Optional[list] = None, pad_to: Optional[int] = None) -> np.ndarray:
    """Map ``x`` coordinatewise into [0, 1] using ``box = (lo, hi)``.

    Out-of-box coordinates are clamped and counted in ``counter[0]`` when a
    one-element list is supplied. Zero-pads the last axis to ``pad_to``.
    """
    lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
    x = np.asarray(x, dtype=np.float64)
    u = (x - lo) / (hi - lo)
    outside = (u < 0.0) | (u > 1.0)
    if np.any(outside):
        if counter is not None:
            counter[0] += int(outside.sum())
        u = np.clip(u, 0.0, 1.0)
    if pad_to is not None and pad_to > u.shape[-1]:
        pad = [(0, 0)] * (u.ndim - 1) + [(0, pad_to - u.shape[-1])]
        u = np.pad(u, pad)
    return u


def quantize(x01, n: int) -> np.ndarray:
    """Round-to-nearest integer levels ``q = round(x * (2^n - 1))``."""
    return np.rint(np.asarray(x01, dtype=np.float64) * ((1 << n) - 1)).astype(np.int64)


def encode_bitplanes(x01, n: int) -> np.ndarray:
    """Split quantised ``x01`` into ``n`` binary planes, most significant first.

    Returns an array of shape ``(n,) + x01.shape`` with entries in {0, 1}.
    """
    q = quantize(x01, n)
    shifts = np.arange(n - 1, -1, -1).reshape((n,) + (1,) * q.ndim)
    return ((q[None] >> shifts) & 1).astype(np.float64)


def plane_weights(n: int) -> np.ndarray:
    """Decoder weights ``2^(n-b) / (2^n - 1)`` for planes b = 1..n."""
    return 2.0 ** np.arange(n - 1, -1, -1) / ((1 << n) - 1)


@dataclass
class OpuDevice:
    """Simulated OPU: fixed transmission matrix, noise level, bit depth and input box."""

    transmission: np.ndarray
    noise_std: float = 0.0
    bit_depth: int = 8
    box_lo: Optional[np.ndarray] = None
    box_hi: Optional[np.ndarray] = None
    rng: np.random.Generator = field(default_factory=np.random.default_rng, repr=False)
    clamp_count: int = 0
    input_dim: Optional[int] = None

    def __post_init__(self):
        A = np.array(self.transmission, dtype=np.float64, order="C")
        if A.ndim != 2:
            raise ValueError("transmission must be a matrix")
        if A.shape[1] != next_pow2(A.shape[1]):
            raise ValueError("transmission width must be a power of two")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.bit_depth < 1:
            raise ValueError("bit_depth must be >= 1")
        A.flags.writeable = False
        self.transmission = A
        self.rng = as_generator(self.rng)
        self._hash = self.content_hash()
        if self.box_lo is not None:
            self.set_input_box(self.box_lo, self.box_hi)

    @classmethod
    def create(cls, M: int, D: int, noise_std: float = 0.0, bit_depth: int = 8,
               seed=None, noise_seed=None) -> "OpuDevice":
        """Build a device for D-dimensional inputs; A is (M, next_pow2(D)) standard Gaussian."""
        A = as_generator(seed).standard_normal((M, next_pow2(D)))
        rng = np.random.default_rng(noise_seed if noise_seed is not None else seed)
        return cls(A, noise_std, bit_depth, rng=rng, input_dim=D)

    @property
    def M(self) -> int:
        return self.transmission.shape[0]

    @property
    def Dprime(self) -> int:
        return self.transmission.shape[1]

    @property
    def D(self) -> int:
        return self.input_dim if self.input_dim is not None else self.Dprime

    def set_input_box(self, lo, hi) -> None:
        lo = np.asarray(lo, dtype=np.float64).reshape(-1).copy()
        hi = np.asarray(hi, dtype=np.float64).reshape(-1).copy()
        if lo.shape != hi.shape or lo.size > self.Dprime:
            raise ValueError("box must have matching lo/hi of length <= D'")
        if np.any(~(lo < hi)):
            raise ValueError("box needs lo < hi on every coordinate")
        lo.flags.writeable = False
        hi.flags.writeable = False
        self.box_lo, self.box_hi = lo, hi
        self.input_dim = lo.size

    def content_hash(self) -> str:
        return hashlib.sha256(self.transmission.tobytes()).hexdigest()

    def check_integrity(self) -> None:
        if self.content_hash() != self._hash:
            raise RuntimeError("transmission matrix changed after construction")

    def normalize(self, X) -> np.ndarray:
        if self.box_lo is None:
            raise RuntimeError("input box not set")
        counter = [0]
        U = normalize_input((self.box_lo, self.box_hi), X, counter, pad_to=self.Dprime)
        self.clamp_count += counter[0]
        return U

    def _noise(self, shape, std) -> np.ndarray:
        if std == 0.0:
            return np.zeros(shape)
        return std * self.rng.standard_normal(shape)

    def apply_binary(self, B) -> np.ndarray:
        """One physical pass on binary inputs: ``A b + eps``. ``B`` is (D',) or (n, D')."""
        B = np.asarray(B, dtype=np.float64)
        if B.shape[-1] != self.Dprime:
            raise ValueError(f"binary inputs must have length {self.Dprime}")
        if np.any((B != 0.0) & (B != 1.0)):
            raise ValueError("inputs to the physical pass must be binary")
        Y = B @ self.transmission.T
        return Y + self._noise(Y.shape, self.noise_std)

    def apply(self, X, per_plane: bool = False) -> np.ndarray:
        """Decoded OPU output ``sum_b w_b (A plane_b + eps_b)`` for raw inputs (D,) or (n, D).

        With ``per_plane=False`` the planes are folded before the product,
        ``A @ (sum_b w_b plane_b)``, and the per-plane noise is drawn as one
        Gaussian of variance ``noise_std**2 * sum_b w_b**2``; this has the
        same distribution as the plane-by-plane model at 1/n of the cost.
        """
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        U = self.normalize(np.atleast_2d(X))
        w = plane_weights(self.bit_depth)
        if per_plane:
            planes = encode_bitplanes(U, self.bit_depth)
            Y = np.zeros((U.shape[0], self.M))
            for wb, plane in zip(w, planes):
                Y += wb * self.apply_binary(plane)
        else:
            Uq = quantize(U, self.bit_depth) / ((1 << self.bit_depth) - 1)
            Y = Uq @ self.transmission.T
            std = self.noise_std * float(np.sqrt(np.sum(w * w)))
            Y += self._noise(Y.shape, std)
        return Y[0] if single else Y

    def save(self, path) -> None:
        """Write the OPUSIM1 file: header, A row-major, then D, lo, hi."""
        lo = self.box_lo if self.box_lo is not None else np.empty(0)
        hi = self.box_hi if self.box_hi is not None else np.empty(0)
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, self.M, self.Dprime, self.bit_depth, float(self.noise_std)))
            fh.write(self.transmission.astype("<f8").tobytes())
            fh.write(struct.pack("<q", lo.size))
            fh.write(lo.astype("<f8").tobytes())
            fh.write(hi.astype("<f8").tobytes())

    @classmethod
    def load(cls, path, seed=None) -> "OpuDevice":
        data = Path(path).read_bytes()
        magic, M, Dp, n, noise = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise ValueError(f"{path}: not an OPUSIM1 file")
        off = _HEADER.size
        A = np.frombuffer(data, "<f8", M * Dp, off).reshape(M, Dp)
        off += 8 * M * Dp
        (D,) = struct.unpack_from("<q", data, off)
        off += 8
        dev = cls(A, noise, n, rng=np.random.default_rng(seed))
        if D:
            lo = np.frombuffer(data, "<f8", D, off)
            hi = np.frombuffer(data, "<f8", D, off + 8 * D)
            dev.set_input_box(lo, hi)
        return dev


def opu_apply(dev: OpuDevice, x, per_plane: bool = False) -> np.ndarray:
    return dev.apply(x, per_plane=per_plane)
