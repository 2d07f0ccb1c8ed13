"""Empirical RFF sketches, single- and multi-scale.

Multi-scale sketching computes the unscaled projection ``v = Omega x`` once
per point and reuses it for every scale: the phases for scale sigma_k are
``v / sigma_k``. The per-scale loop (``sketch_naive``) is kept as the
reference it is checked against.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import _backend
from .rff import FeatureMap

PROVENANCES = ("matrix", "device", "twin")
MAGIC = b"SKCH1\x00\x00\x00"
_HEADER = struct.Struct("<8sqqdqqq")

CHUNK = 1024
# cap on the (rows, M) projection buffer, in doubles
_BUFFER_DOUBLES = 1 << 23


class SketchError(ValueError):
    pass


@dataclass
class Sketch:
    """Mean feature vector of a dataset."""

    values: np.ndarray
    scale: float
    sample_count: int
    provenance: str = "matrix"
    frequency_seed: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128).reshape(-1)
        if self.sample_count < 1:
            raise SketchError("sample_count must be >= 1")
        if self.provenance not in PROVENANCES:
            raise SketchError(f"unknown provenance {self.provenance!r}")

    @property
    def M(self) -> int:
        return self.values.size

    def save(self, path, box=None) -> None:
        """Write the SKCH1 layout; an optional input box is appended as D, lo, hi."""
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, self.M, 1, self.scale, self.sample_count,
                                  PROVENANCES.index(self.provenance), self.frequency_seed))
            fh.write(interleave(self.values).astype("<f8").tobytes())
            if box is not None:
                lo, hi = (np.asarray(b, dtype="<f8").reshape(-1) for b in box)
                fh.write(struct.pack("<q", lo.size))
                fh.write(lo.tobytes())
                fh.write(hi.tobytes())

    @classmethod
    def load(cls, path, with_box: bool = False):
        data = Path(path).read_bytes()
        magic, M, S, sigma, N, prov, seed = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise SketchError(f"{path}: not a SKCH1 file")
        if S != 1:
            raise SketchError(f"{path}: expected one sketch per file, got S={S}")
        off = _HEADER.size
        vals = deinterleave(np.frombuffer(data, "<f8", 2 * M, off))
        sk = cls(vals, sigma, N, PROVENANCES[prov], seed)
        if not with_box:
            return sk
        off += 16 * M
        box = None
        if len(data) >= off + 8:
            (D,) = struct.unpack_from("<q", data, off)
            lo = np.frombuffer(data, "<f8", D, off + 8).copy()
            hi = np.frombuffer(data, "<f8", D, off + 8 + 8 * D).copy()
            box = (lo, hi)
        return sk, box


def interleave(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.complex128)
    out = np.empty(2 * z.size)
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


def deinterleave(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[0::2] + 1j * a[1::2]


@dataclass(frozen=True)
class ScaleGrid:
    scales: tuple

    def __post_init__(self):
        s = tuple(float(v) for v in np.atleast_1d(self.scales))
        if not s:
            raise SketchError("scale grid is empty")
        if any(not v > 0 for v in s):
            raise SketchError("scales must be positive")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise SketchError("scales must be strictly increasing")
        object.__setattr__(self, "scales", s)

    @classmethod
    def logspace(cls, lo: float, hi: float, S: int) -> "ScaleGrid":
        return cls(tuple(np.logspace(np.log10(lo), np.log10(hi), S)))

    def __len__(self):
        return len(self.scales)

    def __iter__(self):
        return iter(self.scales)

    def __getitem__(self, k):
        return self.scales[k]

    def array(self) -> np.ndarray:
        return np.asarray(self.scales)


@dataclass
class FlopCounter:
    """Operation counts of the work actually done: a length-D dot product is D, one exp is 1."""

    projection: int = 0
    scaling: int = 0
    exponential: int = 0
    accumulation: int = 0
    points: int = 0

    @property
    def total(self) -> int:
        return self.projection + self.scaling + self.exponential + self.accumulation

    def reset(self) -> None:
        self.projection = self.scaling = self.exponential = self.accumulation = self.points = 0


def _chunks(data, size: int) -> Iterable[np.ndarray]:
    if isinstance(data, np.ndarray):
        X = np.atleast_2d(data)
        for start in range(0, X.shape[0], size):
            yield X[start:start + size]
        return
    # generic iterable of points or of (n, D) blocks
    buf = []
    for item in data:
        item = np.asarray(item, dtype=np.float64)
        if item.ndim == 2:
            if buf:
                yield np.vstack(buf)
                buf = []
            for start in range(0, item.shape[0], size):
                yield item[start:start + size]
        else:
            buf.append(item)
            if len(buf) == size:
                yield np.vstack(buf)
                buf = []
    if buf:
        yield np.vstack(buf)


def _accumulate(project, data, scales: np.ndarray, M: int, chunk: int,
                counter: Optional[FlopCounter] = None):
    """Sum exp(-i v / sigma_k) over the stream; returns ((S, M) complex sums, count)."""
    S = scales.size
    inv = 1.0 / scales
    total = np.zeros((S, M), dtype=np.complex128)
    part_re = np.empty((S, M))
    part_im = np.empty((S, M))
    rows = max(1, min(chunk, _BUFFER_DOUBLES // max(M, 1)))
    n = 0
    for block in _chunks(data, chunk):
        part_re.fill(0.0)
        part_im.fill(0.0)
        for start in range(0, block.shape[0], rows):
            sub = block[start:start + rows]
            V = np.ascontiguousarray(project(sub), dtype=np.float64)
            _backend.accumulate_phases(V, inv, part_re, part_im)
            if counter is not None:
                counter.projection += V.size * sub.shape[1]
                counter.scaling += V.size * S
                counter.exponential += V.size * S
                counter.accumulation += V.size * S
        total.real += part_re
        total.imag += part_im
        n += block.shape[0]
    if counter is not None:
        counter.points += n
    return total, n


def _scales(grid) -> np.ndarray:
    """Scales of a ``ScaleGrid`` or of any positive sequence (repeats allowed)."""
    if isinstance(grid, ScaleGrid):
        return grid.array()
    scales = np.asarray(grid, dtype=np.float64).reshape(-1)
    if scales.size == 0:
        raise SketchError("scale grid is empty")
    if np.any(~(scales > 0)):
        raise SketchError("scales must be positive")
    return scales


def _provenance(fmap: FeatureMap) -> str:
    return fmap.provenance if fmap.provenance in PROVENANCES else "matrix"


def sketch_stream(fmap: FeatureMap, data, frequency_seed: int = 0, chunk: int = CHUNK) -> Sketch:
    """Mean of ``fmap`` over ``data`` (an (N, D) array or an iterable of points / blocks)."""
    sums, n = _accumulate(fmap.project, data, np.array([fmap.scale]), fmap.M, chunk)
    if n == 0:
        raise SketchError("cannot sketch an empty stream")
    return Sketch(sums[0] / n, fmap.scale, n, _provenance(fmap), frequency_seed)


def sketch_multiscale(fmap: FeatureMap, grid: Union[ScaleGrid, Sequence[float]], data,
                      frequency_seed: int = 0, chunk: int = CHUNK,
                      counter: Optional[FlopCounter] = None) -> list[Sketch]:
    """One sketch per scale of ``grid``, sharing the projection of each point.

    ``fmap``'s own scale is ignored; only its unscaled projection is used.
    """
    scales = _scales(grid)
    sums, n = _accumulate(fmap.project, data, scales, fmap.M, chunk, counter)
    if n == 0:
        raise SketchError("cannot sketch an empty stream")
    prov = _provenance(fmap)
    return [Sketch(sums[k] / n, float(s), n, prov, frequency_seed) for k, s in enumerate(scales)]


def sketch_naive(fmap: FeatureMap, grid: Union[ScaleGrid, Sequence[float]], data,
                 frequency_seed: int = 0, chunk: int = CHUNK,
                 counter: Optional[FlopCounter] = None) -> list[Sketch]:
    """Reference per-scale loop: builds ``W = Omega / sigma`` and sketches each scale separately."""
    scales = _scales(grid)
    if not fmap.has_derivative:
        raise SketchError("the per-scale loop needs an explicit frequency matrix")
    out = []
    one = np.ones(1)
    for sigma in scales:
        W = fmap.matrix / sigma
        b = None if fmap.offset is None else fmap.offset / sigma

        def project(X, W=W, b=b):
            P = X @ W.T
            if b is not None:
                P += b
            return P

        if counter is not None:
            counter.scaling += W.size
        sums, n = _accumulate(project, data, one, fmap.M, chunk, counter)
        if n == 0:
            raise SketchError("cannot sketch an empty stream")
        out.append(Sketch(sums[0] / n, float(sigma), n, _provenance(fmap), frequency_seed))
    return out


def merge_sketches(a: Sketch, b: Sketch) -> Sketch:
    """Sample-count weighted mean of two sketches of the same map."""
    if a.M != b.M or a.scale != b.scale or a.provenance != b.provenance \
            or a.frequency_seed != b.frequency_seed:
        raise SketchError("sketches were computed with different feature maps")
    n = a.sample_count + b.sample_count
    vals = (a.sample_count * a.values + b.sample_count * b.values) / n
    return Sketch(vals, a.scale, n, a.provenance, a.frequency_seed)
