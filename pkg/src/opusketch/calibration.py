"""Hadamard calibration of the transmission matrix and the OPU feature maps.

A binary-input device cannot be fed the -1 entries of a Hadamard matrix, so
the probes are the shifted columns ``(h + 1) / 2`` plus the all-ones vector;
``A h = 2 A (h + 1)/2 - A 1`` recovers the Hadamard responses.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import hadamard

from .opu import OpuDevice
from .rff import FeatureMap

MAGIC = b"CALIB1\x00\x00"
_HEADER = struct.Struct("<8sqqqd")


class CalibrationDegenerateError(RuntimeError):
    """A recovered transmission row has zero norm."""


def _check_pow2(Dprime: int) -> None:
    if Dprime < 1 or Dprime & (Dprime - 1):
        raise ValueError(f"probe dimension must be a power of two, got {Dprime}; zero-pad first")


def build_probe_set(Dprime: int) -> np.ndarray:
    """Binary probes, one per row: the D' columns of ``(H + 1)/2`` then the ones vector."""
    _check_pow2(Dprime)
    H = hadamard(Dprime).astype(np.float64)
    B = (H.T + 1.0) / 2.0
    return np.vstack([B, np.ones((1, Dprime))])


def probe_device(dev: OpuDevice, repeats: int = 1) -> np.ndarray:
    """Device-side half of calibration: (M, D'+1) responses, averaged over ``repeats`` passes."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    probes = build_probe_set(dev.Dprime)
    Y = np.zeros((probes.shape[0], dev.M))
    for _ in range(repeats):
        Y += dev.apply_binary(probes)
    return (Y / repeats).T.copy()


@dataclass(frozen=True)
class CalibrationResult:
    A_hat: np.ndarray
    row_rescaler: np.ndarray
    delta_n: np.ndarray
    probe_count: int
    residual_norm: float

    @property
    def M(self) -> int:
        return self.A_hat.shape[0]

    @property
    def Dprime(self) -> int:
        return self.A_hat.shape[1]

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, self.M, self.Dprime, self.probe_count, self.residual_norm))
            fh.write(self.A_hat.astype("<f8").tobytes())
            fh.write(self.row_rescaler.astype("<f8").tobytes())
            fh.write(self.delta_n.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "CalibrationResult":
        data = Path(path).read_bytes()
        magic, M, Dp, probes, resid = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a CALIB1 file")
        off = _HEADER.size
        A_hat = np.frombuffer(data, "<f8", M * Dp, off).reshape(M, Dp).copy()
        off += 8 * M * Dp
        rescaler = np.frombuffer(data, "<f8", M, off).copy()
        delta_n = np.frombuffer(data, "<f8", M, off + 8 * M).copy()
        return cls(A_hat, rescaler, delta_n, probes, resid)


def recover_transmission(probe_responses, Dprime: int, radii=None) -> CalibrationResult:
    """Estimate A from the responses to ``build_probe_set(Dprime)``.

    ``probe_responses`` is (M, D'+1), column j answering probe j. ``radii``
    (length M) forms ``delta_n = radii * row_rescaler``; without it the
    radii are taken as ones.
    """
    _check_pow2(Dprime)
    Y = np.asarray(probe_responses, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != Dprime + 1:
        raise ValueError(f"expected (M, {Dprime + 1}) responses, got {Y.shape}")
    H = hadamard(Dprime).astype(np.float64)
    Y_B, y_ones = Y[:, :Dprime], Y[:, Dprime]
    Y_H = 2.0 * Y_B - y_ones[:, None]
    A_hat = Y_H @ H.T / Dprime

    row_norms = np.linalg.norm(A_hat, axis=1)
    if np.any(~(row_norms > 0)) or not np.all(np.isfinite(row_norms)):
        bad = np.flatnonzero(~(row_norms > 0) | ~np.isfinite(row_norms))
        raise CalibrationDegenerateError(f"zero-norm recovered rows: {bad[:10].tolist()}")
    rescaler = 1.0 / row_norms
    radii = np.ones(Y.shape[0]) if radii is None else np.asarray(radii, dtype=np.float64)
    if radii.shape != rescaler.shape:
        raise ValueError("radii length must equal M")
    # the ones-probe is answered twice (first Hadamard column and last probe)
    residual = float(np.linalg.norm(A_hat.sum(axis=1) - y_ones))
    return CalibrationResult(A_hat, rescaler, radii * rescaler, Dprime + 1, residual)


def make_device_map(dev: OpuDevice, delta_n, sigma: float) -> FeatureMap:
    """Device-side map ``exp(-i delta_n * A(x) / sigma)``; calls the OPU, no derivative."""
    delta_n = np.asarray(delta_n, dtype=np.float64)
    if delta_n.shape != (dev.M,):
        raise ValueError("delta_n must have length M")

    def project(X):
        return dev.apply(X) * delta_n

    return FeatureMap(dev.M, dev.D, sigma, project_fn=project, provenance="device")


def make_twin_map(cal: CalibrationResult, sigma: float, box) -> FeatureMap:
    """Server-side differentiable replica of the device map.

    Phases are ``delta_n * (A_hat @ pad((x - lo)/(hi - lo))) / sigma``; the
    affine normalisation is folded into an explicit matrix and offset, so
    the map takes raw coordinates.
    """
    lo, hi = (np.asarray(b, dtype=np.float64).reshape(-1) for b in box)
    D = lo.size
    if D > cal.Dprime:
        raise ValueError("box dimension exceeds calibrated width")
    base = cal.delta_n[:, None] * cal.A_hat[:, :D]
    matrix = base / (hi - lo)[None, :]
    offset = -(matrix @ lo)
    return FeatureMap(cal.M, D, sigma, matrix=matrix, offset=offset, provenance="twin")


def twin_frequency_matrix(cal: CalibrationResult, sigma: float) -> np.ndarray:
    """``diag(delta_n) @ A_hat / sigma`` over the full padded width."""
    return cal.delta_n[:, None] * cal.A_hat / sigma
