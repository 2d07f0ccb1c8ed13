"""Scale selection by the entropy of binned sketch magnitudes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .sketching import Sketch

DEFAULT_BINS = 32


def magnitude_histogram(z, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Counts of ``|z_m|`` in ``bins`` equal bins over [0, 1]; the last bin is closed."""
    if bins < 2:
        raise ValueError("need at least two bins")
    values = z.values if isinstance(z, Sketch) else np.asarray(z)
    mags = np.abs(values)
    idx = np.clip(np.floor(mags * bins).astype(np.int64), 0, bins - 1)
    return np.bincount(idx, minlength=bins)


def sketch_entropy(z, bins: int = DEFAULT_BINS) -> float:
    """Shannon entropy (nats) of the magnitude histogram."""
    counts = magnitude_histogram(z, bins)
    p = counts[counts > 0] / counts.sum()
    return float(max(0.0, -np.sum(p * np.log(p))))


@dataclass
class EntropyReport:
    scales: np.ndarray
    entropies: np.ndarray
    counts: np.ndarray
    bins: int
    selected: int

    @property
    def selected_scale(self) -> float:
        return float(self.scales[self.selected])

    def to_csv(self) -> str:
        lines = ["sigma,entropy,selected"]
        for k, (s, h) in enumerate(zip(self.scales, self.entropies)):
            lines.append(f"{float(s)!r},{float(h)!r},{int(k == self.selected)}")
        return "\n".join(lines) + "\n"


def select_scale(sketches: Sequence[Sketch], bins: int = DEFAULT_BINS) -> tuple[int, EntropyReport]:
    """Index of the highest-entropy sketch; ties go to the smallest scale."""
    if not sketches:
        raise ValueError("no sketches to select from")
    scales = np.array([s.scale for s in sketches])
    counts = np.stack([magnitude_histogram(s, bins) for s in sketches])
    ent = np.array([sketch_entropy(s, bins) for s in sketches])
    best = ent.max()
    tied = np.flatnonzero(ent == best)
    idx = int(tied[np.argmin(scales[tied])])
    return idx, EntropyReport(scales, ent, counts, bins, idx)
