"""Synthetic Gaussian mixtures, CSV ingestion, Lloyd's algorithm and random baselines."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .metrics import nearest_centroid
from .rff import as_generator


class CsvFormatError(ValueError):
    pass


@dataclass
class LabeledDataset:
    points: np.ndarray
    labels: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.points.shape[0] < 1:
            raise ValueError("dataset needs at least one point")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if self.labels.size != self.points.shape[0]:
                raise ValueError("one label per point")

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def D(self) -> int:
        return self.points.shape[1]

    @property
    def box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)


def gen_gmm(K: int, D: int, ratio: float = 10.0, N: int = 20_000, rng=None,
            normalize: Optional[str] = None) -> LabeledDataset:
    """Isotropic Gaussian mixture with equal component probabilities.

    Means are drawn from ``N(0, ratio * I)`` and points from ``N(mu_k, I)``,
    so the inter/intra variance ratio is ``ratio``. ``normalize="l2-ball"``
    divides everything by the largest point norm afterwards (RSE and AMI
    are unaffected; distances and useful sketch scales shrink accordingly).
    """
    if min(K, D, N) < 1 or not ratio > 0:
        raise ValueError("K, D, N must be positive and ratio > 0")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = as_generator(rng)
    means = np.sqrt(ratio) * rng.standard_normal((K, D))
    labels = rng.integers(0, K, size=N)
    X = means[labels] + rng.standard_normal((N, D))
    if normalize is not None:
        if normalize != "l2-ball":
            raise ValueError(f"unknown normalisation {normalize!r}")
        scale = np.linalg.norm(X, axis=1).max()
        X /= scale
        means = means / scale
    meta = {"seed": None if seed is None else int(seed), "K": K, "D": D, "N": N,
            "ratio": ratio, "normalize": normalize}
    ds = LabeledDataset(X, labels, meta)
    ds.meta["means"] = means
    return ds


def _lloyd_once(X, K, iters, rng, trace=None):
    lo, hi = X.min(axis=0), X.max(axis=0)
    C = rng.uniform(lo, hi, size=(K, X.shape[1]))
    labels = None
    for _ in range(iters):
        new, d2 = nearest_centroid(X, C)
        if trace is not None:
            trace.append(float(d2.sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=K)
        for k in range(K):
            if counts[k]:
                C[k] = X[labels == k].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # re-seed empty clusters at the currently worst-served points
            _, d2 = nearest_centroid(X, C[counts > 0])
            for k in empty:
                i = int(np.argmax(d2))
                C[k] = X[i]
                d2[i] = 0.0
    labels, d2 = nearest_centroid(X, C)
    return C, labels, float(d2.sum())


def lloyd(data, K: int, iters: int = 300, rng=None, restarts: int = 3, trace=None):
    """Lloyd's K-means from uniform draws in the data bounding box.

    Returns ``(centroids, labels)`` of the lowest-risk run among ``restarts``.
    """
    X = data.points if isinstance(data, LabeledDataset) else np.atleast_2d(np.asarray(data, float))
    if K > X.shape[0]:
        raise ValueError("K cannot exceed the number of points")
    rng = as_generator(rng)
    best = None
    for _ in range(restarts):
        C, labels, risk = _lloyd_once(X, K, iters, rng, trace)
        if best is None or risk < best[2]:
            best = (C, labels, risk)
    return best[0], best[1]


def rand_data_baseline(data, K: int, rng=None) -> np.ndarray:
    """K centroids drawn uniformly (with replacement) from all observations."""
    X = data.points if isinstance(data, LabeledDataset) else np.asarray(data, float)
    idx = as_generator(rng).integers(0, X.shape[0], size=K)
    return X[idx].copy()


def rand_cls_baseline(data, labels, K: int, rng=None) -> np.ndarray:
    """The k-th centroid drawn uniformly from the observations of class k."""
    X = data.points if isinstance(data, LabeledDataset) else np.asarray(data, float)
    labels = np.asarray(labels)
    rng = as_generator(rng)
    out = np.empty((K, X.shape[1]))
    for k in range(K):
        members = np.flatnonzero(labels == k)
        if members.size == 0:
            raise ValueError(f"class {k} has no observations")
        out[k] = X[members[rng.integers(0, members.size)]]
    return out


def load_csv(path, labels: bool = False) -> LabeledDataset:
    """Numeric CSV, optional header line, optional trailing integer label column."""
    rows, labs = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise CsvFormatError(f"{path}:{lineno}: non-numeric cell in {row!r}") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise CsvFormatError(f"{path}:{lineno}: expected {width} columns, got {len(values)}")
            if labels:
                lab = values.pop()
                if lab != int(lab):
                    raise CsvFormatError(f"{path}:{lineno}: label {lab!r} is not an integer")
                labs.append(int(lab))
            rows.append(values)
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    if labels and width is not None and width < 2:
        raise CsvFormatError(f"{path}: label column leaves no coordinates")
    return LabeledDataset(np.array(rows), np.array(labs) if labels else None, {"source": str(path)})


def save_csv(path, points, labels=None, extra=None, header=None) -> None:
    """Write points (and optionally integer labels or an extra float column) as CSV."""
    points = np.atleast_2d(points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        for i, row in enumerate(points):
            out = [repr(float(v)) for v in row]
            if extra is not None:
                out.append(repr(float(extra[i])))
            if labels is not None:
                out.append(str(int(labels[i])))
            w.writerow(out)


def write_sidecar(path, record: dict) -> Path:
    """Append ``record`` as one JSON line to ``<path>.jsonl``."""
    side = Path(str(path) + ".jsonl")
    clean = {k: v for k, v in record.items() if not isinstance(v, np.ndarray)}
    with open(side, "a") as fh:
        fh.write(json.dumps(clean) + "\n")
    return side
