"""Centroid quality relative to a Lloyd reference: RSE, AMI and Wasserstein-2."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from sklearn.metrics import adjusted_mutual_info_score


def nearest_centroid(X, C) -> tuple[np.ndarray, np.ndarray]:
    """Index of and squared distance to the closest centroid, per point (first index on ties)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    if C.shape[0] < 1:
        raise ValueError("need at least one centroid")
    best = np.full(X.shape[0], np.inf)
    idx = np.zeros(X.shape[0], dtype=np.int64)
    for k, c in enumerate(C):
        d2 = ((X - c) ** 2).sum(axis=1)
        closer = d2 < best
        best[closer] = d2[closer]
        idx[closer] = k
    return idx, best


def empirical_risk(data, centroids) -> float:
    """Sum over points of the squared distance to the nearest centroid."""
    X = getattr(data, "points", data)
    return float(nearest_centroid(X, centroids)[1].sum())


def rse(data, centroids, lloyd_centroids) -> float:
    """Risk of ``centroids`` relative to the Lloyd reference."""
    return empirical_risk(data, centroids) / empirical_risk(data, lloyd_centroids)


def _same_partition(a, b) -> bool:
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    pairs = np.unique(np.stack([ia, ib]), axis=1)
    return pairs.shape[1] == ia.max() + 1 == ib.max() + 1


def ami(labels_a, labels_b) -> float:
    """Adjusted mutual information, arithmetic-mean normalisation.

    Identical partitions score 1 (this also settles the zero-denominator
    cases, which only arise for identical trivial partitions).
    """
    a = np.asarray(labels_a).reshape(-1)
    b = np.asarray(labels_b).reshape(-1)
    if a.size != b.size:
        raise ValueError("label vectors differ in length")
    if _same_partition(a, b):
        return 1.0
    return float(adjusted_mutual_info_score(a, b, average_method="arithmetic"))


def _as_cloud(m):
    if hasattr(m, "centroids"):
        return np.atleast_2d(m.centroids), np.asarray(m.weights, dtype=np.float64)
    C, w = m
    return np.atleast_2d(np.asarray(C, dtype=np.float64)), np.asarray(w, dtype=np.float64)


def wasserstein2(mix_a, mix_b) -> float:
    """Exact W2 between two weighted Dirac clouds (squared Euclidean ground cost).

    Accepts ``MixtureModel`` objects or ``(centroids, weights)`` pairs.
    """
    Ca, wa = _as_cloud(mix_a)
    Cb, wb = _as_cloud(mix_b)
    for w in (wa, wb):
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
    Ka, Kb = wa.size, wb.size
    cost = ((Ca[:, None, :] - Cb[None, :, :]) ** 2).sum(axis=2)
    if Ka == 1 or Kb == 1:
        # the only feasible plan
        plan = np.outer(wa, wb)
        return float(np.sqrt(max((plan * cost).sum(), 0.0)))
    A_eq = np.zeros((Ka + Kb, Ka * Kb))
    for i in range(Ka):
        A_eq[i, i * Kb:(i + 1) * Kb] = 1.0
    for j in range(Kb):
        A_eq[Ka + j, j::Kb] = 1.0
    b_eq = np.concatenate([wa, wb])
    # the constraint system has rank Ka + Kb - 1; drop one redundant row
    res = linprog(cost.ravel(), A_eq=A_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(np.sqrt(max(res.fun, 0.0)))


def evaluate_centroids(data, centroids, lloyd_centroids, lloyd_labels=None,
                       weights=None, lloyd_weights=None) -> dict:
    """RSE, AMI (nearest-centroid partitions vs Lloyd's) and W2 (uniform weights by default)."""
    X = getattr(data, "points", data)
    C = np.atleast_2d(centroids)
    L = np.atleast_2d(lloyd_centroids)
    if lloyd_labels is None:
        lloyd_labels = nearest_centroid(X, L)[0]
    labels = nearest_centroid(X, C)[0]
    wa = np.full(C.shape[0], 1.0 / C.shape[0]) if weights is None else weights
    wb = np.full(L.shape[0], 1.0 / L.shape[0]) if lloyd_weights is None else lloyd_weights
    return {
        "rse": rse(X, C, L),
        "ami": ami(labels, lloyd_labels),
        "wdist": wasserstein2((C, wa), (L, wb)),
    }


def fmt_pm(values) -> str:
    """Mean and standard deviation in the ``1.02(± 0.0)`` style."""
    v = np.asarray(values, dtype=np.float64)
    return f"{v.mean():.2f}(± {v.std():.1f})"


@dataclass
class EvalReport:
    method: str
    rse: list = field(default_factory=list)
    ami: list = field(default_factory=list)
    wdist: list = field(default_factory=list)
    seeds: list = field(default_factory=list)

    def add(self, seed, metrics: dict) -> None:
        self.seeds.append(seed)
        self.rse.append(float(metrics["rse"]))
        self.ami.append(float(metrics["ami"]))
        self.wdist.append(float(metrics["wdist"]))

    def mean(self, key: str) -> float:
        return float(np.mean(getattr(self, key)))

    def std(self, key: str) -> float:
        return float(np.std(getattr(self, key)))

    def row(self) -> dict:
        return {"method": self.method, "rse": fmt_pm(self.rse), "ami": fmt_pm(self.ami),
                "wdist": fmt_pm(self.wdist), "runs": len(self.seeds)}

    def to_json(self) -> str:
        d = {"method": self.method, "seeds": self.seeds, "rse": self.rse, "ami": self.ami,
             "wdist": self.wdist}
        for key in ("rse", "ami", "wdist"):
            d[f"{key}_mean"] = self.mean(key)
            d[f"{key}_std"] = self.std(key)
        return json.dumps(d)


def table_csv(reports: Sequence[EvalReport]) -> str:
    lines = ["method,RSE,AMI,W-Dist,runs"]
    for r in reports:
        row = r.row()
        lines.append(f"{row['method']},{row['rse']},{row['ami']},{row['wdist']},{row['runs']}")
    return "\n".join(lines) + "\n"
