"""Synthetic-mixture benchmark: compressive decoders against Lloyd and random baselines."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .calibration import probe_device, recover_transmission
from .clomp import ClompOptions, clomp_r
from .data import gen_gmm, lloyd, rand_cls_baseline, rand_data_baseline
from .entropy import select_scale
from .metrics import EvalReport, evaluate_centroids, rse, table_csv
from .opu import OpuDevice
from .pipeline import PipelineConfig, run_both
from .rff import FeatureMap, FrequencyFactors
from .sketching import ScaleGrid, sketch_multiscale

METHODS = ("CLOMP-M", "CLOMP-SO", "CLOMP-NO", "RAND-DATA", "RAND-CLS")


def calibration_error(dev: OpuDevice, repeats: int = 1) -> float:
    """Relative Frobenius error of the recovered transmission matrix."""
    cal = recover_transmission(probe_device(dev, repeats), dev.Dprime)
    A = dev.transmission
    return float(np.linalg.norm(cal.A_hat - A) / np.linalg.norm(A))


def noise_for_calibration_error(target: float, M: int, D: int, bit_depth: int = 8,
                                seed: int = 0, trials: int = 8) -> float:
    """Noise level giving calibration relative error ``target`` (error is linear in it)."""
    errs = []
    for t in range(trials):
        dev = OpuDevice.create(M, D, 1.0, bit_depth, seed=seed + t, noise_seed=seed + 1000 + t)
        errs.append(calibration_error(dev))
    return target / float(np.mean(errs))


@dataclass
class BenchConfig:
    K: int = 5
    D: int = 10
    N: int = 20_000
    ratio: float = 10.0
    M: int = 0
    S: int = 10
    sigma_min: float = 1e-3
    sigma_max: float = 1.0
    B: int = 32
    bit_depth: int = 8
    calib_target: float = 0.05
    restarts: int = 5
    full_grid: bool = True
    methods: tuple = METHODS

    @property
    def sketch_size(self) -> int:
        return self.M if self.M > 0 else 100 * self.K * self.D

    def grid(self) -> ScaleGrid:
        return ScaleGrid.logspace(self.sigma_min, self.sigma_max, self.S)


@dataclass
class SeedResult:
    seed: int
    metrics: dict = field(default_factory=dict)
    centroids: dict = field(default_factory=dict)
    entropies: Optional[np.ndarray] = None
    selected: int = -1
    grid_rse: Optional[np.ndarray] = None
    noise_std: float = 0.0
    seconds: dict = field(default_factory=dict)

    @property
    def selector_ok(self) -> bool:
        """Selected-scale RSE within 10% of the best RSE over the grid."""
        best = float(np.min(self.grid_rse))
        return bool(self.grid_rse[self.selected] <= 1.10 * best)


def _pipeline_cfg(cfg: BenchConfig, seed: int, noise_std: float) -> PipelineConfig:
    return PipelineConfig(K=cfg.K, D=cfg.D, N=cfg.N, ratio=cfg.ratio, data_seed=seed,
                          M=cfg.sketch_size, S=cfg.S, sigma_min=cfg.sigma_min,
                          sigma_max=cfg.sigma_max, B=cfg.B, path="opu",
                          frequency_seed=1000 + seed, opu_seed=2000 + seed,
                          noise_std=noise_std, bit_depth=cfg.bit_depth, clomp_seed=seed,
                          restarts=cfg.restarts)


def run_seed(seed: int, cfg: Optional[BenchConfig] = None, noise_std: Optional[float] = None) -> SeedResult:
    cfg = cfg or BenchConfig()
    out = SeedResult(seed)
    data = gen_gmm(cfg.K, cfg.D, cfg.ratio, cfg.N, seed, normalize="l2-ball")
    lc, ll = lloyd(data, cfg.K, rng=seed)
    grid = cfg.grid()
    opts = ClompOptions(seed=seed, restarts=cfg.restarts)
    box = data.box

    def score(name, C):
        out.centroids[name] = C
        out.metrics[name] = evaluate_centroids(data, C, lc, ll)

    if "CLOMP-M" in cfg.methods:
        t = time.perf_counter()
        fmap = FeatureMap.from_factors(FrequencyFactors.draw(cfg.sketch_size, cfg.D, 1000 + seed))
        sketches = sketch_multiscale(fmap, grid, data.points, frequency_seed=1000 + seed)
        idx, report = select_scale(sketches, cfg.B)
        out.entropies, out.selected = report.entropies, idx
        todo = range(len(grid)) if cfg.full_grid else [idx]
        grid_rse = np.full(len(grid), np.nan)
        for k in todo:
            m = clomp_r(sketches[k], fmap.with_scale(grid[k]), cfg.K, box, opts)
            grid_rse[k] = rse(data, m.centroids, lc)
            if k == idx:
                score("CLOMP-M", m.centroids)
        out.grid_rse = grid_rse
        out.seconds["CLOMP-M"] = time.perf_counter() - t

    if "CLOMP-SO" in cfg.methods:
        t = time.perf_counter()
        res = run_both(_pipeline_cfg(cfg, seed, 0.0), data)
        score("CLOMP-SO", res.mixture.centroids)
        out.seconds["CLOMP-SO"] = time.perf_counter() - t

    if "CLOMP-NO" in cfg.methods:
        t = time.perf_counter()
        eta = noise_std if noise_std is not None else noise_for_calibration_error(
            cfg.calib_target, cfg.sketch_size, cfg.D, cfg.bit_depth)
        out.noise_std = eta
        res = run_both(_pipeline_cfg(cfg, seed, eta), data)
        score("CLOMP-NO", res.mixture.centroids)
        out.seconds["CLOMP-NO"] = time.perf_counter() - t

    rng = np.random.default_rng(3000 + seed)
    if "RAND-DATA" in cfg.methods:
        score("RAND-DATA", rand_data_baseline(data, cfg.K, rng))
    if "RAND-CLS" in cfg.methods:
        score("RAND-CLS", rand_cls_baseline(data, data.labels, cfg.K, rng))
    return out


def run_table(seeds, cfg: Optional[BenchConfig] = None, noise_std: Optional[float] = None,
              progress=None) -> tuple[list, list]:
    """Run every seed; returns per-method ``EvalReport``s and the per-seed results."""
    cfg = cfg or BenchConfig()
    if noise_std is None and "CLOMP-NO" in cfg.methods:
        noise_std = noise_for_calibration_error(cfg.calib_target, cfg.sketch_size, cfg.D, cfg.bit_depth)
    results = []
    for s in seeds:
        r = run_seed(s, cfg, noise_std)
        results.append(r)
        if progress:
            progress(r)
    reports = []
    for name in cfg.methods:
        rep = EvalReport(name)
        for r in results:
            rep.add(r.seed, r.metrics[name])
        reports.append(rep)
    return reports, results


__all__ = ["BenchConfig", "SeedResult", "run_seed", "run_table", "calibration_error",
           "noise_for_calibration_error", "table_csv", "METHODS"]
