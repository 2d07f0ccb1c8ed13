"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .calibration import CalibrationResult, make_twin_map, probe_device, recover_transmission
from .clomp import ClompOptions, clomp_r
from .data import gen_gmm, load_csv, lloyd, save_csv, write_sidecar
from .entropy import select_scale
from .metrics import EvalReport, evaluate_centroids, table_csv
from .opu import OpuDevice
from .pipeline import (PipelineConfig, PipelineError, data_box, device_feature_map, opu_radii,
                       orchestrate, run_device_from_config, run_server_from_config)
from .protocol import ProtocolError, SocketTransport, listen
from .rff import FeatureMap, FrequencyFactors
from .sketching import ScaleGrid, Sketch, sketch_multiscale


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _grid(a) -> ScaleGrid:
    return ScaleGrid.logspace(a.sigma_min, a.sigma_max, a.S)


def _sketch_all(a, data):
    """Multi-scale sketches of ``data`` on the matrix path or through a simulated OPU."""
    box = data_box(data.points)
    if a.opu:
        if not a.calibration:
            raise SystemExit("--opu needs --calibration (for delta_n)")
        dev = OpuDevice.load(a.opu, seed=a.noise_seed)
        cal = CalibrationResult.load(a.calibration)
        fmap = device_feature_map("opu", dev.M, data.D, a.frequency_seed, box, dev, cal.delta_n)
    else:
        fmap = device_feature_map("matrix", a.M, data.D, a.frequency_seed, box)
    return sketch_multiscale(fmap, _grid(a), data.points, frequency_seed=a.frequency_seed), box


def cmd_generate(a) -> int:
    ds = gen_gmm(a.K, a.D, a.ratio, a.N, a.seed, normalize=None if a.normalize == "none" else a.normalize)
    save_csv(a.out, ds.points, labels=ds.labels)
    write_sidecar(a.out, {"kind": "dataset", **{k: v for k, v in ds.meta.items() if k != "means"},
                          "means": ds.meta["means"].tolist()})
    return 0


def cmd_make_opu(a) -> int:
    OpuDevice.create(a.M, a.D, a.noise_std, a.bit_depth, seed=a.seed).save(a.out)
    return 0


def cmd_calibrate(a) -> int:
    dev = OpuDevice.load(a.opu, seed=a.noise_seed)
    cal = recover_transmission(probe_device(dev, a.repeats), dev.Dprime,
                               opu_radii(dev.M, a.frequency_seed))
    cal.save(a.out)
    return 0


def cmd_sketch(a) -> int:
    data = load_csv(a.data, labels=a.labels)
    sketches, box = _sketch_all(a, data)
    idx, report = select_scale(sketches, a.B)
    k = idx if a.sigma_index is None else a.sigma_index
    sketches[k].save(a.out, box=box)
    write_sidecar(a.out, {"kind": "sketch", "sigma": sketches[k].scale, "selected": idx,
                          "entropies": report.entropies.tolist()})
    return 0


def cmd_grid_entropy(a) -> int:
    data = load_csv(a.data, labels=a.labels)
    sketches, _ = _sketch_all(a, data)
    _, report = select_scale(sketches, a.B)
    _emit(report.to_csv(), a.out)
    return 0


def cmd_learn(a) -> int:
    sk, box = Sketch.load(a.sketch, with_box=True)
    if box is None:
        raise SystemExit(f"{a.sketch}: sketch file carries no input box")
    D = box[0].size
    if sk.provenance == "matrix":
        fmap = FeatureMap.from_factors(FrequencyFactors.draw(sk.M, D, sk.frequency_seed), sk.scale)
    else:
        if not a.calibration:
            raise SystemExit("an OPU sketch needs --calibration")
        fmap = make_twin_map(CalibrationResult.load(a.calibration), sk.scale, box)
    m = clomp_r(sk, fmap, a.K, box, ClompOptions(seed=a.seed, restarts=a.restarts))
    save_csv(a.out, m.centroids, extra=m.weights)
    return 0


def _load_centroids(path, D: int):
    arr = np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))
    if arr.shape[1] == D + 1:
        w = arr[:, -1]
        return arr[:, :D], w / w.sum() if w.sum() > 0 else None
    if arr.shape[1] != D:
        raise SystemExit(f"{path}: {arr.shape[1]} columns for D={D}")
    return arr, None


def cmd_evaluate(a) -> int:
    data = load_csv(a.data, labels=a.labels)
    groups: dict = {}
    for item in a.centroids:
        name, _, path = item.rpartition("=")
        C, w = _load_centroids(path, data.D)
        groups.setdefault(name or Path(path).stem, []).append((C, w))
    lc, ll = lloyd(data, len(groups[next(iter(groups))][0][0]), rng=a.lloyd_seed)
    reports = []
    for name, runs in groups.items():
        rep = EvalReport(name)
        for i, (C, w) in enumerate(runs):
            rep.add(i, evaluate_centroids(data, C, lc, ll, weights=w if a.learned_weights else None))
        reports.append(rep)
    if a.format == "json":
        _emit("\n".join(r.to_json() for r in reports) + "\n", a.out)
    else:
        _emit(table_csv(reports), a.out)
    return 0


def cmd_run_pipeline(a) -> int:
    overrides = {k: v for k, v in (("host", a.host), ("port", a.port)) if v is not None}
    cfg = PipelineConfig.from_file(a.config, **overrides)
    if a.role == "both":
        rep = orchestrate(cfg)
        if not cfg.output:
            sys.stdout.write(table_csv([rep]))
        if a.centroids:
            save_csv(a.centroids, rep.result.mixture.centroids, extra=rep.result.mixture.weights)
        return 0
    if a.role == "device":
        t = SocketTransport.connect(cfg.host, cfg.port, cfg.timeout)
        try:
            res = run_device_from_config(cfg, t)
        finally:
            t.close()
        sys.stdout.write(res.report.to_csv())
        return 0
    srv = listen(cfg.host, cfg.port)
    srv.settimeout(cfg.timeout)
    sys.stderr.write(f"listening on {cfg.host}:{srv.getsockname()[1]}\n")
    sys.stderr.flush()
    conn, _ = srv.accept()
    t = SocketTransport(conn, cfg.timeout)
    try:
        res = run_server_from_config(cfg, t)
    finally:
        t.close()
        srv.close()
    out = a.centroids or cfg.output
    if out:
        save_csv(out, res.mixture.centroids, extra=res.mixture.weights)
    else:
        np.savetxt(sys.stdout, np.column_stack([res.mixture.centroids, res.mixture.weights]),
                   delimiter=",", fmt="%.17g")
    return 0


def cmd_benchmark(a) -> int:
    from .experiments import BenchConfig, run_table

    cfg = BenchConfig(K=a.K, D=a.D, N=a.N, M=a.M, S=a.S, full_grid=a.full_grid)
    reports, results = run_table(range(a.seeds), cfg, noise_std=a.noise_std,
                                 progress=lambda r: sys.stderr.write(f"seed {r.seed} done\n"))
    _emit(table_csv(reports), a.out)
    if a.json:
        Path(a.json).write_text(json.dumps([json.loads(r.to_json()) for r in reports], indent=1))
    return 0


def _sketch_args(p) -> None:
    p.add_argument("--data", required=True, help="CSV of points")
    p.add_argument("--labels", action="store_true", help="last CSV column is a label")
    p.add_argument("--M", type=int, default=5000)
    p.add_argument("--S", type=int, default=10)
    p.add_argument("--sigma-min", type=float, default=1e-3)
    p.add_argument("--sigma-max", type=float, default=1.0)
    p.add_argument("--B", type=int, default=32, help="entropy histogram bins")
    p.add_argument("--frequency-seed", type=int, default=1)
    p.add_argument("--opu", help="OPUSIM1 file; sketch through the simulated device")
    p.add_argument("--calibration", help="CALIB1 file supplying delta_n")
    p.add_argument("--noise-seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="opusketch", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthetic Gaussian mixture to CSV")
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--D", type=int, default=10)
    p.add_argument("--N", type=int, default=20000)
    p.add_argument("--ratio", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", choices=("none", "l2-ball"), default="l2-ball")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("make-opu", help="create a simulated OPU (OPUSIM1)")
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--D", type=int, required=True)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--bit-depth", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_opu)

    p = sub.add_parser("calibrate", help="probe an OPU and write CALIB1")
    p.add_argument("--opu", required=True)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--frequency-seed", type=int, default=1, help="seed of the radii")
    p.add_argument("--noise-seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sketch", help="sketch a CSV at the entropy-selected scale (SKCH1)")
    _sketch_args(p)
    p.add_argument("--sigma-index", type=int, default=None, help="override the selected scale")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sketch)

    p = sub.add_parser("grid-entropy", help="sketch entropy over a scale grid, as CSV")
    _sketch_args(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_grid_entropy)

    p = sub.add_parser("learn", help="decode centroids from a sketch file")
    p.add_argument("--sketch", required=True)
    p.add_argument("--calibration", default=None)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("evaluate", help="score centroid CSVs against Lloyd")
    p.add_argument("--data", required=True)
    p.add_argument("--labels", action="store_true")
    p.add_argument("--centroids", nargs="+", required=True, metavar="[NAME=]FILE",
                   help="files sharing a NAME are aggregated as repeated runs")
    p.add_argument("--lloyd-seed", type=int, default=0)
    p.add_argument("--learned-weights", action="store_true", help="W-Dist with learned weights")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-pipeline", help="device/server pipeline")
    p.add_argument("--role", choices=("device", "server", "both"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--centroids", default=None, help="write learned centroids here")
    p.set_defaults(func=cmd_run_pipeline)

    p = sub.add_parser("benchmark", help="synthetic benchmark over several seeds")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--D", type=int, default=10)
    p.add_argument("--N", type=int, default=20000)
    p.add_argument("--M", type=int, default=0)
    p.add_argument("--S", type=int, default=10)
    p.add_argument("--noise-std", type=float, default=None)
    p.add_argument("--full-grid", action="store_true", help="decode every scale (selector check)")
    p.add_argument("--out", default=None)
    p.add_argument("--json", default=None)
    p.set_defaults(func=cmd_benchmark)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PipelineError, ProtocolError, ValueError, OSError) as exc:
        sys.stderr.write(f"opusketch: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
