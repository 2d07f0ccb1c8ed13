"""Device/server pipeline: calibrate, sketch on the device, learn on the server.

Message sequence (server speaks first)::

    server -> HELLO, SCALE_GRID            device -> HELLO, SCALE_GRID (echo)
    device -> PROBE_RESPONSES              server -> DELTA_N          (OPU path only)
    device -> BOX, SKETCH (xS with send_all)
    server -> CENTROIDS

Either side answers a failure with ERROR and stops.
"""

from __future__ import annotations

import configparser
import dataclasses
import multiprocessing as mp
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .calibration import (CalibrationResult, make_device_map, make_twin_map, probe_device,
                          recover_transmission)
from .clomp import ClompOptions, MixtureModel, clomp_r
from .data import LabeledDataset, gen_gmm, lloyd, load_csv
from .entropy import EntropyReport, select_scale
from .metrics import EvalReport, evaluate_centroids, table_csv
from .opu import OpuDevice, next_pow2
from .protocol import (PROTOCOL_VERSION, Message, MsgType, ProtocolError, SocketTransport,
                       listen, memory_pair, read_message, write_message)
from .rff import FeatureMap, FrequencyFactors, sample_radii
from .sketching import PROVENANCES, ScaleGrid, Sketch, sketch_multiscale

ROLE_DEVICE, ROLE_SERVER = 0, 1
PATHS = ("matrix", "opu")


class PipelineError(RuntimeError):
    pass


class MemoryContractError(PipelineError):
    pass


@dataclass
class PipelineConfig:
    K: int = 5
    D: int = 10
    N: int = 20_000
    ratio: float = 10.0
    normalize: str = "l2-ball"
    data_seed: int = 0
    csv: str = ""
    csv_labels: bool = False
    M: int = 0  # 0 -> 100 K D
    S: int = 10
    sigma_min: float = 1e-3
    sigma_max: float = 1.0
    B: int = 32
    path: str = "opu"
    frequency_seed: int = 1
    opu_seed: int = 2
    noise_std: float = 0.0
    bit_depth: int = 8
    calib_repeats: int = 1
    clomp_seed: int = 0
    restarts: int = 5
    lloyd_seed: int = 0
    send_all: bool = False
    transport: str = "memory"
    host: str = "127.0.0.1"
    port: int = 0
    timeout: float = 300.0
    output: str = ""

    def __post_init__(self):
        if self.path not in PATHS:
            raise ValueError(f"path must be one of {PATHS}")
        if self.transport not in ("memory", "tcp"):
            raise ValueError("transport must be 'memory' or 'tcp'")

    @property
    def sketch_size(self) -> int:
        return self.M if self.M > 0 else 100 * self.K * self.D

    def grid(self) -> ScaleGrid:
        return ScaleGrid.logspace(self.sigma_min, self.sigma_max, self.S)

    @classmethod
    def from_text(cls, text: str, **overrides) -> "PipelineConfig":
        """Parse flat ``key = value`` lines (``#`` comments allowed)."""
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        cp.optionxform = str
        cp.read_string("[pipeline]\n" + text)
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for key, raw in cp["pipeline"].items():
            if key not in kinds:
                raise ValueError(f"unknown config key {key!r}")
            kind = kinds[key]
            if kind == "bool":
                values[key] = cp["pipeline"].getboolean(key)
            elif kind == "int":
                values[key] = int(float(raw)) if "e" in raw.lower() else int(raw)
            elif kind == "float":
                values[key] = float(raw)
            else:
                values[key] = raw.strip()
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        return cls.from_text(Path(path).read_text(), **overrides)

    def load_data(self) -> LabeledDataset:
        if self.csv:
            return load_csv(self.csv, labels=self.csv_labels)
        return gen_gmm(self.K, self.D, self.ratio, self.N, self.data_seed,
                       normalize=self.normalize or None)

    def make_device(self, D: int) -> OpuDevice:
        return OpuDevice.create(self.sketch_size, D, self.noise_std, self.bit_depth,
                                seed=self.opu_seed)

    def clomp_options(self) -> ClompOptions:
        return ClompOptions(seed=self.clomp_seed, restarts=self.restarts)


@dataclass
class DeviceState:
    """What the sketching device keeps between messages, with size accounting."""

    M: int
    D: int
    S: int
    delta_n: Optional[np.ndarray] = None
    box: Optional[tuple] = None
    scales: Optional[np.ndarray] = None
    accumulators: Optional[np.ndarray] = None
    entropies: Optional[np.ndarray] = None

    def stored_reals(self) -> int:
        n = 0
        for name in ("delta_n", "scales", "entropies"):
            v = getattr(self, name)
            n += 0 if v is None else np.asarray(v).size
        if self.box is not None:
            n += sum(np.asarray(b).size for b in self.box)
        if self.accumulators is not None:
            n += 2 * np.asarray(self.accumulators).size
        return n

    def bound(self) -> int:
        return 2 * self.M * self.S + self.M + 2 * self.D + 2 * self.S

    def check(self) -> None:
        if self.stored_reals() > self.bound():
            raise MemoryContractError(
                f"device holds {self.stored_reals()} reals, bound is {self.bound()}")
        for name in ("delta_n", "scales", "entropies", "accumulators"):
            v = getattr(self, name)
            if v is not None and np.asarray(v).ndim > 1 and min(np.asarray(v).shape) > self.S:
                raise MemoryContractError(f"device state {name} has shape {np.asarray(v).shape}")


@dataclass
class DeviceResult:
    sketches: list
    selected: int
    report: EntropyReport
    mixture: Optional[MixtureModel]
    state: DeviceState
    sent_reals_presketch: int = 0


@dataclass
class ServerResult:
    mixture: MixtureModel
    sketch: Sketch
    box: tuple
    entropies: np.ndarray
    calibration: Optional[CalibrationResult] = None
    extra_sketches: list = field(default_factory=list)


def _expect(msg: Message, mtype: MsgType) -> Message:
    if msg.type == MsgType.ERROR:
        raise PipelineError(f"peer reported error {msg['code']}: {msg['message']}")
    if msg.type != mtype:
        raise ProtocolError(f"expected {mtype.name}, got {msg.type.name}")
    return msg


def _send_error(transport, exc: Exception, code: int = 1) -> None:
    try:
        write_message(transport, Message(MsgType.ERROR, {"code": code, "message": str(exc)[:1000]}))
    except Exception:  # noqa: BLE001 - best effort, the link may already be gone
        pass


def data_box(X) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate min/max, widened where a coordinate is constant."""
    lo, hi = X.min(axis=0), X.max(axis=0)
    flat = ~(hi > lo)
    hi = np.where(flat, lo + 1.0, hi)
    return lo.astype(np.float64), hi.astype(np.float64)


def device_feature_map(path: str, M: int, D: int, frequency_seed: int, box,
                       dev: Optional[OpuDevice] = None, delta_n=None) -> FeatureMap:
    if path == "matrix":
        return FeatureMap.from_factors(FrequencyFactors.draw(M, D, frequency_seed))
    dev.set_input_box(*box)
    return make_device_map(dev, delta_n, 1.0)


def opu_radii(M: int, frequency_seed: int) -> np.ndarray:
    return sample_radii(M, np.random.default_rng(frequency_seed))


def run_device(data, transport, dev: Optional[OpuDevice] = None, bins: int = 32,
               calib_repeats: int = 1, send_all: bool = False) -> DeviceResult:
    """Device role. ``dev`` is required on the OPU path."""
    X = data.points if isinstance(data, LabeledDataset) else np.atleast_2d(np.asarray(data, float))
    sent = 0
    try:
        hello = _expect(read_message(transport), MsgType.HELLO)
        grid_msg = _expect(read_message(transport), MsgType.SCALE_GRID)
        M, D, path = int(hello["M"]), int(hello["D"]), PATHS[int(hello["path"])]
        if D != X.shape[1]:
            raise PipelineError(f"server expects D={D}, data has D={X.shape[1]}")
        if path == "opu" and (dev is None or dev.M != M):
            raise PipelineError("OPU path needs a device with matching M")
        grid = ScaleGrid(tuple(grid_msg["scales"]))
        state = DeviceState(M, D, len(grid), scales=grid.array())
        write_message(transport, Message(MsgType.HELLO, {**hello.fields, "role": ROLE_DEVICE}))
        sent += write_message(transport, Message(MsgType.SCALE_GRID, {"scales": grid.array()}))

        if path == "opu":
            sent += write_message(transport, Message(MsgType.PROBE_RESPONSES,
                                                     {"responses": probe_device(dev, calib_repeats)}))
            state.delta_n = _expect(read_message(transport), MsgType.DELTA_N)["delta_n"]
            if state.delta_n.shape != (M,):
                raise PipelineError("DELTA_N has the wrong length")
        state.box = data_box(X)
        state.check()

        fmap = device_feature_map(path, M, D, int(hello["frequency_seed"]), state.box,
                                  dev, state.delta_n)
        sketches = sketch_multiscale(fmap, grid, X, frequency_seed=int(hello["frequency_seed"]))
        state.accumulators = np.stack([s.values for s in sketches])
        idx, report = select_scale(sketches, bins)
        state.entropies = report.entropies
        state.check()

        sent += write_message(transport, Message(MsgType.BOX, {"lo": state.box[0], "hi": state.box[1]}))
        sent_presketch = sent
        chosen = range(len(sketches)) if send_all else [idx]
        for k in chosen:
            sk = sketches[k]
            write_message(transport, Message(MsgType.SKETCH, {
                "sigma": sk.scale, "sample_count": sk.sample_count,
                "provenance": PROVENANCES.index(sk.provenance),
                "frequency_seed": sk.frequency_seed, "values": sk.values,
                "entropies": report.entropies, "selected": idx, "batch": len(chosen)}))
        reply = _expect(read_message(transport), MsgType.CENTROIDS)
        mixture = MixtureModel(reply["centroids"], reply["weights"])
        if dev is not None:
            dev.check_integrity()
        return DeviceResult(sketches, idx, report, mixture, state, sent_presketch)
    except (ProtocolError, PipelineError, ValueError, RuntimeError) as exc:
        _send_error(transport, exc)
        if isinstance(exc, PipelineError):
            raise
        raise PipelineError(f"device failed: {exc}") from exc


def run_server(transport, K: int, M: int, D: int, grid: ScaleGrid, path: str = "opu",
               frequency_seed: int = 1, opts: Optional[ClompOptions] = None) -> ServerResult:
    """Server role: calibrate, hand out delta_n, decode the received sketch."""
    opts = opts or ClompOptions()
    try:
        hello = {"version": PROTOCOL_VERSION, "role": ROLE_SERVER, "M": M, "D": D,
                 "path": PATHS.index(path), "frequency_seed": frequency_seed}
        write_message(transport, Message(MsgType.HELLO, hello))
        write_message(transport, Message(MsgType.SCALE_GRID, {"scales": grid.array()}))
        ack = _expect(read_message(transport), MsgType.HELLO)
        if any(ack[k] != v for k, v in hello.items() if k != "role"):
            raise PipelineError("device did not acknowledge the session parameters")
        grid_ack = _expect(read_message(transport), MsgType.SCALE_GRID)
        if not np.array_equal(grid_ack["scales"], grid.array()):
            raise PipelineError("device did not acknowledge the scale grid")

        cal = None
        if path == "opu":
            resp = _expect(read_message(transport), MsgType.PROBE_RESPONSES)["responses"]
            if resp.shape[0] != M or resp.shape[1] != next_pow2(D) + 1:
                raise PipelineError(f"probe responses have shape {resp.shape}")
            cal = recover_transmission(resp, resp.shape[1] - 1, opu_radii(M, frequency_seed))
            write_message(transport, Message(MsgType.DELTA_N, {"delta_n": cal.delta_n}))

        box_msg = _expect(read_message(transport), MsgType.BOX)
        box = (box_msg["lo"], box_msg["hi"])
        if box[0].shape != (D,) or box[1].shape != (D,):
            raise PipelineError("BOX has the wrong dimension")
        first = _expect(read_message(transport), MsgType.SKETCH)
        msgs = [first] + [_expect(read_message(transport), MsgType.SKETCH)
                          for _ in range(int(first["batch"]) - 1)]
        sketches = [Sketch(m["values"], m["sigma"], int(m["sample_count"]),
                           PROVENANCES[m["provenance"]], int(m["frequency_seed"])) for m in msgs]
        selected = int(first["selected"])
        sketch = sketches[selected] if len(sketches) > 1 else sketches[0]
        if sketch.M != M:
            raise PipelineError("sketch length does not match M")

        if path == "opu":
            fmap = make_twin_map(cal, sketch.scale, box)
        else:
            fmap = FeatureMap.from_factors(FrequencyFactors.draw(M, D, frequency_seed), sketch.scale)
        mixture = clomp_r(sketch, fmap, K, box, opts)
        write_message(transport, Message(MsgType.CENTROIDS,
                                         {"centroids": mixture.centroids, "weights": mixture.weights}))
        return ServerResult(mixture, sketch, box, first["entropies"], cal, sketches)
    except (ProtocolError, PipelineError, ValueError, RuntimeError) as exc:
        _send_error(transport, exc)
        if isinstance(exc, PipelineError):
            raise
        raise PipelineError(f"server failed: {exc}") from exc


def _server_kwargs(cfg: PipelineConfig, D: int) -> dict:
    return dict(K=cfg.K, M=cfg.sketch_size, D=D, grid=cfg.grid(), path=cfg.path,
                frequency_seed=cfg.frequency_seed, opts=cfg.clomp_options())


def run_device_from_config(cfg: PipelineConfig, transport, data=None) -> DeviceResult:
    data = cfg.load_data() if data is None else data
    dev = cfg.make_device(data.D) if cfg.path == "opu" else None
    return run_device(data, transport, dev, cfg.B, cfg.calib_repeats, cfg.send_all)


def run_server_from_config(cfg: PipelineConfig, transport, D: Optional[int] = None) -> ServerResult:
    return run_server(transport, **_server_kwargs(cfg, cfg.D if D is None else D))


def _device_process(cfg: PipelineConfig, port: int) -> None:
    transport = SocketTransport.connect(cfg.host, port, cfg.timeout)
    try:
        run_device_from_config(cfg, transport)
    finally:
        transport.close()


def run_both(cfg: PipelineConfig, data: Optional[LabeledDataset] = None) -> ServerResult:
    """Run both roles: two threads over memory, or a device subprocess over TCP."""
    data = cfg.load_data() if data is None else data
    errors: list = []
    if cfg.transport == "memory":
        a, b = memory_pair(cfg.timeout)

        def device():
            try:
                run_device_from_config(cfg, b, data)
            except Exception as exc:  # noqa: BLE001
                errors.append(exc)

        t = threading.Thread(target=device, daemon=True)
        t.start()
        try:
            result = run_server_from_config(cfg, a, data.D)
        finally:
            t.join(cfg.timeout)
        if errors:
            raise errors[0]
        return result

    srv = listen(cfg.host, cfg.port)
    port = srv.getsockname()[1]
    proc = mp.get_context("spawn").Process(target=_device_process, args=(cfg, port), daemon=True)
    proc.start()
    try:
        srv.settimeout(cfg.timeout)
        conn, _ = srv.accept()
        transport = SocketTransport(conn, cfg.timeout)
        try:
            result = run_server_from_config(cfg, transport, data.D)
        finally:
            transport.close()
    finally:
        srv.close()
        proc.join(cfg.timeout)
        if proc.is_alive():
            proc.terminate()
    if proc.exitcode not in (0, None):
        raise PipelineError(f"device process exited with code {proc.exitcode}")
    return result


def orchestrate(cfg: PipelineConfig) -> EvalReport:
    """Run the pipeline end to end and score the centroids against Lloyd's."""
    data = cfg.load_data()
    result = run_both(cfg, data)
    lc, ll = lloyd(data, cfg.K, rng=cfg.lloyd_seed)
    method = "CLOMP-M" if cfg.path == "matrix" else ("CLOMP-SO" if cfg.noise_std == 0 else "CLOMP-NO")
    report = EvalReport(method)
    report.add(cfg.data_seed, evaluate_centroids(data, result.mixture.centroids, lc, ll))
    if cfg.output:
        Path(cfg.output).write_text(table_csv([report]))
    report.result = result
    return report
