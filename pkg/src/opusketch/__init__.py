"""Compressive K-means from random Fourier sketches, with a simulated optical co-processor."""

from ._backend import BACKEND
from .calibration import (CalibrationResult, build_probe_set, make_device_map, make_twin_map,
                          probe_device, recover_transmission)
from .clomp import ClompOptions, MixtureModel, clomp_r, find_atom, mixture_sketch, nnls_weights
from .data import LabeledDataset, gen_gmm, lloyd, load_csv, rand_cls_baseline, rand_data_baseline
from .entropy import EntropyReport, select_scale, sketch_entropy
from .metrics import EvalReport, ami, empirical_risk, rse, wasserstein2
from .opu import OpuDevice, encode_bitplanes, normalize_input, opu_apply
from .rff import (FeatureMap, FrequencyFactors, build_frequency_matrix, rff_evaluate,
                  rff_gradient, sample_directions, sample_radii)
from .sketching import (ScaleGrid, Sketch, merge_sketches, sketch_multiscale, sketch_naive,
                        sketch_stream)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CalibrationResult",
    "build_probe_set",
    "make_device_map",
    "make_twin_map",
    "probe_device",
    "recover_transmission",
    "ClompOptions",
    "MixtureModel",
    "clomp_r",
    "find_atom",
    "mixture_sketch",
    "nnls_weights",
    "LabeledDataset",
    "gen_gmm",
    "lloyd",
    "load_csv",
    "rand_cls_baseline",
    "rand_data_baseline",
    "EntropyReport",
    "select_scale",
    "sketch_entropy",
    "EvalReport",
    "ami",
    "empirical_risk",
    "rse",
    "wasserstein2",
    "OpuDevice",
    "encode_bitplanes",
    "normalize_input",
    "opu_apply",
    "FeatureMap",
    "FrequencyFactors",
    "build_frequency_matrix",
    "rff_evaluate",
    "rff_gradient",
    "sample_directions",
    "sample_radii",
    "ScaleGrid",
    "Sketch",
    "merge_sketches",
    "sketch_multiscale",
    "sketch_naive",
    "sketch_stream",
    "__version__",
]
