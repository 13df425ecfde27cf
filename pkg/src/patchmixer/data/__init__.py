from .batching import Batch, batcher, canonical_subsample
from .benchmark import Benchmark, BenchmarkConfig, discover, make_benchmark
from .io import (
    DatasetManifest,
    FormatError,
    decode_pcb,
    encode_pcb,
    load_cloud,
    load_pcb,
    load_xyz,
    read_manifest,
    save_cloud,
    save_pcb,
    save_xyz,
    write_manifest,
)
from .synth import CATEGORIES, DomainSpec, apply_domain, synth_shape

__all__ = [
    "Batch", "Benchmark", "BenchmarkConfig", "CATEGORIES", "DatasetManifest", "DomainSpec",
    "FormatError", "apply_domain", "batcher", "canonical_subsample", "decode_pcb", "discover",
    "encode_pcb", "load_cloud", "load_pcb", "load_xyz", "make_benchmark", "read_manifest",
    "save_cloud", "save_pcb", "save_xyz", "synth_shape", "write_manifest",
]
