"""Embedding-free local-global EEND speaker diarization."""

from .backend import Backend, BackendConfig, OracleBackend, TransformerBackend, make_backend, pit_loss
from .clustering import Auto, Oracle, spectral_cluster, symmetric_eig
from .features import FeatureSequence, FrontendConfig, compute_logmel, split_windows
from .global_step import All, FirstN, RandomN, Subsample, build_pair_chunks, run_global
from .pipeline import PipelineConfig, bench_sweep, diarize, measure_rtf
from .scoring import Annotation, Turn, compute_der, emit_rttm, parse_rttm
from .simulate import SimConfig, generate_scenario

__version__ = "0.1.0"
