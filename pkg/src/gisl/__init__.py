"""Causal discovery from observational and single-gene perturbation data in
the presence of selection bias and latent confounding."""

__version__ = "0.1.0"

from .ci import CiConfig, CiVerdict, KernelCiTester, conditional_test, unconditional_test
from .core import DataBackend, GislConfig, GislResult, OracleBackend, discover, oracle_quad, run_gisl
from .data import DataMatrix
from .graph import AugmentedDag, Dag, MixedGraph, VertexKind, d_separated, generate_er_dag
from .metrics import dag_scores, evaluate, pair_accuracy, shd, zscore_eval
from .patterns import ClassTag, EdgeClass, PatternQuad, Verdict, classify_pattern
from .scm import BenchmarkConfig, BenchmarkInstance, generate_benchmark, sample_scm, simulate
from .skeleton import Skeleton, oracle_skeleton, recover_skeleton

__all__ = [
    "AugmentedDag",
    "BenchmarkConfig",
    "BenchmarkInstance",
    "CiConfig",
    "CiVerdict",
    "ClassTag",
    "Dag",
    "DataBackend",
    "DataMatrix",
    "EdgeClass",
    "GislConfig",
    "GislResult",
    "KernelCiTester",
    "MixedGraph",
    "OracleBackend",
    "PatternQuad",
    "Skeleton",
    "Verdict",
    "VertexKind",
    "classify_pattern",
    "conditional_test",
    "d_separated",
    "dag_scores",
    "discover",
    "evaluate",
    "generate_benchmark",
    "generate_er_dag",
    "oracle_quad",
    "oracle_skeleton",
    "pair_accuracy",
    "recover_skeleton",
    "run_gisl",
    "sample_scm",
    "shd",
    "simulate",
    "unconditional_test",
    "zscore_eval",
]
