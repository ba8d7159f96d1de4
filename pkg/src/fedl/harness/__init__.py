"""Data generators, query listings, engine facade, benchmark runner and CLI."""

from .bench import BenchReport, QueryReport, run_benchmark
from .engine import Engine, QueryOutcome
from .generators import (CdrConfig, Dataset, FinbenchConfig, cdr_queries, cdr_query_shapes,
                         gen_cdr_dataset, gen_finbench_mini)

__all__ = [
    "BenchReport", "QueryReport", "run_benchmark", "Engine", "QueryOutcome",
    "CdrConfig", "Dataset", "FinbenchConfig", "cdr_queries", "cdr_query_shapes",
    "gen_cdr_dataset", "gen_finbench_mini",
]
