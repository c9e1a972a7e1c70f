"""Benchmark harness: datasets, grading, runs, sweeps and the synthetic suite."""
from egb.harness.datasets import DatasetError, Problem, grade, load_dataset, parse_dataset, write_dataset
from egb.harness.runner import (
    ProblemRecord,
    RunReport,
    budget_of,
    config_for,
    derive_seed,
    method_label,
    run_benchmark,
    sweep,
    tune_tau,
    write_report,
    write_summary_csv,
)
from egb.harness.synthetic import (
    TUNING_PROFILE,
    OracleVerifier,
    SpikeProfile,
    SyntheticArithmeticModel,
    SyntheticSuite,
    build_synthetic_suite,
    enumerate_completions,
)
