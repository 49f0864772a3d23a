"""codofuzz: black-box coverage-guided fuzzing for probabilistic
classifiers.

The engine discretizes a classifier's output space (its co-domain) into
a class-by-confidence grid, fuzzes seed images with label-preserving
transformations, and keeps exactly the mutants that land in uncovered
grid cells. Suites are scored on misclassification counts, predictive
uncertainty, output impartiality, and distinct error types.
"""

from .coverage import (
    CoverageMatrix,
    CoverageSnapshot,
    OutputTuple,
    bin_index,
    feasible_cell_count,
    infeasible_cells,
)
from .dataio import (
    IdxPair,
    PngDirectory,
    SyntheticBlobs,
    build_seed_set,
    load_dataset,
    load_report,
    load_suite,
    parse_dataset_arg,
    save_suite,
    write_png_dataset,
)
from .errors import (
    CodofuzzError,
    ConfigurationError,
    CorruptionError,
    DataError,
    InputError,
    ParseError,
    ProtocolError,
    TransportError,
)
from .evaluation import (
    RotationRow,
    SuiteMetrics,
    avg_entropy,
    compute_metrics,
    distinct_classes,
    distinct_error_types,
    emit_report,
    misclassified_count,
    output_impartiality,
    rotation_correlation,
    shannon_entropy,
)
from .fuzzer import (
    FuzzAborted,
    FuzzConfig,
    FuzzReport,
    SeedPool,
    StepOutcome,
    TestInput,
    TestSuite,
    rng_streams,
    run_fuzz,
    select_seed,
)
from .images import check_image, quantize, to_bytes, to_unit
from .mutation import (
    AFFINE_KINDS,
    LineageState,
    MutationRecord,
    TransformKind,
    TransformRanges,
    apply_transform,
    is_valid,
    mutate,
    replay_lineage,
)
from .oracle import (
    LinearSoftmaxModel,
    OracleClient,
    Prediction,
    RemoteOracle,
    connect_oracle,
    softmax,
)

__version__ = "0.1.0"

__all__ = [
    "AFFINE_KINDS",
    "CodofuzzError",
    "ConfigurationError",
    "CorruptionError",
    "CoverageMatrix",
    "CoverageSnapshot",
    "DataError",
    "FuzzAborted",
    "FuzzConfig",
    "FuzzReport",
    "IdxPair",
    "InputError",
    "LinearSoftmaxModel",
    "LineageState",
    "MutationRecord",
    "OracleClient",
    "OutputTuple",
    "ParseError",
    "PngDirectory",
    "Prediction",
    "ProtocolError",
    "RemoteOracle",
    "RotationRow",
    "SeedPool",
    "StepOutcome",
    "SuiteMetrics",
    "SyntheticBlobs",
    "TestInput",
    "TestSuite",
    "TransformKind",
    "TransformRanges",
    "TransportError",
    "apply_transform",
    "avg_entropy",
    "bin_index",
    "build_seed_set",
    "check_image",
    "compute_metrics",
    "connect_oracle",
    "distinct_classes",
    "distinct_error_types",
    "emit_report",
    "feasible_cell_count",
    "infeasible_cells",
    "is_valid",
    "load_dataset",
    "load_report",
    "load_suite",
    "misclassified_count",
    "mutate",
    "output_impartiality",
    "parse_dataset_arg",
    "quantize",
    "replay_lineage",
    "rng_streams",
    "rotation_correlation",
    "run_fuzz",
    "save_suite",
    "select_seed",
    "shannon_entropy",
    "softmax",
    "to_bytes",
    "to_unit",
    "write_png_dataset",
]
