# Utils package
from utils.config import AppConfig, ExperimentConfig, SyntheticSpec, SweepSettings, MODEL_INFO, TOOLTIPS
from utils.errors import (
    FraudLabError, UsageError, ConfigError, HyperparameterError, DataError, SchemaError,
    ParseError, DataValidationError, OutputError, InfeasiblePlanError, SelectionError,
    LeakageError, TrainingDivergedError,
)
from utils.helpers import (
    derive_seed, make_rng, canonical_json, sha256_file, round_half_up,
    fmt_pct, fmt_number, fmt_count, fmt_change, validate_config_ranges,
)
