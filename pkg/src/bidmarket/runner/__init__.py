from .config import ConfigError, ExperimentConfig, config_from_dict, dump_config, load_config
from .experiment import ExperimentResult, run_experiment
from .plotting import emit_plot_data
from .traces import read_trace, trace_to_csv, write_trace

__all__ = [
    "ConfigError", "ExperimentConfig", "ExperimentResult", "config_from_dict", "dump_config",
    "emit_plot_data", "load_config", "read_trace", "run_experiment", "trace_to_csv", "write_trace",
]
