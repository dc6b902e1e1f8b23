"""Cache size allocation and multicast beamforming for multi-cluster C-RAN backhaul."""
from .channels import ChannelSet, load_channels, sample_channels, save_channels
from .config import ConfigError, ExperimentConfig, ProblemConfig, desk_config, paper_config
from .model import PrimalState, check_feasibility, sum_rate
from .sca import (FileCatalog, round_cache, solve_cache_allocation, solve_mcmb,
                  solve_multifile)

__version__ = "0.1.0"

__all__ = [
    "ChannelSet", "ConfigError", "ExperimentConfig", "FileCatalog", "PrimalState",
    "ProblemConfig", "check_feasibility", "desk_config", "load_channels", "paper_config",
    "round_cache", "sample_channels", "save_channels", "solve_cache_allocation", "solve_mcmb",
    "solve_multifile", "sum_rate",
]
