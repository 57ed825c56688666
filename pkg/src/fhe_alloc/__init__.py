"""Energy/privacy resource allocation for encrypted fine-tuning offload.

Devices encrypt their data, upload it over FDMA and a server runs encrypted
prediction plus an adapter update. The library chooses per-device
encryption degrees, server and device frequencies, transmit powers and
bandwidths to minimise total energy minus a weighted privacy reward.
"""

from .errors import AllocError, ConfigError, FitError, InfeasibleError, InvalidLambdaError, SearchSpaceTooLarge
from .fitting import default_fit, fit_linear, fit_shifted_quadratic, security_dataset
from .joint import SolveOptions, convergence_metric, solve
from .model import Allocation, DeviceProfile, FitModel, Scenario, check_feasibility, objective_parts, total_objective
from .scenario_io import generate_scenario, load_scenario, save_scenario

__all__ = [
    "AllocError", "ConfigError", "FitError", "InfeasibleError", "InvalidLambdaError", "SearchSpaceTooLarge",
    "default_fit", "fit_linear", "fit_shifted_quadratic", "security_dataset",
    "SolveOptions", "convergence_metric", "solve",
    "Allocation", "DeviceProfile", "FitModel", "Scenario", "check_feasibility", "objective_parts", "total_objective",
    "generate_scenario", "load_scenario", "save_scenario",
]
__version__ = "0.1.0"
