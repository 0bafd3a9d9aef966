"""CoMP-enhanced multi-numerology downlink resource allocation (CESP) and its baselines."""

__version__ = "0.1.0"

from .scenario import ConfigError, ScenarioConfig, load_config  # noqa: E402
from .cesp import CespSolution, Instance, run_cesp  # noqa: E402
from .baselines import BaselineSpec, apply_mode  # noqa: E402

__all__ = ["ConfigError", "ScenarioConfig", "load_config", "CespSolution", "Instance", "run_cesp",
           "BaselineSpec", "apply_mode", "__version__"]
