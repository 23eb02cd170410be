"""hubgate: a multi-tenant interactive-session hub over simulated clusters.

Three deployment flavors share one hub core: batch-scheduler jobs reached
through hub-side reverse tunnels, swarm-style container scheduling with
quota'd shared storage, and declarative pod orchestration backed by a
replicated block pool. Everything runs against a deterministic simulated
cluster driven by a logical clock.
"""

from .config import HubConfig, load_config
from .errors import HubgateError
from .hub import SessionRecord, SpawnOptions
from .simulator import load_scenario, run_scenario
from .world import World, build_world

__version__ = "0.1.0"

__all__ = [
    "HubConfig",
    "HubgateError",
    "SessionRecord",
    "SpawnOptions",
    "World",
    "build_world",
    "load_config",
    "load_scenario",
    "run_scenario",
    "__version__",
]
