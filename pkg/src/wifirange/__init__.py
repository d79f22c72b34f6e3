"""Wi-Fi cyber-range control plane.

Compiles declarative IEEE 802.11 training scenarios into deployable artifact
bundles, runs them as isolated namespace-based testbeds (real or simulated),
and manages the full lifecycle behind a role-gated HTTP API and a CLI.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    Band,
    BlueprintId,
    NetworkSpec,
    NodeRole,
    NodeSpec,
    ScenarioSpec,
    SecurityMode,
    SecurityProfile,
    TopologyManifest,
    ValidationReport,
    derive_manifest,
    instantiate_blueprint,
    validate_scenario,
)
from .compiler import Artifact, ArtifactBundle, compile_bundle, write_bundle  # noqa: F401
from .deploy import deploy, plan_deployment, teardown, verify  # noqa: F401
from .simexec import SimulatedExecutor  # noqa: F401
from .store import Store  # noqa: F401
