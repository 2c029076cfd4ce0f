"""Byzantine fault-tolerant membership and consensus for simulated ad hoc networks."""
from . import comm, consensus, core, membership, netsim, wire  # noqa: F401  (registers message types)
from .core import ConfigurationError, FaultBudget, InstanceId, ProtocolTag, quorum
from .netsim import LinkModel, Simulator, TopologyConfig, TopologyKind
from .node import Network, Node, NodeConfig, SinkView

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "FaultBudget", "InstanceId", "LinkModel", "Network", "Node",
    "NodeConfig", "ProtocolTag", "Simulator", "SinkView", "TopologyConfig", "TopologyKind",
    "quorum",
]
