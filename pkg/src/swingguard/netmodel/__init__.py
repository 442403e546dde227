from .cases import smib_network, synthetic_multi_area, wscc9
from .network import (
    FAULT_ADMITTANCE,
    Bus,
    InfiniteBus,
    Line,
    Machine,
    Network,
    NetworkError,
    ReducedNetwork,
    SingularNetworkError,
    Topology,
    build_ybus,
    electrical_power,
    kron_reduce,
)
from .powerflow import PowerFlowError, PowerFlowResult, SteadyState, newton_raphson, steady_state
from .scenario import ScenarioError, load_network, network_from_dict, network_to_dict, read_json

__all__ = [
    "FAULT_ADMITTANCE", "Bus", "InfiniteBus", "Line", "Machine", "Network", "NetworkError",
    "ReducedNetwork", "SingularNetworkError", "Topology", "build_ybus", "electrical_power",
    "kron_reduce", "PowerFlowError", "PowerFlowResult", "SteadyState", "newton_raphson",
    "steady_state", "ScenarioError", "load_network", "network_from_dict", "network_to_dict",
    "read_json", "smib_network", "synthetic_multi_area", "wscc9",
]
