"""GHZ-based common coin, conference key agreement and coin-driven consensus simulators."""

from .agreement import CrashFault, run_coin_binary_agreement, run_flp_demo
from .coin import estimate_fairness, is_common, run_coin
from .consensus import BlockData, MaskMode, NodeBehavior, check_properties, run_block_agreement
from .netsim import Adversarial, Fifo, Network, PartitionSpec, RandomDelay
from .qkd import bb84_exchange, detect_eavesdropper, topology_cost
from .quantum import StateVector, make_ghz, timebin_pipeline
from .rng import split
from .server import CKAServer, FaultSpec, ServerMode

__all__ = [
    "Adversarial", "BlockData", "CKAServer", "CrashFault", "FaultSpec", "Fifo", "MaskMode",
    "Network", "NodeBehavior", "PartitionSpec", "RandomDelay", "ServerMode", "StateVector",
    "bb84_exchange", "check_properties", "detect_eavesdropper", "estimate_fairness", "is_common",
    "make_ghz", "run_block_agreement", "run_coin", "run_coin_binary_agreement", "run_flp_demo",
    "split", "timebin_pipeline", "topology_cost",
]
