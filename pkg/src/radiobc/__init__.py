"""Broadcast and gathering in multi-hop radio networks, simulated round by round."""

from .broadcast import multi_message_known, multi_message_unknown, single_message_broadcast
from .config import DEFAULT, Constants
from .engine import Channel, EngineConfig, Packet, Trace, run, trace_hash
from .gather import gathering_algorithm, make_plan
from .graph import Graph, bfs_layering, clog2, generate_graph
from .gst import build_gst_distributed, build_gst_oracle, validate_gst
from .harness import ExperimentConfig, potential_trace, run_experiment

__all__ = [
    "Channel", "Constants", "DEFAULT", "EngineConfig", "ExperimentConfig", "Graph", "Packet", "Trace",
    "bfs_layering", "build_gst_distributed", "build_gst_oracle", "clog2", "gathering_algorithm",
    "generate_graph", "make_plan", "multi_message_known", "multi_message_unknown", "potential_trace",
    "run", "run_experiment", "single_message_broadcast", "trace_hash", "validate_gst",
]
__version__ = "0.1.0"
