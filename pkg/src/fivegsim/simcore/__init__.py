"""Deterministic channel, scenario files and sweeps.

``runner`` depends on the adversary module and is imported explicitly.
"""

from .channel import Channel, Node, Transcript
from .scenario import ScenarioConfig, World, build_world, load_scenario, parse_scenario

__all__ = ["Channel", "Node", "ScenarioConfig", "Transcript", "World", "build_world", "load_scenario",
           "parse_scenario"]
