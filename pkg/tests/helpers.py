"""World-building shortcuts shared by the protocol-level tests."""

from __future__ import annotations

from fivegsim.protocol.ue import Trigger
from fivegsim.simcore.scenario import World, build_world


def announced(config) -> World:
    """A world in which every cell's broadcast has reached the UEs."""
    world = build_world(config)
    for net in world.networks.values():
        world.channel.schedule_trigger(net.endpoint, Trigger("broadcast"))
    world.channel.run()
    return world


def registered(config) -> World:
    world = announced(config)
    world.channel.schedule_trigger(world.ue.endpoint, Trigger("power_on"))
    world.channel.run()
    return world
