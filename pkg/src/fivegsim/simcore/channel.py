"""Deterministic discrete-event channel.

Items (messages and local triggers) are queued by delivery tick and
processed in (tick, sequence) order. Anything a node emits while handling
tick ``t`` is delivered at ``t + 1``. Attacker hooks sit on the channel:
they see every transmission before it is queued (and may drop or replace
it) and every delivery (passive observation). Every queue mutation and
delivery is appended to the transcript.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

from ..protocol.messages import BROADCAST, ProtocolMessage, observable_bytes
from ..protocol.ue import Trigger

MAX_TICKS = 500


class Hook(Protocol):
    def on_transmit(self, channel: Channel, msg: ProtocolMessage) -> list[ProtocolMessage] | None: ...

    def on_deliver(self, channel: Channel, msg: ProtocolMessage) -> None: ...


@dataclass
class Node:
    """A state machine attached to the channel."""

    state: Any
    step: Callable[[Any, Any], tuple[Any, list[ProtocolMessage]]]
    role: str

    @property
    def endpoint(self) -> str:
        return self.state.endpoint

    @property
    def phase(self) -> str:
        p = getattr(self.state, "phase", "")
        return getattr(p, "value", p)


class Transcript:
    """Append-only event log, serialised as one JSON object per line."""

    def __init__(self) -> None:
        self.records: list[dict] = []

    def append(self, record: dict) -> int:
        self.records.append(record)
        return len(self.records) - 1

    def lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def events(self, *kinds: str) -> list[tuple[int, dict]]:
        return [(i, r) for i, r in enumerate(self.records) if not kinds or r["event"] in kinds]

    def __len__(self) -> int:
        return len(self.records)


def _wire_text(msg: ProtocolMessage) -> str:
    return msg.to_wire().decode("latin-1")


def _summary(msg: ProtocolMessage) -> dict:
    return {
        "src": msg.src,
        "dst": msg.dst,
        "kind": msg.kind.value,
        "protection": "CLEAR" if msg.clear else "protected",
    }


@dataclass(order=True)
class _Item:
    tick: int
    seq: int
    payload: Any = field(compare=False)
    dst: str = field(compare=False)


class Channel:
    def __init__(self, transcript: Transcript | None = None) -> None:
        self.transcript = transcript or Transcript()
        self.nodes: dict[str, Node] = {}
        self.hooks: list[Hook] = []
        self.tick = 0
        self._seq = 0
        self._queue: list[_Item] = []

    # -- wiring --

    def add(self, node: Node) -> Node:
        self.nodes[node.endpoint] = node
        return node

    def add_hook(self, hook: Hook) -> None:
        self.hooks.append(hook)

    def log(self, record: dict) -> int:
        return self.transcript.append({"tick": self.tick, **record})

    # -- queueing --

    def _push(self, tick: int, payload: Any, dst: str) -> None:
        if tick <= self.tick:
            raise ValueError(f"cannot schedule at tick {tick}: current tick is {self.tick}")
        heapq.heappush(self._queue, _Item(tick, self._seq, payload, dst))
        self._seq += 1

    def schedule_trigger(self, endpoint: str, trigger: Trigger, tick: int | None = None) -> None:
        self._push(self.tick + 1 if tick is None else tick, trigger, endpoint)

    def transmit(self, msg: ProtocolMessage, tick: int | None = None) -> None:
        """Queue a message sent by a node, letting attacker hooks intervene first."""
        at = self.tick + 1 if tick is None else tick
        self.log({"event": "send", **_summary(msg), "at": at, "wire": _wire_text(msg)})
        outgoing = [msg]
        for hook in self.hooks:
            replaced: list[ProtocolMessage] = []
            for m in outgoing:
                result = hook.on_transmit(self, m)
                if result is None:
                    replaced.append(m)
                    continue
                if not result:
                    self.log({"event": "drop", **_summary(m), "wire": _wire_text(m)})
                for r in result:
                    if r is not m:
                        self.log({"event": "mutate", **_summary(r), "original": _wire_text(m), "wire": _wire_text(r)})
                replaced.extend(result)
            outgoing = replaced
        for m in outgoing:
            self._push(at, m, m.dst)

    def inject(self, msg: ProtocolMessage, tick: int | None = None) -> None:
        """Attacker-originated message; bypasses transmit hooks."""
        at = self.tick + 1 if tick is None else tick
        self.log({"event": "inject", **_summary(msg), "at": at, "wire": _wire_text(msg)})
        self._push(at, msg, msg.dst)

    # -- delivery --

    def _deliver(self, node: Node, item: Any) -> None:
        _, out = node.step(node.state, item)
        verdict = getattr(node.state, "last_verdict", "accepted")
        if isinstance(item, Trigger):
            self.log({"event": "trigger", "dst": node.endpoint, "trigger": item.to_fields(),
                      "verdict": verdict, "phase": node.phase})
        else:
            self.log({"event": "deliver", **_summary(item), "to": node.endpoint,
                      "verdict": verdict, "phase": node.phase, "wire": _wire_text(item)})
        for m in out:
            self.transmit(m)

    def _dispatch(self, item: _Item) -> None:
        payload = item.payload
        if isinstance(payload, Trigger):
            node = self.nodes.get(item.dst)
            if node is None:
                self.log({"event": "undeliverable", "dst": item.dst, "trigger": payload.to_fields()})
                return
            self._deliver(node, payload)
            return
        for hook in self.hooks:
            hook.on_deliver(self, payload)
        if item.dst == BROADCAST:
            targets = [n for n in self.nodes.values() if n.role == "ue"]
        else:
            node = self.nodes.get(item.dst)
            targets = [node] if node else []
        if not targets:
            self.log({"event": "undeliverable", **_summary(payload), "wire": _wire_text(payload)})
        for node in targets:
            self._deliver(node, payload)

    def step(self) -> bool:
        """Process every item due at the earliest pending tick."""
        if not self._queue:
            return False
        self.tick = self._queue[0].tick
        while self._queue and self._queue[0].tick == self.tick:
            self._dispatch(heapq.heappop(self._queue))
        return True

    def run(self, max_ticks: int = MAX_TICKS) -> int:
        """Run until the queue drains; returns the last tick processed."""
        start = self.tick
        while self._queue:
            if self._queue[0].tick - start > max_ticks:
                raise RuntimeError(f"simulation did not quiesce within {max_ticks} ticks")
            self.step()
        return self.tick

    def advance(self, ticks: int = 1) -> None:
        self.tick += ticks

    @property
    def pending(self) -> int:
        return len(self._queue)


def observation(msg: ProtocolMessage) -> dict:
    return {
        "src": msg.src,
        "dst": msg.dst,
        "clear": msg.clear,
        "visible": observable_bytes(msg).decode("latin-1"),
    }
