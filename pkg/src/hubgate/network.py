"""Simulated network substrate.

Backends are in-process objects addressed by (host, port); hosts are node
ids ("n3") or the hub host. The listener registry records every simulated
inbound listener so tests can assert the batch contract that compute nodes
never expose one (tunnel listeners live on the hub side only).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .errors import BackendUnreachable


@dataclass
class SimRequest:
    method: str
    path: str
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""


@dataclass
class SimResponse:
    status: int
    body: bytes
    headers: dict[str, str] = field(default_factory=dict)


def echo_responder(username: str) -> Callable[[SimRequest], SimResponse]:
    """Default single-user notebook stand-in: answers OK-<user> on any path."""

    def respond(request: SimRequest) -> SimResponse:
        body = f"OK-{username}".encode()
        return SimResponse(status=200, body=body, headers={"Content-Type": "text/plain"})

    return respond


@dataclass
class SimBackend:
    host: str
    port: int
    session_id: str
    username: str
    responder: Callable[[SimRequest], SimResponse]
    channel: str = "plain"  # "encrypted-tunnel" for batch reverse tunnels
    alive: bool = True

    @property
    def address(self) -> tuple[str, int]:
        return (self.host, self.port)


class BackendRegistry:
    """All live simulated session backends, keyed by (host, port)."""

    def __init__(self) -> None:
        self._backends: dict[tuple[str, int], SimBackend] = {}

    def register(self, backend: SimBackend) -> None:
        self._backends[backend.address] = backend

    def unregister(self, host: str, port: int) -> None:
        self._backends.pop((host, port), None)

    def get(self, host: str, port: int) -> SimBackend | None:
        return self._backends.get((host, port))

    def mark_down(self, host: str, port: int) -> None:
        backend = self._backends.get((host, port))
        if backend is not None:
            backend.alive = False

    def drop_node(self, node_id: str) -> list[SimBackend]:
        """Remove every backend hosted on a node; returns what was dropped."""
        dropped = [b for addr, b in self._backends.items() if addr[0] == node_id]
        for backend in dropped:
            del self._backends[backend.address]
        return dropped

    def dispatch(self, host: str, port: int, request: SimRequest) -> SimResponse:
        backend = self._backends.get((host, port))
        if backend is None or not backend.alive:
            raise BackendUnreachable(f"no live backend at {host}:{port}")
        return backend.responder(request)

    def addresses(self) -> list[tuple[str, int]]:
        return sorted(self._backends)


class ListenerRegistry:
    """Every simulated inbound listener in the world: (host, port) -> owner tag."""

    def __init__(self) -> None:
        self._listeners: dict[tuple[str, int], str] = {}

    def open(self, host: str, port: int, owner: str) -> None:
        self._listeners[(host, port)] = owner

    def close(self, host: str, port: int) -> None:
        self._listeners.pop((host, port), None)

    def close_node(self, node_id: str) -> None:
        for addr in [a for a in self._listeners if a[0] == node_id]:
            del self._listeners[addr]

    def on_host(self, host: str) -> list[tuple[int, str]]:
        return sorted((port, owner) for (h, port), owner in self._listeners.items() if h == host)

    def all(self) -> list[tuple[str, int, str]]:
        return sorted((h, p, o) for (h, p), o in self._listeners.items())
