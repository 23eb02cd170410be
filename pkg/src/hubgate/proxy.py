"""Dynamic reverse proxy: routing table with snapshot reads, and forwarding.

Routes map path prefixes ("/user/alice/") to session backends; anything
under /hub/ goes to the hub itself. Longest matching prefix wins. Mutations
bump a monotonically increasing version; a snapshot taken at version v keeps
resolving against v regardless of later mutations.

Forwarding balances connections round-robin across the configured edge
replicas (two by default, mirroring a pair of load-shared web servers) and
surfaces dead backends as 502 plus a backend-down notification, leaving the
decision to fail the session to hub-core.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .errors import (
    BackendUnreachable,
    DuplicatePrefix,
    MalformedPrefix,
    NoRoute,
    UnknownPrefix,
)
from .network import BackendRegistry, SimRequest, SimResponse

HOP_BY_HOP_HEADERS = {
    "connection",
    "keep-alive",
    "transfer-encoding",
    "te",
    "trailer",
    "proxy-authenticate",
    "proxy-authorization",
    "upgrade",
}


@dataclass(frozen=True)
class Route:
    prefix: str
    backend: tuple[str, int]
    session_id: str


def _check_prefix(prefix: str) -> None:
    if not prefix or not prefix.startswith("/") or not prefix.endswith("/"):
        raise MalformedPrefix(f"prefix must begin and end with '/': {prefix!r}")


def _matches(path: str, prefix: str) -> bool:
    # "/user/alice" matches "/user/alice/" so bare links still land.
    return path.startswith(prefix) or path + "/" == prefix


@dataclass(frozen=True)
class RoutingSnapshot:
    """Immutable view of the table at one version; resolve is pure."""

    version: int
    hub_backend: tuple[str, int]
    routes: dict[str, Route]

    def resolve(self, path: str) -> tuple[str, int]:
        if path == "/hub" or path.startswith("/hub/"):
            return self.hub_backend
        best: Route | None = None
        for prefix, route in self.routes.items():
            if _matches(path, prefix):
                if best is None or len(prefix) > len(best.prefix):
                    best = route
        if best is None:
            raise NoRoute(f"no route for {path}")
        return best.backend

    def route_for(self, path: str) -> Route | None:
        best: Route | None = None
        for prefix, route in self.routes.items():
            if _matches(path, prefix):
                if best is None or len(prefix) > len(best.prefix):
                    best = route
        return best


class RoutingTable:
    """Single-writer routing table; readers take cheap snapshots."""

    def __init__(self, hub_backend: tuple[str, int], replicas: int = 2) -> None:
        self.hub_backend = hub_backend
        self.replicas = replicas
        self._routes: dict[str, Route] = {}
        self._version = 0

    @property
    def version(self) -> int:
        return self._version

    def add_route(self, prefix: str, backend: tuple[str, int], session_id: str) -> int:
        _check_prefix(prefix)
        if prefix in self._routes:
            raise DuplicatePrefix(prefix)
        self._routes[prefix] = Route(prefix=prefix, backend=backend, session_id=session_id)
        self._version += 1
        return self._version

    def remove_route(self, prefix: str) -> int:
        if prefix not in self._routes:
            raise UnknownPrefix(prefix)
        del self._routes[prefix]
        self._version += 1
        return self._version

    def snapshot(self) -> RoutingSnapshot:
        return RoutingSnapshot(
            version=self._version,
            hub_backend=self.hub_backend,
            routes=dict(self._routes),
        )

    def resolve(self, path: str) -> tuple[str, int]:
        return self.snapshot().resolve(path)

    def routes(self) -> list[Route]:
        return [self._routes[p] for p in sorted(self._routes)]

    def has_prefix(self, prefix: str) -> bool:
        return prefix in self._routes

    def prefixes_for_session(self, session_id: str) -> list[str]:
        return sorted(p for p, r in self._routes.items() if r.session_id == session_id)


def strip_hop_by_hop(headers: dict[str, str]) -> dict[str, str]:
    return {k: v for k, v in headers.items() if k.lower() not in HOP_BY_HOP_HEADERS}


@dataclass
class ProxyResult:
    response: SimResponse
    replica: int
    backend: tuple[str, int]


class EdgeProxy:
    """Forwards resolved requests to simulated backends.

    `on_backend_down(session_id)` is invoked when a resolved backend turns
    out to be unreachable; the caller (hub-core) owns the failure policy.
    """

    def __init__(
        self,
        table: RoutingTable,
        backends: BackendRegistry,
        on_backend_down: Callable[[str], None] | None = None,
    ) -> None:
        self.table = table
        self.backends = backends
        self.on_backend_down = on_backend_down
        self._counter = 0
        self.served_by_replica: dict[int, int] = {i: 0 for i in range(table.replicas)}

    def forward(self, request: SimRequest) -> ProxyResult:
        snapshot = self.table.snapshot()
        route = snapshot.route_for(request.path)
        if route is None:
            # /hub traffic is served natively by the hub app; forward() is for
            # session paths, so anything unresolved is NoRoute.
            raise NoRoute(f"no route for {request.path}")
        replica = self._counter % self.table.replicas
        self._counter += 1
        self.served_by_replica[replica] += 1
        host, port = route.backend
        clean = SimRequest(
            method=request.method,
            path=request.path,
            headers=strip_hop_by_hop(request.headers),
            body=request.body,
        )
        try:
            response = self.backends.dispatch(host, port, clean)
        except BackendUnreachable:
            if self.on_backend_down is not None:
                self.on_backend_down(route.session_id)
            raise
        response.headers = strip_hop_by_hop(response.headers)
        return ProxyResult(response=response, replica=replica, backend=route.backend)
