"""Swarm-style container scheduling across a node pool.

One master coordinates; workers (and the master itself, capacity allowing)
run session containers. Placement spreads each replica onto the alive node
with the fewest running containers that still fits the limits, lowest node
id on ties, all-or-nothing per service. When a node dies its containers are
redeployed through the same placement rule with the user volume reattached
by path. The master is an explicit single point of failure: losing it halts
the control plane until restored.
"""

from __future__ import annotations

from dataclasses import dataclass

from .clock import EventLog
from .errors import (
    DuplicateNode,
    ExportFull,
    InvalidOptions,
    MasterLost,
    NoMaster,
    Unschedulable,
    UnknownNode,
)
from .hub import Hub, SessionEvent, SpawnOptions
from .network import BackendRegistry, ListenerRegistry, SimBackend, echo_responder
from .volumes import VolumeManager

CONTAINER_PORT_BASE = 32000

ANY_SPREAD = "ANY_SPREAD"
MASTER_ONLY = "MASTER_ONLY"


@dataclass
class SwarmNode:
    node_id: str
    cpus: int
    memory: int        # MiB
    is_master: bool = False
    reserved_cpus: int = 0
    reserved_memory: int = 0
    alive: bool = True
    next_port: int = CONTAINER_PORT_BASE

    def fits(self, cpus: int, memory: int) -> bool:
        return (self.alive
                and self.reserved_cpus + cpus <= self.cpus
                and self.reserved_memory + memory <= self.memory)


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    replicas: int
    limits: tuple[int, int]          # (cpus, memory MiB)
    placement: str = ANY_SPREAD
    volume: str | None = None        # username of the attached user volume

    def __post_init__(self) -> None:
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if self.limits[0] <= 0 or self.limits[1] <= 0:
            raise ValueError("limits must be positive")


@dataclass
class ContainerInstance:
    container_id: str
    service: str
    node_id: str
    port: int
    state: str = "RUNNING"  # RUNNING | LOST | REMOVED


@dataclass(frozen=True)
class RescheduleAction:
    service: str
    volume: str | None
    from_node: str
    to_node: str | None          # None when no capacity was left
    old_container: str
    new_container: str | None


class SwarmCluster:
    """Placement ledger: nodes, service specs, containers. Single-writer."""

    def __init__(self) -> None:
        self.nodes: dict[str, SwarmNode] = {}
        self.services: dict[str, ServiceSpec] = {}
        self.containers: dict[str, ContainerInstance] = {}
        self.halted = False
        self._next_container = 1

    # --- membership -----------------------------------------------------------

    @property
    def master(self) -> SwarmNode | None:
        for node in self.nodes.values():
            if node.is_master:
                return node
        return None

    def join_node(self, node_id: str, cpus: int, memory: int,
                  master_addr: str | None = None) -> SwarmNode:
        """master_addr None creates the (single) master; otherwise a worker joins."""
        if node_id in self.nodes:
            raise DuplicateNode(node_id)
        master = self.master
        if master_addr is None:
            if master is not None:
                raise DuplicateNode(f"master already exists: {master.node_id}")
            node = SwarmNode(node_id=node_id, cpus=cpus, memory=memory, is_master=True)
        else:
            if master is None:
                raise NoMaster("join a master before workers")
            node = SwarmNode(node_id=node_id, cpus=cpus, memory=memory)
        self.nodes[node_id] = node
        return node

    def max_node_shape(self) -> tuple[int, int]:
        if not self.nodes:
            return (0, 0)
        return (max(n.cpus for n in self.nodes.values()),
                max(n.memory for n in self.nodes.values()))

    # --- placement ---------------------------------------------------------------

    def running_count(self, node_id: str) -> int:
        return sum(1 for c in self.containers.values()
                   if c.node_id == node_id and c.state == "RUNNING")

    def _pick_spread_node(self, cpus: int, memory: int,
                          pending_counts: dict[str, int]) -> SwarmNode | None:
        candidates = [n for n in self.nodes.values() if n.alive]
        candidates.sort(key=lambda n: (self.running_count(n.node_id) + pending_counts.get(n.node_id, 0),
                                       n.node_id))
        for node in candidates:
            if node.fits(cpus, memory):
                return node
        return None

    def schedule_service(self, spec: ServiceSpec) -> list[ContainerInstance]:
        """Place every replica or nothing; reservations update on commit."""
        if self.halted:
            raise MasterLost("swarm control plane is halted")
        if spec.name in self.services:
            raise ValueError(f"service {spec.name} already scheduled")
        cpus, memory = spec.limits
        plan: list[SwarmNode] = []
        pending: dict[str, int] = {}
        for _ in range(spec.replicas):
            if spec.placement == MASTER_ONLY:
                master = self.master
                if master is None:
                    raise NoMaster("no master to pin to")
                node = master if master.fits(cpus, memory) else None
            else:
                node = self._pick_spread_node(cpus, memory, pending)
            if node is None:
                for reserved in plan:  # all-or-nothing: roll the plan back
                    reserved.reserved_cpus -= cpus
                    reserved.reserved_memory -= memory
                raise Unschedulable(
                    f"{spec.name}: no node fits ({cpus} cpus, {memory} MiB) "
                    f"for all {spec.replicas} replicas")
            # reserve in-plan so later replicas see the updated load
            node.reserved_cpus += cpus
            node.reserved_memory += memory
            pending[node.node_id] = pending.get(node.node_id, 0) + 1
            plan.append(node)
        self.services[spec.name] = spec
        placed = [self._materialize(spec, node) for node in plan]
        return placed

    def _materialize(self, spec: ServiceSpec, node: SwarmNode) -> ContainerInstance:
        container = ContainerInstance(
            container_id=f"c{self._next_container}",
            service=spec.name,
            node_id=node.node_id,
            port=node.next_port,
        )
        self._next_container += 1
        node.next_port += 1
        self.containers[container.container_id] = container
        return container

    def remove_service(self, name: str) -> list[ContainerInstance]:
        spec = self.services.pop(name, None)
        removed = []
        if spec is None:
            return removed
        for container in self.containers_for(name):
            if container.state == "RUNNING":
                node = self.nodes[container.node_id]
                node.reserved_cpus -= spec.limits[0]
                node.reserved_memory -= spec.limits[1]
            container.state = "REMOVED"
            removed.append(container)
        return removed

    def containers_for(self, service: str) -> list[ContainerInstance]:
        out = [c for c in self.containers.values() if c.service == service]
        out.sort(key=lambda c: int(c.container_id[1:]))
        return out

    def running_container_for(self, service: str) -> ContainerInstance | None:
        for container in self.containers_for(service):
            if container.state == "RUNNING":
                return container
        return None

    # --- failure handling -------------------------------------------------------------

    def handle_node_failure(self, node_id: str) -> list[RescheduleAction]:
        node = self.nodes.get(node_id)
        if node is None:
            raise UnknownNode(node_id)
        if not node.alive:
            return []
        node.alive = False
        node.reserved_cpus = 0
        node.reserved_memory = 0
        lost = [c for c in self.containers.values()
                if c.node_id == node_id and c.state == "RUNNING"]
        lost.sort(key=lambda c: int(c.container_id[1:]))
        if node.is_master:
            # the control plane dies with the master: its containers are
            # lost and nothing can be rescheduled until it is restored
            for container in lost:
                container.state = "LOST"
            self.halted = True
            raise MasterLost(f"master {node_id} lost; scheduling halted")
        actions: list[RescheduleAction] = []
        for container in lost:
            container.state = "LOST"
            spec = self.services[container.service]
            cpus, memory = spec.limits
            target = (self.master if spec.placement == MASTER_ONLY
                      else self._pick_spread_node(cpus, memory, {}))
            if target is None or not target.fits(cpus, memory):
                actions.append(RescheduleAction(
                    service=spec.name, volume=spec.volume, from_node=node_id,
                    to_node=None, old_container=container.container_id,
                    new_container=None))
                continue
            target.reserved_cpus += cpus
            target.reserved_memory += memory
            replacement = self._materialize(spec, target)
            actions.append(RescheduleAction(
                service=spec.name, volume=spec.volume, from_node=node_id,
                to_node=target.node_id, old_container=container.container_id,
                new_container=replacement.container_id))
        return actions

    def restore_node(self, node_id: str) -> SwarmNode:
        node = self.nodes.get(node_id)
        if node is None:
            raise UnknownNode(node_id)
        node.alive = True
        node.reserved_cpus = 0
        node.reserved_memory = 0
        if node.is_master:
            self.halted = False
        return node

    def check_capacity_invariant(self) -> None:
        for node in self.nodes.values():
            used_cpus = used_mem = 0
            for container in self.containers.values():
                if container.node_id == node.node_id and container.state == "RUNNING":
                    spec = self.services[container.service]
                    used_cpus += spec.limits[0]
                    used_mem += spec.limits[1]
            assert used_cpus <= node.cpus and used_mem <= node.memory, node.node_id
            assert node.reserved_cpus == used_cpus and node.reserved_memory == used_mem, \
                f"{node.node_id}: ledger drift"


class SwarmSpawner:
    """Hub-facing adapter: session containers + user volumes on the swarm."""

    kind = "swarm"
    needs_charge_account = False

    def __init__(
        self,
        cluster: SwarmCluster,
        volumes: VolumeManager,
        backends: BackendRegistry,
        listeners: ListenerRegistry,
        event_log: EventLog,
        startup_delay_s: int = 2,
    ) -> None:
        self.cluster = cluster
        self.volumes = volumes
        self.backends = backends
        self.listeners = listeners
        self.log = event_log
        self.startup_delay_s = max(1, startup_delay_s)
        self.hub: Hub | None = None
        self._pending: list[tuple[str, str, SpawnOptions]] = []
        self._usernames: dict[str, str] = {}
        self._milestones: list[tuple[int, str, str]] = []

    def attach_hub(self, hub: Hub) -> None:
        self.hub = hub

    def _service_name(self, session_id: str) -> str:
        return f"nb-{session_id}"

    # --- SpawnerBackend -----------------------------------------------------------

    def admission_check(self, options: SpawnOptions) -> None:
        max_cpus, max_mem = self.cluster.max_node_shape()
        if options.cpus > max_cpus or options.memory > max_mem:
            raise InvalidOptions(
                f"request ({options.cpus} cpus, {options.memory} MiB) exceeds the "
                f"largest node ({max_cpus} cpus, {max_mem} MiB)")

    def spawn(self, session_id: str, username: str, options: SpawnOptions,
              account: str | None) -> None:
        self._usernames[session_id] = username
        self._pending.append((session_id, username, options))

    def stop(self, session_id: str) -> None:
        assert self.hub is not None
        self._teardown(session_id)
        self.hub.deliver(session_id, SessionEvent(kind="stopped"))

    def release(self, session_id: str) -> None:
        self._teardown(session_id)

    def on_tick(self, now: int) -> None:
        assert self.hub is not None
        pending, self._pending = self._pending, []
        for session_id, username, options in pending:
            try:
                self.volumes.ensure_user_volume(username)
                spec = ServiceSpec(
                    name=self._service_name(session_id),
                    replicas=1,
                    limits=(options.cpus, options.memory),
                    placement=ANY_SPREAD,
                    volume=username,
                )
                placed = self.cluster.schedule_service(spec)
            except (ExportFull, Unschedulable, MasterLost) as exc:
                self.log.append("spawn_rejected", session=session_id, error=exc.name)
                self.hub.deliver(session_id, SessionEvent(kind="failed", reason=str(exc)))
                continue
            container = placed[0]
            self.log.append("container_scheduled", session=session_id,
                            container=container.container_id, node=container.node_id)
            self.hub.deliver(session_id, SessionEvent(kind="scheduled"))
            self._milestones.append((now + 1, session_id, "starting"))
            self._milestones.append((now + self.startup_delay_s, session_id, "backend_ready"))
        self._fire_milestones(now)

    def has_live_resources(self, session_id: str) -> bool:
        return self.cluster.running_container_for(self._service_name(session_id)) is not None

    # --- faults --------------------------------------------------------------------

    def handle_node_failure(self, node_id: str) -> list[RescheduleAction]:
        assert self.hub is not None
        doomed = [c for c in self.cluster.containers.values()
                  if c.node_id == node_id and c.state == "RUNNING"
                  and c.service.startswith("nb-")]
        try:
            actions = self.cluster.handle_node_failure(node_id)
        except MasterLost:
            for container in sorted(doomed, key=lambda c: int(c.container_id[1:])):
                session_id = container.service[len("nb-"):]
                self.log.append("container_unrecoverable", session=session_id,
                                node=node_id)
                self.hub.deliver(session_id, SessionEvent(
                    kind="failed", reason="master lost"))
            self.hub.process_pending()
            raise
        for action in actions:
            if not action.service.startswith("nb-"):
                continue
            session_id = action.service[len("nb-"):]
            if action.to_node is None:
                self.log.append("container_unrecoverable", session=session_id,
                                node=node_id)
                self.hub.deliver(session_id, SessionEvent(
                    kind="failed", reason="no capacity after node failure"))
                continue
            new = self.cluster.containers[action.new_container]
            self.log.append("container_rescheduled", session=session_id,
                            from_node=action.from_node, to_node=new.node_id,
                            container=new.container_id)
            record = self.hub.get_session(session_id)
            if record.state == "RUNNING":
                self._register_backend(session_id, new)
                self.hub.relocate_backend(session_id, new.node_id, new.port)
            # sessions still starting up pick the new container at their
            # backend_ready milestone
        self.hub.process_pending()
        return actions

    def handle_node_restore(self, node_id: str) -> None:
        self.cluster.restore_node(node_id)

    # --- internals -------------------------------------------------------------------

    def _register_backend(self, session_id: str, container: ContainerInstance) -> None:
        username = self._usernames[session_id]
        self.backends.register(SimBackend(
            host=container.node_id,
            port=container.port,
            session_id=session_id,
            username=username,
            responder=echo_responder(username),
        ))
        self.listeners.open(container.node_id, container.port,
                            owner=f"container:{container.container_id}")

    def _fire_milestones(self, now: int) -> None:
        assert self.hub is not None
        due = sorted(m for m in self._milestones if m[0] <= now)
        self._milestones = [m for m in self._milestones if m[0] > now]
        for _, session_id, kind in due:
            container = self.cluster.running_container_for(self._service_name(session_id))
            if container is None:
                continue  # stopped or unrecoverable in the meantime
            if kind == "starting":
                self.hub.deliver(session_id, SessionEvent(kind="starting"))
            else:
                self._register_backend(session_id, container)
                self.hub.deliver(session_id, SessionEvent(
                    kind="backend_ready", host=container.node_id, port=container.port))

    def _teardown(self, session_id: str) -> None:
        service = self._service_name(session_id)
        self._pending = [p for p in self._pending if p[0] != session_id]
        for container in self.cluster.remove_service(service):
            self.backends.unregister(container.node_id, container.port)
            self.listeners.close(container.node_id, container.port)
            self.log.append("container_removed", session=session_id,
                            container=container.container_id)
