"""Declarative pod orchestration: desired state, reconcile, drain, join.

The reconciler is a pure planner: it diffs desired pods against observed
placement and emits an ordered action list (DELETE, then MIGRATE off
cordoned/dead nodes, then CREATE on the least-loaded fitting node, lowest
node id on ties), with per-pod UNSCHEDULABLE reports appended instead of
aborting. Applying the plan and reconciling again yields an empty list.
Drain is atomic: the full migration plan is computed against residual
capacity before anything moves.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

from .clock import EventLog
from .errors import (
    DuplicateNode,
    InsufficientCapacity,
    InvalidOptions,
    PoolFull,
    UnknownNode,
)
from .hub import Hub, SessionEvent, SpawnOptions
from .network import BackendRegistry, ListenerRegistry, SimBackend, echo_responder
from .storage import StoragePool

POD_PORT_BASE = 34000

SYSTEM_OWNERS = ("hub", "edge-proxy")

CREATE = "CREATE"
DELETE = "DELETE"
MIGRATE = "MIGRATE"
UNSCHEDULABLE = "UNSCHEDULABLE"


@dataclass(frozen=True)
class PodSpec:
    name: str
    cpus: int
    memory: int                  # MiB
    disk: int                    # MiB, enforced via the claim in the block pool
    claim_id: str | None = None
    owner: str = "hub"           # session id, or a system role

    def __post_init__(self) -> None:
        if self.cpus <= 0 or self.memory <= 0 or self.disk < 0:
            raise ValueError(f"{self.name}: limits must be positive")

    @property
    def is_system(self) -> bool:
        return self.owner in SYSTEM_OWNERS


@dataclass
class NodeStatus:
    node_id: str
    cpus: int
    memory: int
    cordoned: bool = False
    alive: bool = True
    pods: set[str] = field(default_factory=set)
    next_port: int = POD_PORT_BASE


class DesiredState:
    def __init__(self) -> None:
        self.pods: dict[str, PodSpec] = {}

    def add(self, spec: PodSpec) -> None:
        if spec.name in self.pods:
            raise ValueError(f"duplicate pod name {spec.name}")
        self.pods[spec.name] = spec

    def remove(self, name: str) -> None:
        self.pods.pop(name, None)


@dataclass(frozen=True)
class ReconcileAction:
    kind: str                    # CREATE | DELETE | MIGRATE | UNSCHEDULABLE
    pod: str
    node: str | None = None      # CREATE target
    from_node: str | None = None
    to_node: str | None = None
    reason: str = ""


class K8sCluster:
    """Observed cluster state plus the deterministic scheduler."""

    def __init__(self, pool: StoragePool | None = None) -> None:
        self.nodes: dict[str, NodeStatus] = {}
        self.pod_specs: dict[str, PodSpec] = {}
        self.pod_locations: dict[str, str] = {}
        self.pool = pool

    # --- membership ------------------------------------------------------------

    def join_node(self, node_id: str, cpus: int, memory: int,
                  device_capacity: int = 0) -> NodeStatus:
        if node_id in self.nodes:
            raise DuplicateNode(node_id)
        node = NodeStatus(node_id=node_id, cpus=cpus, memory=memory)
        self.nodes[node_id] = node
        if self.pool is not None and device_capacity > 0:
            self.pool.add_device(node_id, device_capacity)
        return node

    def fail_node(self, node_id: str) -> NodeStatus:
        node = self.nodes.get(node_id)
        if node is None:
            raise UnknownNode(node_id)
        node.alive = False
        return node

    def restore_node(self, node_id: str) -> NodeStatus:
        node = self.nodes.get(node_id)
        if node is None:
            raise UnknownNode(node_id)
        node.alive = True
        return node

    # --- capacity bookkeeping ------------------------------------------------------

    def reserved(self, node_id: str) -> tuple[int, int]:
        cpus = memory = 0
        for pod in self.nodes[node_id].pods:
            spec = self.pod_specs[pod]
            cpus += spec.cpus
            memory += spec.memory
        return cpus, memory

    def _fits(self, node: NodeStatus, spec: PodSpec,
              scratch: dict[str, tuple[int, int, int]]) -> bool:
        if not node.alive or node.cordoned:
            return False
        used_cpus, used_mem, _ = scratch[node.node_id]
        return used_cpus + spec.cpus <= node.cpus and used_mem + spec.memory <= node.memory

    def _scratch_load(self, ignore_nodes: set[str] = frozenset()) -> dict[str, tuple[int, int, int]]:
        """(cpus, memory, pod count) per node, skipping pods on unusable nodes."""
        load = {n: (0, 0, 0) for n in self.nodes}
        for pod, node_id in self.pod_locations.items():
            node = self.nodes.get(node_id)
            if node is None or not node.alive or node_id in ignore_nodes:
                continue
            spec = self.pod_specs[pod]
            c, m, n = load[node_id]
            load[node_id] = (c + spec.cpus, m + spec.memory, n + 1)
        return load

    def _pick_node(self, spec: PodSpec, scratch: dict[str, tuple[int, int, int]],
                   exclude: set[str] = frozenset()) -> NodeStatus | None:
        candidates = [n for n in self.nodes.values()
                      if n.alive and not n.cordoned and n.node_id not in exclude]
        candidates.sort(key=lambda n: (scratch[n.node_id][2], n.node_id))
        for node in candidates:
            if self._fits(node, spec, scratch):
                return node
        return None

    @staticmethod
    def _charge(scratch: dict[str, tuple[int, int, int]], node_id: str,
                spec: PodSpec, sign: int = 1) -> None:
        c, m, n = scratch[node_id]
        scratch[node_id] = (c + sign * spec.cpus, m + sign * spec.memory, n + sign)

    # --- reconcile -------------------------------------------------------------------

    def reconcile(self, desired: DesiredState) -> list[ReconcileAction]:
        actions: list[ReconcileAction] = []
        failures: list[ReconcileAction] = []
        scratch = self._scratch_load()

        for pod in sorted(self.pod_locations):
            if pod not in desired.pods:
                node_id = self.pod_locations[pod]
                node = self.nodes.get(node_id)
                if node is not None and node.alive:
                    self._charge(scratch, node_id, self.pod_specs[pod], sign=-1)
                actions.append(ReconcileAction(kind=DELETE, pod=pod,
                                               reason="not in desired state"))

        for pod in sorted(self.pod_locations):
            if pod not in desired.pods:
                continue
            node_id = self.pod_locations[pod]
            node = self.nodes.get(node_id)
            if node is not None and node.alive and not node.cordoned:
                continue
            spec = self.pod_specs[pod]
            reason = "node lost" if node is None or not node.alive else "node cordoned"
            target = self._pick_node(spec, scratch, exclude={node_id})
            if target is None:
                failures.append(ReconcileAction(
                    kind=UNSCHEDULABLE, pod=pod, from_node=node_id,
                    reason=f"{reason}; no node fits {spec.cpus} cpus / {spec.memory} MiB"))
                continue
            self._charge(scratch, target.node_id, spec)
            actions.append(ReconcileAction(kind=MIGRATE, pod=pod, from_node=node_id,
                                           to_node=target.node_id, reason=reason))

        for pod in sorted(desired.pods):
            if pod in self.pod_locations:
                continue
            spec = desired.pods[pod]
            target = self._pick_node(spec, scratch)
            if target is None:
                failures.append(ReconcileAction(
                    kind=UNSCHEDULABLE, pod=pod,
                    reason=f"no node fits {spec.cpus} cpus / {spec.memory} MiB"))
                continue
            self._charge(scratch, target.node_id, spec)
            actions.append(ReconcileAction(kind=CREATE, pod=pod, node=target.node_id,
                                           reason="missing from cluster"))

        return actions + failures

    def apply(self, desired: DesiredState, actions: list[ReconcileAction]) -> None:
        for action in actions:
            if action.kind == DELETE:
                node_id = self.pod_locations.pop(action.pod, None)
                self.pod_specs.pop(action.pod, None)
                if node_id is not None and node_id in self.nodes:
                    self.nodes[node_id].pods.discard(action.pod)
            elif action.kind == MIGRATE:
                assert action.to_node is not None
                if action.from_node in self.nodes:
                    self.nodes[action.from_node].pods.discard(action.pod)
                self.nodes[action.to_node].pods.add(action.pod)
                self.pod_locations[action.pod] = action.to_node
            elif action.kind == CREATE:
                assert action.node is not None
                spec = desired.pods[action.pod]
                self.pod_specs[action.pod] = spec
                self.pod_locations[action.pod] = action.node
                self.nodes[action.node].pods.add(action.pod)
            # UNSCHEDULABLE: report only, nothing to apply

    def reconcile_and_apply(self, desired: DesiredState) -> list[ReconcileAction]:
        actions = self.reconcile(desired)
        self.apply(desired, actions)
        return actions

    # --- drain --------------------------------------------------------------------

    def drain_node(self, node_id: str) -> list[ReconcileAction]:
        node = self.nodes.get(node_id)
        if node is None or not node.alive:
            raise UnknownNode(node_id)
        plan: list[ReconcileAction] = []
        scratch = self._scratch_load(ignore_nodes={node_id})
        for pod in sorted(node.pods):
            spec = self.pod_specs[pod]
            target = self._pick_node(spec, scratch, exclude={node_id})
            if target is None:
                raise InsufficientCapacity(
                    f"cannot drain {node_id}: {pod} ({spec.cpus} cpus / "
                    f"{spec.memory} MiB) fits nowhere else")
            self._charge(scratch, target.node_id, spec)
            plan.append(ReconcileAction(kind=MIGRATE, pod=pod, from_node=node_id,
                                        to_node=target.node_id, reason="drain"))
        # full plan fits: commit
        node.cordoned = True
        self.apply(DesiredState(), plan)
        return plan

    # --- invariants -----------------------------------------------------------------

    def check_limits_invariant(self) -> None:
        for node in self.nodes.values():
            cpus, memory = self.reserved(node.node_id)
            assert cpus <= node.cpus and memory <= node.memory, \
                f"{node.node_id}: over-committed ({cpus}/{node.cpus} cpus, " \
                f"{memory}/{node.memory} MiB)"
        for pod, node_id in self.pod_locations.items():
            assert pod in self.nodes[node_id].pods, f"{pod}: location drift"

    def snapshot(self) -> dict:
        """Deep structural copy for bitwise before/after comparisons."""
        return {
            "nodes": {
                n.node_id: {
                    "cpus": n.cpus, "memory": n.memory, "cordoned": n.cordoned,
                    "alive": n.alive, "pods": sorted(n.pods), "next_port": n.next_port,
                }
                for n in self.nodes.values()
            },
            "pod_specs": {name: copy.copy(spec) for name, spec in self.pod_specs.items()},
            "pod_locations": dict(self.pod_locations),
        }


SYSTEM_POD_SPECS = (
    PodSpec(name="hub", cpus=2, memory=4096, disk=0, owner="hub"),
    PodSpec(name="edge-proxy-0", cpus=1, memory=1024, disk=0, owner="edge-proxy"),
    PodSpec(name="edge-proxy-1", cpus=1, memory=1024, disk=0, owner="edge-proxy"),
)


class K8sSpawner:
    """Hub-facing adapter: one pod per session, one block-pool claim per user."""

    kind = "k8s"
    needs_charge_account = False

    def __init__(
        self,
        cluster: K8sCluster,
        pool: StoragePool,
        backends: BackendRegistry,
        listeners: ListenerRegistry,
        event_log: EventLog,
        startup_delay_s: int = 2,
        system_pods: bool = True,
    ) -> None:
        self.cluster = cluster
        self.pool = pool
        self.backends = backends
        self.listeners = listeners
        self.log = event_log
        self.startup_delay_s = max(1, startup_delay_s)
        self.hub: Hub | None = None
        self.desired = DesiredState()
        if system_pods:
            for spec in SYSTEM_POD_SPECS:
                self.desired.add(spec)
        self._pending: list[tuple[str, str, SpawnOptions]] = []
        self._usernames: dict[str, str] = {}
        self._claims: dict[str, str] = {}            # username -> claim_id
        self._backend_addr: dict[str, tuple[str, int]] = {}
        self._milestones: list[tuple[int, str, str]] = []
        self._now = 0

    def attach_hub(self, hub: Hub) -> None:
        self.hub = hub

    def _pod_name(self, session_id: str) -> str:
        return f"pod-{session_id}"

    @staticmethod
    def _session_of(pod: str) -> str | None:
        return pod[len("pod-"):] if pod.startswith("pod-") else None

    # --- SpawnerBackend ---------------------------------------------------------

    def admission_check(self, options: SpawnOptions) -> None:
        max_cpus = max((n.cpus for n in self.cluster.nodes.values()), default=0)
        max_mem = max((n.memory for n in self.cluster.nodes.values()), default=0)
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
        self._now = now
        pending, self._pending = self._pending, []
        for session_id, username, options in pending:
            try:
                if username not in self._claims:
                    claim = self.pool.claim_volume(max(1, options.disk_quota), owner=username)
                    self._claims[username] = claim.claim_id
            except PoolFull as exc:
                self.log.append("spawn_rejected", session=session_id, error=exc.name)
                self.hub.deliver(session_id, SessionEvent(kind="failed", reason=str(exc)))
                continue
            self.desired.add(PodSpec(
                name=self._pod_name(session_id),
                cpus=options.cpus,
                memory=options.memory,
                disk=options.disk_quota,
                claim_id=self._claims[username],
                owner=session_id,
            ))
        actions = self.cluster.reconcile_and_apply(self.desired)
        self._handle_actions(actions, now)
        self._fire_milestones(now)

    def has_live_resources(self, session_id: str) -> bool:
        return self._pod_name(session_id) in self.cluster.pod_locations

    # --- faults and drain -----------------------------------------------------------

    def handle_node_failure(self, node_id: str) -> list[ReconcileAction]:
        assert self.hub is not None
        self.cluster.fail_node(node_id)
        for session_id, addr in list(self._backend_addr.items()):
            if addr[0] == node_id:
                del self._backend_addr[session_id]
        actions = self.cluster.reconcile_and_apply(self.desired)
        self._handle_actions(actions, self._now)
        self.hub.process_pending()
        return actions

    def handle_node_restore(self, node_id: str) -> None:
        self.cluster.restore_node(node_id)
        if self.pool is not None and node_id in self.pool.devices:
            self.pool.restore_device(node_id)

    def drain(self, node_id: str) -> list[ReconcileAction]:
        assert self.hub is not None
        actions = self.cluster.drain_node(node_id)
        self._handle_actions(actions, self._now)
        self.hub.process_pending()
        return actions

    # --- internals ---------------------------------------------------------------------

    def _handle_actions(self, actions: list[ReconcileAction], now: int) -> None:
        assert self.hub is not None
        for action in actions:
            session_id = self._session_of(action.pod)
            if session_id is None:
                continue  # system pod: placement only
            if action.kind == CREATE:
                self.log.append("pod_scheduled", session=session_id,
                                pod=action.pod, node=action.node)
                self.hub.deliver(session_id, SessionEvent(kind="scheduled"))
                self._milestones.append((now + 1, session_id, "starting"))
                self._milestones.append((now + self.startup_delay_s, session_id,
                                         "backend_ready"))
            elif action.kind == MIGRATE:
                self.log.append("pod_migrated", session=session_id,
                                from_node=action.from_node, to_node=action.to_node,
                                reason=action.reason)
                record = self.hub.get_session(session_id)
                if record.state == "RUNNING":
                    self._unregister_backend(session_id)
                    host, port = self._register_backend(session_id)
                    self.hub.relocate_backend(session_id, host, port)
                # sessions still starting pick their new location at the
                # backend_ready milestone
            elif action.kind == UNSCHEDULABLE:
                self.log.append("spawn_rejected", session=session_id,
                                error="Unschedulable", reason=action.reason)
                self.desired.remove(action.pod)
                if action.from_node is not None:
                    # pod existed but cannot be rehomed: drop the placement
                    self.cluster.apply(self.desired, [ReconcileAction(
                        kind=DELETE, pod=action.pod, reason="unschedulable")])
                self._unregister_backend(session_id)
                self.hub.deliver(session_id, SessionEvent(
                    kind="failed", reason=f"unschedulable: {action.reason}"))

    def _register_backend(self, session_id: str) -> tuple[str, int]:
        node_id = self.cluster.pod_locations[self._pod_name(session_id)]
        node = self.cluster.nodes[node_id]
        port = node.next_port
        node.next_port += 1
        username = self._usernames[session_id]
        self.backends.register(SimBackend(
            host=node_id, port=port, session_id=session_id, username=username,
            responder=echo_responder(username)))
        self.listeners.open(node_id, port, owner=f"pod:{self._pod_name(session_id)}")
        self._backend_addr[session_id] = (node_id, port)
        return node_id, port

    def _unregister_backend(self, session_id: str) -> None:
        addr = self._backend_addr.pop(session_id, None)
        if addr is not None:
            self.backends.unregister(*addr)
            self.listeners.close(*addr)

    def _fire_milestones(self, now: int) -> None:
        assert self.hub is not None
        due = sorted(m for m in self._milestones if m[0] <= now)
        self._milestones = [m for m in self._milestones if m[0] > now]
        for _, session_id, kind in due:
            pod = self._pod_name(session_id)
            if pod not in self.cluster.pod_locations:
                continue  # stopped or evicted in the meantime
            if kind == "starting":
                self.hub.deliver(session_id, SessionEvent(kind="starting"))
            else:
                host, port = self._register_backend(session_id)
                self.hub.deliver(session_id, SessionEvent(
                    kind="backend_ready", host=host, port=port))

    def _teardown(self, session_id: str) -> None:
        self._pending = [p for p in self._pending if p[0] != session_id]
        pod = self._pod_name(session_id)
        self._unregister_backend(session_id)
        if pod in self.desired.pods or pod in self.cluster.pod_locations:
            self.desired.remove(pod)
            # flush the DELETE now so archived sessions hold no resources;
            # the user's claim is kept (their data outlives the session)
            actions = self.cluster.reconcile_and_apply(self.desired)
            self._handle_actions(actions, self._now)
