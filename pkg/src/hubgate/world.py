"""Composition root: one simulated deployment wired end to end.

A World owns the logical clock, event log, auth, routing, the configured
spawner with its cluster substrate, and (per deployment flavor) the user
volume export or the replicated block pool. All mutation is driven by
explicit calls plus `tick()`; nothing reads wall time, so a fixed
(config, seed, call sequence) replays to a byte-identical event log.

Fault injection fans out to every component holding state for the target
(backend registry, listener registry, spawner cluster, block pool);
`fault_subscribers()` names them so tests can assert the fan-out is
complete.
"""

from __future__ import annotations

import random
import tempfile
from pathlib import Path

from .auth import Authenticator, ChargeAccountPolicy, TokenStore
from .batch import BatchCluster, BatchSpawner, QueueSpec
from .clock import EventLog, LogicalClock
from .config import HubConfig
from .errors import (
    HubgateError,
    MasterLost,
    UnknownSession,
    UnknownTarget,
    UnsupportedForSpawner,
)
from .hub import Hub, SessionRecord, TERMINAL_STATES
from .network import BackendRegistry, ListenerRegistry, SimRequest, SimResponse
from .orchestrator import K8sCluster, K8sSpawner, PodSpec, ReconcileAction
from .proxy import EdgeProxy, RoutingTable
from .storage import MemoryBlockStore, StoragePool
from .swarm import SwarmCluster, SwarmSpawner
from .volumes import QuotaPolicy, VolumeManager

HUB_HOST = "hub"
HUB_PORT = 8081


class World:
    def __init__(self, config: HubConfig, seed: int = 0,
                 workdir: str | Path | None = None) -> None:
        config.validate()
        self.config = config
        self.seed = seed
        self.rng = random.Random(seed)
        self.clock = LogicalClock()
        self.log = EventLog(self.clock)
        self.backends = BackendRegistry()
        self.listeners = ListenerRegistry()
        self.routes = RoutingTable(hub_backend=(HUB_HOST, HUB_PORT))

        if workdir is None:
            workdir = tempfile.mkdtemp(prefix="hubgate-world-")
        self.workdir = Path(workdir)

        allow_any = config.auth_mode == "open"
        self.authenticator = Authenticator(
            static_users=dict(config.static_users),
            oauth_codes=dict(config.oauth_codes),
            charge_identities=dict(config.charge_identities),
            allow_any=allow_any,
        )
        self.tokens = TokenStore(self.clock, self.rng, ttl=config.token_ttl_s)
        self.charge_policy = ChargeAccountPolicy(
            mode=config.charge_mode,
            community_account=config.community_account,
        )

        policy = QuotaPolicy(per_user_quota=config.per_user_quota,
                             export_total=config.export_total)
        export_root = config.export_root or str(self.workdir / "export")

        self.volumes: VolumeManager | None = None
        self.pool: StoragePool | None = None
        self.batch_cluster: BatchCluster | None = None
        self.swarm_cluster: SwarmCluster | None = None
        self.k8s_cluster: K8sCluster | None = None

        if config.spawner_kind == "batch":
            queues = [QueueSpec(name=q["name"], priority=q["priority"],
                                max_walltime=q["max_walltime"])
                      for q in config.queues]
            self.batch_cluster = BatchCluster(
                clock=self.clock, queues=queues, listeners=self.listeners,
                hub_endpoint=(HUB_HOST, HUB_PORT))
            self.spawner = BatchSpawner(
                cluster=self.batch_cluster, backends=self.backends,
                event_log=self.log, startup_delay_s=config.startup_delay_s)
            self.volumes = VolumeManager(export_root, policy)
        elif config.spawner_kind == "swarm":
            self.swarm_cluster = SwarmCluster()
            self.volumes = VolumeManager(export_root, policy)
            self.spawner = SwarmSpawner(
                cluster=self.swarm_cluster, volumes=self.volumes,
                backends=self.backends, listeners=self.listeners,
                event_log=self.log, startup_delay_s=config.startup_delay_s)
        else:  # k8s
            self.pool = StoragePool(store=MemoryBlockStore(), k=config.replication_k)
            self.k8s_cluster = K8sCluster(pool=self.pool)
            self.spawner = K8sSpawner(
                cluster=self.k8s_cluster, pool=self.pool, backends=self.backends,
                listeners=self.listeners, event_log=self.log,
                startup_delay_s=config.startup_delay_s)

        self.hub = Hub(
            clock=self.clock,
            event_log=self.log,
            authenticator=self.authenticator,
            tokens=self.tokens,
            routes=self.routes,
            spawner=self.spawner,
            charge_policy=self.charge_policy,
            readiness_timeout_s=config.readiness_timeout_s,
            admin_users=set(config.admin_users),
        )
        self.spawner.attach_hub(self.hub)
        self.edge = EdgeProxy(self.routes, self.backends,
                              on_backend_down=self.hub.backend_down)

    # --- time ---------------------------------------------------------------------

    @property
    def now(self) -> int:
        return self.clock.now

    def tick(self, seconds: int = 1) -> None:
        for _ in range(seconds):
            self.clock.advance(1)
            self.spawner.on_tick(self.clock.now)
            self.hub.process_pending()
            self.hub.check_timeouts()

    def run_until(self, predicate, max_ticks: int = 600) -> bool:
        for _ in range(max_ticks):
            if predicate():
                return True
            self.tick(1)
        return predicate()

    def settle_session(self, session_id: str, max_ticks: int | None = None) -> SessionRecord:
        """Tick until the session is RUNNING or terminal."""
        budget = max_ticks if max_ticks is not None else self.config.readiness_timeout_s + 2

        def done() -> bool:
            state = self.hub.get_session(session_id).state
            return state == "RUNNING" or state in TERMINAL_STATES

        self.run_until(done, max_ticks=budget)
        return self.hub.get_session(session_id)

    # --- membership ------------------------------------------------------------------

    def join_node(self, node_id: str, cpus: int = 16, memory: int = 65536,
                  slots: int = 4, master: bool = False,
                  device_capacity: int = 1000) -> dict:
        if self.batch_cluster is not None:
            node = self.batch_cluster.add_node(node_id, slots=slots, cpus=cpus,
                                               memory=memory)
            info = {"node_id": node.node_id, "kind": "batch", "slots": node.slots,
                    "cpus": node.cpus, "memory": node.memory}
        elif self.swarm_cluster is not None:
            current_master = self.swarm_cluster.master
            master_addr = None if master or current_master is None \
                else current_master.node_id
            node = self.swarm_cluster.join_node(node_id, cpus=cpus, memory=memory,
                                                master_addr=master_addr)
            info = {"node_id": node.node_id, "kind": "swarm",
                    "is_master": node.is_master, "cpus": node.cpus,
                    "memory": node.memory}
        else:
            assert self.k8s_cluster is not None
            node = self.k8s_cluster.join_node(node_id, cpus=cpus, memory=memory,
                                              device_capacity=device_capacity)
            info = {"node_id": node.node_id, "kind": "k8s", "cpus": node.cpus,
                    "memory": node.memory, "device_capacity": device_capacity}
        self.log.append("node_joined", node=node_id)
        return info

    def node_ids(self) -> list[str]:
        for cluster in (self.batch_cluster, self.swarm_cluster, self.k8s_cluster):
            if cluster is not None:
                return sorted(cluster.nodes)
        return []

    def list_nodes(self) -> list[dict]:
        out = []
        if self.batch_cluster is not None:
            for node_id in sorted(self.batch_cluster.nodes):
                n = self.batch_cluster.nodes[node_id]
                out.append({"node_id": node_id, "alive": n.alive, "slots": n.slots,
                            "used_slots": n.used_slots, "cpus": n.cpus,
                            "memory": n.memory})
        elif self.swarm_cluster is not None:
            for node_id in sorted(self.swarm_cluster.nodes):
                n = self.swarm_cluster.nodes[node_id]
                out.append({"node_id": node_id, "alive": n.alive,
                            "is_master": n.is_master,
                            "containers": self.swarm_cluster.running_count(node_id),
                            "reserved_cpus": n.reserved_cpus,
                            "reserved_memory": n.reserved_memory,
                            "cpus": n.cpus, "memory": n.memory})
        elif self.k8s_cluster is not None:
            for node_id in sorted(self.k8s_cluster.nodes):
                n = self.k8s_cluster.nodes[node_id]
                out.append({"node_id": node_id, "alive": n.alive,
                            "cordoned": n.cordoned, "pods": sorted(n.pods),
                            "cpus": n.cpus, "memory": n.memory})
        return out

    # --- fault injection -------------------------------------------------------------

    def fault_subscribers(self, node_id: str) -> list[str]:
        """Components holding state keyed by this node (fan-out contract)."""
        subs = []
        if any(addr[0] == node_id for addr in self.backends.addresses()):
            subs.append("backends")
        if self.listeners.on_host(node_id):
            subs.append("listeners")
        if self.batch_cluster is not None and node_id in self.batch_cluster.nodes:
            subs.append("spawner:batch")
        if self.swarm_cluster is not None and node_id in self.swarm_cluster.nodes:
            subs.append("spawner:swarm")
        if self.k8s_cluster is not None and node_id in self.k8s_cluster.nodes:
            subs.append("spawner:k8s")
        if self.pool is not None and node_id in self.pool.devices:
            subs.append("storage-pool")
        return subs

    def kill_node(self, node_id: str) -> list[str]:
        """Fail a node everywhere it is known; returns the notified components."""
        notified = self.fault_subscribers(node_id)
        if not any(s.startswith("spawner:") for s in notified):
            raise UnknownTarget(f"node {node_id}")
        self.log.append("node_killed", node=node_id)
        self.backends.drop_node(node_id)
        self.listeners.close_node(node_id)
        master_lost: MasterLost | None = None
        try:
            self.spawner.handle_node_failure(node_id)
        except MasterLost as exc:
            master_lost = exc
        if self.pool is not None and node_id in self.pool.devices:
            report = self.pool.handle_device_loss(node_id)
            self.log.append("device_lost", node=node_id,
                            moved_blocks=report.moved_blocks, health=report.health)
        self.hub.process_pending()
        if master_lost is not None:
            raise master_lost
        return notified

    def restore_node(self, node_id: str) -> None:
        known = self.fault_subscribers(node_id)
        if not any(s.startswith("spawner:") for s in known):
            raise UnknownTarget(f"node {node_id}")
        self.log.append("node_restored", node=node_id)
        self.spawner.handle_node_restore(node_id)
        if self.pool is not None and node_id in self.pool.devices:
            self.pool.restore_device(node_id)
        self.hub.process_pending()

    def drop_backend(self, session_id: str) -> None:
        try:
            record = self.hub.get_session(session_id)
        except UnknownSession:
            raise UnknownTarget(f"no session {session_id}") from None
        if record.backend is None:
            raise UnknownTarget(f"session {session_id} has no backend")
        self.log.append("backend_dropped", session=session_id)
        self.backends.mark_down(*record.backend)

    # --- traffic ---------------------------------------------------------------------

    def forward(self, method: str, path: str,
                headers: dict[str, str] | None = None) -> SimResponse:
        request = SimRequest(method=method, path=path, headers=headers or {})
        try:
            result = self.edge.forward(request)
        except HubgateError as exc:
            self.hub.process_pending()
            return SimResponse(status=exc.http_status,
                               body=f"{exc.name}: {exc}".encode())
        return result.response

    # --- user data --------------------------------------------------------------------

    def write_data(self, username: str, filename: str, mib: int = 1,
                   content: bytes | None = None) -> dict:
        if self.volumes is None:
            raise UnsupportedForSpawner(
                "k8s deployments persist user data in block-pool claims")
        if content is None:
            content = f"data:{username}:{filename}:{self.now}".encode()
        self.volumes.ensure_user_volume(username)
        self.volumes.write_file(username, filename, content, charge_mib=mib)
        volume = self.volumes.get_volume(username)
        self.log.append("data_written", user=username, file=filename, mib=mib)
        return {"username": username, "file": filename,
                "used": volume.used, "quota": volume.quota}

    def read_data(self, username: str, filename: str) -> bytes:
        if self.volumes is None:
            raise UnsupportedForSpawner(
                "k8s deployments persist user data in block-pool claims")
        return self.volumes.read_file(username, filename)

    def quota_report(self) -> list[dict]:
        if self.volumes is None:
            return []
        return self.volumes.quota_report()

    # --- orchestration passthrough ---------------------------------------------------

    def drain(self, node_id: str) -> list[ReconcileAction]:
        if not isinstance(self.spawner, K8sSpawner):
            raise UnsupportedForSpawner(
                f"drain requires the k8s orchestrator, not {self.spawner.kind}")
        actions = self.spawner.drain(node_id)
        self.log.append("node_drained", node=node_id,
                        migrated=len([a for a in actions if a.kind == "MIGRATE"]))
        return actions

    def apply_manifest(self, manifest: dict) -> list[ReconcileAction]:
        if not isinstance(self.spawner, K8sSpawner):
            raise UnsupportedForSpawner(
                f"apply requires the k8s orchestrator, not {self.spawner.kind}")
        pods = manifest.get("pods")
        if not isinstance(pods, list):
            raise ValueError("manifest must contain a 'pods' list")
        desired = self.spawner.desired
        for entry in pods:
            spec = PodSpec(
                name=entry["name"],
                cpus=entry.get("cpus", 1),
                memory=entry.get("memory", 1024),
                disk=entry.get("disk", 0),
                owner=entry.get("owner", "hub"),
            )
            if spec.name.startswith("pod-"):
                raise ValueError("pod names starting with 'pod-' are reserved "
                                 "for sessions")
            if not spec.is_system:
                raise ValueError("manifest pods must be system-owned "
                                 "(owner hub or edge-proxy)")
            if spec.name in desired.pods:
                desired.remove(spec.name)
            desired.add(spec)
        assert self.k8s_cluster is not None
        actions = self.k8s_cluster.reconcile_and_apply(desired)
        self.log.append("manifest_applied", pods=sorted(e["name"] for e in pods),
                        actions=len(actions))
        return actions

    # --- consistency ------------------------------------------------------------------

    def check_invariants(self) -> None:
        self.hub.check_invariants()
        if self.swarm_cluster is not None:
            self.swarm_cluster.check_capacity_invariant()
        if self.k8s_cluster is not None:
            self.k8s_cluster.check_limits_invariant()
        if self.pool is not None:
            self.pool.check_accounting()


def build_world(config: HubConfig, seed: int = 0,
                workdir: str | Path | None = None) -> World:
    return World(config, seed=seed, workdir=workdir)
