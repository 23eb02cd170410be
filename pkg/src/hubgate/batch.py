"""Batch-scheduler spawner: job-script templating, a priority queue over
whole-node slots, and reverse tunnels from compute nodes back to the hub.

Jobs are single-node and occupy one node slot. The queue drains in
(priority desc, submit_time asc, job_id asc) order. When a job's notebook
comes up it opens a tunnel whose listener lives on the hub host, drawn
lowest-free from the 41000-41999 pool; compute nodes never expose an
inbound port. Walltime is enforced here, relative to submit time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .clock import EventLog, LogicalClock
from .errors import (
    AlreadyTerminal,
    DuplicateNode,
    InvalidOptions,
    JobNotRunning,
    PortPoolExhausted,
    UnknownJob,
    UnknownNode,
    UnknownQueue,
    WalltimeExceedsQueueMax,
)
from .hub import Hub, SessionEvent, SpawnOptions
from .network import BackendRegistry, ListenerRegistry, SimBackend, echo_responder

PORT_POOL_BASE = 41000
PORT_POOL_SIZE = 1000

DIRECTIVE_ORDER = ("account", "queue", "walltime", "cpus", "memory")


@dataclass(frozen=True)
class QueueSpec:
    name: str
    priority: int        # higher schedules first
    max_walltime: int    # minutes


@dataclass(frozen=True)
class JobScript:
    directives: tuple[tuple[str, str], ...]
    exec_line: str

    def text(self) -> str:
        lines = [f"#DIRECTIVE {key}={value}" for key, value in self.directives]
        lines.append(self.exec_line)
        return "\n".join(lines) + "\n"

    def directive(self, key: str) -> str:
        for k, v in self.directives:
            if k == key:
                return v
        raise KeyError(key)


@dataclass
class BatchJob:
    job_id: int
    script: JobScript
    session_id: str | None
    state: str = "QUEUED"  # QUEUED | RUNNING | CANCELED | COMPLETED | NODE_LOST
    submit_time: int = 0
    assigned_node: str | None = None
    priority: int = 0
    walltime_min: int = 0


@dataclass
class BatchNode:
    node_id: str
    slots: int
    cpus: int
    memory: int
    used_slots: int = 0
    alive: bool = True

    @property
    def free_slots(self) -> int:
        return self.slots - self.used_slots if self.alive else 0


@dataclass(frozen=True)
class ReverseTunnel:
    job_id: int
    origin_node: str
    target: tuple[str, int]   # hub side
    forwarded_port: int       # listener port on the hub


class PortPool:
    """Hub-side forwarded ports, lowest-free allocation."""

    def __init__(self, base: int = PORT_POOL_BASE, size: int = PORT_POOL_SIZE) -> None:
        self.base = base
        self.size = size
        self._allocated: set[int] = set()

    def allocate(self) -> int:
        for port in range(self.base, self.base + self.size):
            if port not in self._allocated:
                self._allocated.add(port)
                return port
        raise PortPoolExhausted(f"all {self.size} forwarded ports in use")

    def free(self, port: int) -> None:
        self._allocated.discard(port)

    @property
    def allocated_count(self) -> int:
        return len(self._allocated)

    @property
    def free_count(self) -> int:
        return self.size - len(self._allocated)


def render_job_script(
    options: SpawnOptions,
    account: str,
    callback: tuple[str, int],
    queue: QueueSpec,
) -> JobScript:
    """Deterministic script text: fixed directive order, then the exec line."""
    if not account:
        raise InvalidOptions("charge account must be non-empty")
    if options.duration > queue.max_walltime:
        raise WalltimeExceedsQueueMax(
            f"walltime {options.duration} > queue {queue.name} max {queue.max_walltime}")
    values = {
        "account": account,
        "queue": options.queue,
        "walltime": str(options.duration),
        "cpus": str(options.cpus),
        "memory": str(options.memory),
    }
    directives = tuple((key, values[key]) for key in DIRECTIVE_ORDER)
    exec_line = (
        f"jupyter-container run {options.image} --callback {callback[0]}:{callback[1]}"
    )
    return JobScript(directives=directives, exec_line=exec_line)


class BatchCluster:
    """Simulated remote scheduler: queues, node slots, jobs and tunnels."""

    TERMINAL = frozenset({"CANCELED", "COMPLETED", "NODE_LOST"})

    def __init__(
        self,
        clock: LogicalClock,
        queues: list[QueueSpec],
        listeners: ListenerRegistry,
        hub_endpoint: tuple[str, int],
    ) -> None:
        self.clock = clock
        self.queues = {q.name: q for q in queues}
        self.listeners = listeners
        self.hub_endpoint = hub_endpoint
        self.nodes: dict[str, BatchNode] = {}
        self.jobs: dict[int, BatchJob] = {}
        self.tunnels: dict[int, ReverseTunnel] = {}
        self.ports = PortPool()
        self._next_job_id = 1

    # --- cluster shape -----------------------------------------------------

    def add_node(self, node_id: str, slots: int = 1, cpus: int = 16, memory: int = 65536) -> BatchNode:
        if node_id in self.nodes:
            raise DuplicateNode(node_id)
        node = BatchNode(node_id=node_id, slots=slots, cpus=cpus, memory=memory)
        self.nodes[node_id] = node
        return node

    def max_node_shape(self) -> tuple[int, int]:
        if not self.nodes:
            return (0, 0)
        return (max(n.cpus for n in self.nodes.values()),
                max(n.memory for n in self.nodes.values()))

    # --- job lifecycle ------------------------------------------------------

    def render_job_script(self, options: SpawnOptions, account: str) -> JobScript:
        queue = self.queues.get(options.queue)
        if queue is None:
            raise UnknownQueue(options.queue)
        return render_job_script(options, account, self.hub_endpoint, queue)

    def submit(self, script: JobScript, session_id: str | None = None) -> int:
        queue = self.queues.get(script.directive("queue"))
        if queue is None:
            raise UnknownQueue(script.directive("queue"))
        job = BatchJob(
            job_id=self._next_job_id,
            script=script,
            session_id=session_id,
            submit_time=self.clock.now,
            priority=queue.priority,
            walltime_min=int(script.directive("walltime")),
        )
        self._next_job_id += 1
        self.jobs[job.job_id] = job
        return job.job_id

    def scheduler_step(self) -> list[tuple[int, str]]:
        """Assign queued jobs to free node slots; returns (job_id, node) pairs."""
        assignments: list[tuple[int, str]] = []
        while True:
            node = self._first_free_node()
            if node is None:
                break
            job = self._next_queued_job()
            if job is None:
                break
            job.state = "RUNNING"
            job.assigned_node = node.node_id
            node.used_slots += 1
            assignments.append((job.job_id, node.node_id))
        return assignments

    def _first_free_node(self) -> BatchNode | None:
        for node_id in sorted(self.nodes):
            if self.nodes[node_id].free_slots > 0:
                return self.nodes[node_id]
        return None

    def _next_queued_job(self) -> BatchJob | None:
        queued = [j for j in self.jobs.values() if j.state == "QUEUED"]
        if not queued:
            return None
        queued.sort(key=lambda j: (-j.priority, j.submit_time, j.job_id))
        return queued[0]

    def establish_tunnel(self, job_id: int) -> ReverseTunnel:
        job = self.jobs.get(job_id)
        if job is None:
            raise UnknownJob(str(job_id))
        if job.state != "RUNNING" or job.assigned_node is None:
            raise JobNotRunning(f"job {job_id} is {job.state}")
        port = self.ports.allocate()
        tunnel = ReverseTunnel(
            job_id=job_id,
            origin_node=job.assigned_node,
            target=self.hub_endpoint,
            forwarded_port=port,
        )
        self.tunnels[job_id] = tunnel
        # The only listener is hub-side; the compute node dials out.
        self.listeners.open(self.hub_endpoint[0], port, owner=f"tunnel:job{job_id}")
        return tunnel

    def teardown_tunnel(self, job_id: int) -> None:
        tunnel = self.tunnels.pop(job_id, None)
        if tunnel is not None:
            self.listeners.close(self.hub_endpoint[0], tunnel.forwarded_port)
            self.ports.free(tunnel.forwarded_port)

    def cancel(self, job_id: int) -> BatchJob:
        job = self.jobs.get(job_id)
        if job is None:
            raise UnknownJob(str(job_id))
        if job.state in self.TERMINAL:
            raise AlreadyTerminal(f"job {job_id} is {job.state}")
        self._release_slot(job)
        job.state = "CANCELED"
        self.teardown_tunnel(job_id)
        return job

    def complete(self, job_id: int) -> BatchJob:
        job = self.jobs[job_id]
        self._release_slot(job)
        job.state = "COMPLETED"
        self.teardown_tunnel(job_id)
        return job

    def node_lost(self, node_id: str) -> list[BatchJob]:
        node = self.nodes.get(node_id)
        if node is None:
            raise UnknownNode(node_id)
        node.alive = False
        lost = [j for j in self.jobs.values()
                if j.state == "RUNNING" and j.assigned_node == node_id]
        for job in sorted(lost, key=lambda j: j.job_id):
            job.state = "NODE_LOST"
            self.teardown_tunnel(job.job_id)
        node.used_slots = 0
        return lost

    def node_restored(self, node_id: str) -> None:
        node = self.nodes.get(node_id)
        if node is None:
            raise UnknownNode(node_id)
        node.alive = True
        node.used_slots = 0

    def expired_jobs(self) -> list[BatchJob]:
        now = self.clock.now
        out = [j for j in self.jobs.values()
               if j.state == "RUNNING" and now >= j.submit_time + j.walltime_min * 60]
        return sorted(out, key=lambda j: j.job_id)

    def _release_slot(self, job: BatchJob) -> None:
        if job.state == "RUNNING" and job.assigned_node is not None:
            node = self.nodes[job.assigned_node]
            node.used_slots = max(0, node.used_slots - 1)


class BatchSpawner:
    """Hub-facing adapter around BatchCluster with startup milestones."""

    kind = "batch"
    needs_charge_account = True

    def __init__(
        self,
        cluster: BatchCluster,
        backends: BackendRegistry,
        event_log: EventLog,
        startup_delay_s: int = 2,
    ) -> None:
        self.cluster = cluster
        self.backends = backends
        self.log = event_log
        self.startup_delay_s = max(1, startup_delay_s)
        self.hub: Hub | None = None
        self._job_by_session: dict[str, int] = {}
        self._session_by_job: dict[int, str] = {}
        self._usernames: dict[str, str] = {}
        self._milestones: list[tuple[int, str, str]] = []  # (due, session, kind)

    def attach_hub(self, hub: Hub) -> None:
        self.hub = hub

    # --- SpawnerBackend ----------------------------------------------------

    def admission_check(self, options: SpawnOptions) -> None:
        queue = self.cluster.queues.get(options.queue)
        if queue is None:
            raise UnknownQueue(options.queue)
        if options.duration > queue.max_walltime:
            raise WalltimeExceedsQueueMax(
                f"walltime {options.duration} > queue {queue.name} max {queue.max_walltime}")
        max_cpus, max_mem = self.cluster.max_node_shape()
        if options.cpus > max_cpus or options.memory > max_mem:
            raise InvalidOptions(
                f"request ({options.cpus} cpus, {options.memory} MiB) exceeds the "
                f"largest node ({max_cpus} cpus, {max_mem} MiB)")

    def spawn(self, session_id: str, username: str, options: SpawnOptions,
              account: str | None) -> None:
        assert account, "batch spawner requires a charge account"
        script = self.cluster.render_job_script(options, account)
        job_id = self.cluster.submit(script, session_id=session_id)
        self._job_by_session[session_id] = job_id
        self._session_by_job[job_id] = session_id
        self._usernames[session_id] = username
        self.log.append("job_submitted", job=job_id, session=session_id,
                        queue=options.queue)

    def stop(self, session_id: str) -> None:
        job_id = self._job_by_session.get(session_id)
        if job_id is None:
            return
        job = self.cluster.jobs[job_id]
        if job.state not in BatchCluster.TERMINAL:
            self._teardown_backend(job_id)
            self.cluster.cancel(job_id)
            self.log.append("job_canceled", job=job_id, session=session_id)
        assert self.hub is not None
        self.hub.deliver(session_id, SessionEvent(kind="stopped"))

    def release(self, session_id: str) -> None:
        job_id = self._job_by_session.get(session_id)
        if job_id is None:
            return
        job = self.cluster.jobs[job_id]
        if job.state not in BatchCluster.TERMINAL:
            self._teardown_backend(job_id)
            self.cluster.cancel(job_id)
            self.log.append("job_canceled", job=job_id, session=session_id)

    def on_tick(self, now: int) -> None:
        assert self.hub is not None
        for job_id, node_id in self.cluster.scheduler_step():
            session_id = self._session_by_job.get(job_id)
            self.log.append("job_assigned", job=job_id, node=node_id)
            if session_id is not None:
                self.hub.deliver(session_id, SessionEvent(kind="scheduled"))
                self._milestones.append((now + 1, session_id, "starting"))
                self._milestones.append((now + self.startup_delay_s, session_id, "backend_ready"))
        self._fire_milestones(now)
        for job in self.cluster.expired_jobs():
            session_id = self._session_by_job.get(job.job_id)
            self._teardown_backend(job.job_id)
            self.cluster.complete(job.job_id)
            self.log.append("job_walltime_reached", job=job.job_id)
            if session_id is not None:
                self.hub.deliver(session_id, SessionEvent(kind="stopped", reason="walltime reached"))

    def has_live_resources(self, session_id: str) -> bool:
        job_id = self._job_by_session.get(session_id)
        if job_id is None:
            return False
        job = self.cluster.jobs[job_id]
        return job.state in ("QUEUED", "RUNNING") or job_id in self.cluster.tunnels

    # --- node faults ----------------------------------------------------------

    def handle_node_failure(self, node_id: str) -> None:
        assert self.hub is not None
        doomed = [j for j in self.cluster.jobs.values()
                  if j.state == "RUNNING" and j.assigned_node == node_id]
        for job in sorted(doomed, key=lambda j: j.job_id):
            self._teardown_backend(job.job_id, tunnel_closed=True)
        for job in self.cluster.node_lost(node_id):
            session_id = self._session_by_job.get(job.job_id)
            self.log.append("job_node_lost", job=job.job_id, node=node_id)
            if session_id is not None:
                self.hub.deliver(session_id, SessionEvent(kind="failed", reason="node lost"))

    def handle_node_restore(self, node_id: str) -> None:
        self.cluster.node_restored(node_id)

    # --- internals ----------------------------------------------------------------

    def _fire_milestones(self, now: int) -> None:
        assert self.hub is not None
        due = sorted(m for m in self._milestones if m[0] <= now)
        self._milestones = [m for m in self._milestones if m[0] > now]
        for _, session_id, kind in due:
            job_id = self._job_by_session.get(session_id)
            if job_id is None or self.cluster.jobs[job_id].state != "RUNNING":
                continue  # canceled or lost between scheduling and startup
            if kind == "starting":
                self.hub.deliver(session_id, SessionEvent(kind="starting"))
            elif kind == "backend_ready":
                tunnel = self.cluster.establish_tunnel(job_id)
                username = self._usernames[session_id]
                self.backends.register(SimBackend(
                    host=tunnel.target[0],
                    port=tunnel.forwarded_port,
                    session_id=session_id,
                    username=username,
                    responder=echo_responder(username),
                    channel="encrypted-tunnel",
                ))
                self.log.append("tunnel_open", job=job_id, origin=tunnel.origin_node,
                                port=tunnel.forwarded_port)
                self.hub.deliver(session_id, SessionEvent(
                    kind="backend_ready", host=tunnel.target[0], port=tunnel.forwarded_port))

    def _teardown_backend(self, job_id: int, tunnel_closed: bool = False) -> None:
        tunnel = self.cluster.tunnels.get(job_id)
        if tunnel is not None:
            self.backends.unregister(tunnel.target[0], tunnel.forwarded_port)
            if not tunnel_closed:
                self.log.append("tunnel_closed", job=job_id, port=tunnel.forwarded_port)
