"""Hub core: authentication entry points, the session state machine, and
the serialized event loop that spawner backends feed.

Session states move along
PENDING -> SCHEDULED -> STARTING -> READY -> RUNNING -> STOPPING -> STOPPED
with FAILED reachable from any non-terminal state. READY is transient: the
hub binds the proxy route in the same event-processing step that records
the backend, so observers see RUNNING. Exactly one non-terminal session per
user; terminal sessions are archived immutably (a stop on one reports
UnknownSession) and the next session gets a fresh id.

All mutations funnel through one ordered event queue; spawners never touch
SessionRecords directly.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Protocol

from .auth import Authenticator, AuthToken, ChargeAccountPolicy, TokenStore, select_charge_account
from .clock import EventLog, LogicalClock
from .errors import (
    AlreadyRunning,
    Forbidden,
    IllegalTransition,
    InvalidOptions,
    UnknownSession,
)
from .proxy import RoutingTable

DEFAULT_READINESS_TIMEOUT_S = 300

PENDING = "PENDING"
SCHEDULED = "SCHEDULED"
STARTING = "STARTING"
READY = "READY"
RUNNING = "RUNNING"
STOPPING = "STOPPING"
STOPPED = "STOPPED"
FAILED = "FAILED"

TERMINAL_STATES = frozenset({STOPPED, FAILED})
NON_TERMINAL_STATES = frozenset({PENDING, SCHEDULED, STARTING, READY, RUNNING, STOPPING})
PRE_READY_STATES = frozenset({PENDING, SCHEDULED, STARTING, READY})


@dataclass
class SpawnOptions:
    duration: int = 120        # minutes
    queue: str = "interactive"
    cpus: int = 1
    memory: int = 2048         # MiB
    disk_quota: int = 1024     # MiB
    image: str = "datascience"

    def validate(self) -> None:
        if self.duration <= 0:
            raise InvalidOptions("duration must be > 0 minutes")
        if self.cpus < 1:
            raise InvalidOptions("cpus must be >= 1")
        if self.memory < 64:
            raise InvalidOptions("memory must be >= 64 MiB")
        if self.disk_quota < 1:
            raise InvalidOptions("disk_quota must be >= 1 MiB")
        if not self.image:
            raise InvalidOptions("image must be non-empty")
        if not self.queue:
            raise InvalidOptions("queue must be non-empty")


@dataclass
class SessionRecord:
    session_id: str
    username: str
    spawner_kind: str
    state: str = PENDING
    backend: tuple[str, int] | None = None
    created_at: int = 0
    last_transition: int = 0
    failure_reason: str | None = None
    options: SpawnOptions = field(default_factory=SpawnOptions)

    def copy(self) -> "SessionRecord":
        return replace(self, options=replace(self.options))


@dataclass(frozen=True)
class SessionEvent:
    """Spawner-originated lifecycle event."""

    kind: str  # scheduled | starting | backend_ready | stopped | failed | timed_out
    host: str | None = None
    port: int | None = None
    reason: str | None = None


class SpawnerBackend(Protocol):
    kind: str
    needs_charge_account: bool

    def admission_check(self, options: SpawnOptions) -> None: ...

    def spawn(self, session_id: str, username: str, options: SpawnOptions,
              account: str | None) -> None: ...

    def stop(self, session_id: str) -> None: ...

    def release(self, session_id: str) -> None: ...

    def on_tick(self, now: int) -> None: ...

    def has_live_resources(self, session_id: str) -> bool: ...


# event kind -> states it may legally fire from
_LEGAL_SOURCES = {
    "scheduled": {PENDING},
    "starting": {SCHEDULED},
    "backend_ready": {STARTING},
    "stopped": {RUNNING, STOPPING},
    "failed": set(NON_TERMINAL_STATES),
    "timed_out": set(PRE_READY_STATES),
}


class Hub:
    def __init__(
        self,
        clock: LogicalClock,
        event_log: EventLog,
        authenticator: Authenticator,
        tokens: TokenStore,
        routes: RoutingTable,
        spawner: SpawnerBackend,
        charge_policy: ChargeAccountPolicy,
        readiness_timeout_s: int = DEFAULT_READINESS_TIMEOUT_S,
        admin_users: set[str] | None = None,
    ) -> None:
        self.clock = clock
        self.log = event_log
        self.authenticator = authenticator
        self.tokens = tokens
        self.routes = routes
        self.spawner = spawner
        self.charge_policy = charge_policy
        self.readiness_timeout_s = readiness_timeout_s
        self.admin_users = set(admin_users or ())
        self._sessions: dict[str, SessionRecord] = {}
        self._archive: dict[str, SessionRecord] = {}
        self._by_user: dict[str, str] = {}  # username -> live session_id
        self._queue: deque[tuple[str, SessionEvent]] = deque()
        self._next_session = 1

    # --- authentication -----------------------------------------------------

    def login(self, username: str, secret: str) -> AuthToken:
        account = self.authenticator.check_password(username, secret)
        token = self.tokens.issue(account.username)
        self.log.append("login", user=account.username, source=account.auth_source)
        return token

    def oauth_callback(self, code: str) -> AuthToken:
        account = self.authenticator.check_oauth_code(code)
        token = self.tokens.issue(account.username)
        self.log.append("login", user=account.username, source=account.auth_source)
        return token

    def verify(self, token: str) -> str:
        return self.tokens.verify(token)

    def is_admin(self, username: str) -> bool:
        return username in self.admin_users

    # --- session lifecycle ----------------------------------------------------

    def start_session(self, token: str, options: SpawnOptions) -> SessionRecord:
        username = self.verify(token)
        if username in self._by_user:
            live = self._sessions[self._by_user[username]]
            raise AlreadyRunning(f"{username} already has session {live.session_id} ({live.state})")
        options.validate()
        self.spawner.admission_check(options)
        account = None
        if self.spawner.needs_charge_account:
            user = self.authenticator.get_user(username)
            assert user is not None  # verified token implies an account
            account = select_charge_account(self.charge_policy, user)
        session_id = f"s{self._next_session}"
        self._next_session += 1
        record = SessionRecord(
            session_id=session_id,
            username=username,
            spawner_kind=self.spawner.kind,
            state=PENDING,
            created_at=self.clock.now,
            last_transition=self.clock.now,
            options=options,
        )
        self._sessions[session_id] = record
        self._by_user[username] = session_id
        self.log.append("session_created", session=session_id, user=username,
                        spawner=self.spawner.kind)
        self.spawner.spawn(session_id, username, options, account)
        return record.copy()

    def stop_session(self, token: str, session_id: str) -> SessionRecord:
        username = self.verify(token)
        record = self._sessions.get(session_id)
        if record is None:
            raise UnknownSession(session_id)
        if record.username != username and not self.is_admin(username):
            raise Forbidden(f"{username} does not own {session_id}")
        if record.state != STOPPING:
            self._transition(record, STOPPING, reason="stop requested")
            self.spawner.stop(session_id)
        return record.copy()

    def advance_session(self, session_id: str, event: SessionEvent) -> SessionRecord:
        """Apply one spawner event to a live session; strict on legality."""
        record = self._sessions.get(session_id)
        if record is None:
            raise UnknownSession(session_id)
        legal = _LEGAL_SOURCES.get(event.kind)
        if legal is None:
            raise IllegalTransition(f"unknown event kind {event.kind!r}")
        if record.state not in legal:
            raise IllegalTransition(
                f"{event.kind} not legal from {record.state} (session {session_id})")

        if event.kind == "scheduled":
            self._transition(record, SCHEDULED)
        elif event.kind == "starting":
            self._transition(record, STARTING)
        elif event.kind == "backend_ready":
            assert event.host is not None and event.port is not None
            record.backend = (event.host, event.port)
            self._transition(record, READY)
            self._bind_route(record)
            self._transition(record, RUNNING)
        elif event.kind == "stopped":
            if record.state == RUNNING:
                self._transition(record, STOPPING, reason=event.reason)
            self._unbind_route(record)
            self._transition(record, STOPPED, reason=event.reason)
            self.spawner.release(session_id)
            self._archive_session(record)
        elif event.kind in ("failed", "timed_out"):
            reason = event.reason or ("TimedOut" if event.kind == "timed_out" else "failed")
            record.failure_reason = reason
            self._unbind_route(record)
            self._transition(record, FAILED, reason=reason)
            self.spawner.release(session_id)
            self._archive_session(record)
        return record.copy()

    # --- event queue -------------------------------------------------------------

    def deliver(self, session_id: str, event: SessionEvent) -> None:
        self._queue.append((session_id, event))

    def process_pending(self) -> None:
        while self._queue:
            session_id, event = self._queue.popleft()
            try:
                self.advance_session(session_id, event)
            except (UnknownSession, IllegalTransition) as exc:
                # Late event for a session that already reached a terminal
                # state (e.g. BackendReady racing a timeout). Dropped, logged.
                self.log.append("stale_event", session=session_id, kind=event.kind,
                                error=exc.name)

    def check_timeouts(self) -> None:
        now = self.clock.now
        for record in list(self._sessions.values()):
            if record.state in PRE_READY_STATES and now - record.created_at >= self.readiness_timeout_s:
                self.deliver(record.session_id, SessionEvent(kind="timed_out", reason="TimedOut"))
        self.process_pending()

    # --- backend moves / failures (proxy + failover integration) -------------------

    def relocate_backend(self, session_id: str, host: str, port: int) -> None:
        """Point a RUNNING session's route at a rescheduled backend."""
        record = self._sessions.get(session_id)
        if record is None:
            raise UnknownSession(session_id)
        if record.state != RUNNING:
            raise IllegalTransition(f"cannot relocate backend of {record.state} session")
        self._unbind_route(record)
        record.backend = (host, port)
        record.last_transition = self.clock.now
        self._bind_route(record)
        self.log.append("backend_moved", session=session_id, host=host, port=port)

    def backend_down(self, session_id: str) -> None:
        """Proxy saw an unreachable backend; policy here is to fail the session."""
        self.log.append("backend_down", session=session_id)
        self.deliver(session_id, SessionEvent(kind="failed", reason="backend unreachable"))
        self.process_pending()

    # --- queries ----------------------------------------------------------------

    def get_session(self, session_id: str) -> SessionRecord:
        record = self._sessions.get(session_id) or self._archive.get(session_id)
        if record is None:
            raise UnknownSession(session_id)
        return record.copy()

    def list_sessions(self) -> list[SessionRecord]:
        ordered = list(self._sessions.values()) + list(self._archive.values())
        ordered.sort(key=lambda r: int(r.session_id[1:]))
        return [r.copy() for r in ordered]

    def live_session_for(self, username: str) -> SessionRecord | None:
        session_id = self._by_user.get(username)
        return self._sessions[session_id].copy() if session_id else None

    def check_invariants(self) -> None:
        """Route bookkeeping and one-session-per-user, asserted at quiescence."""
        running = {r.session_id: r for r in self._sessions.values() if r.state == RUNNING}
        routed = {r.session_id for r in self.routes.routes()}
        assert routed == set(running), f"routes {routed} != running {running.keys()}"
        users = [r.username for r in self._sessions.values()]
        assert len(users) == len(set(users)), "more than one live session for a user"
        for record in self._archive.values():
            assert not self.routes.prefixes_for_session(record.session_id)
            assert not self.spawner.has_live_resources(record.session_id)

    # --- internals -------------------------------------------------------------

    def _route_prefix(self, record: SessionRecord) -> str:
        return f"/user/{record.username}/"

    def _bind_route(self, record: SessionRecord) -> None:
        assert record.backend is not None
        prefix = self._route_prefix(record)
        version = self.routes.add_route(prefix, record.backend, record.session_id)
        self.log.append("route_added", prefix=prefix, host=record.backend[0],
                        port=record.backend[1], version=version)

    def _unbind_route(self, record: SessionRecord) -> None:
        prefix = self._route_prefix(record)
        if self.routes.has_prefix(prefix):
            version = self.routes.remove_route(prefix)
            self.log.append("route_removed", prefix=prefix, version=version)

    def _transition(self, record: SessionRecord, to_state: str, reason: str | None = None) -> None:
        from_state = record.state
        record.state = to_state
        record.last_transition = self.clock.now
        entry: dict = {"session": record.session_id, "from": from_state, "to": to_state}
        if reason:
            entry["reason"] = reason
        self.log.append("session_transition", **entry)

    def _archive_session(self, record: SessionRecord) -> None:
        del self._sessions[record.session_id]
        if self._by_user.get(record.username) == record.session_id:
            del self._by_user[record.username]
        self._archive[record.session_id] = record
