"""Wire models for the hub HTTP API."""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..hub import SessionRecord, SpawnOptions


class LoginRequest(BaseModel):
    username: str
    secret: str


class TokenResponse(BaseModel):
    token: str
    username: str
    expires_at: int


class SpawnRequest(BaseModel):
    duration: int = 120
    queue: str = "interactive"
    cpus: int = 1
    memory: int = 2048
    disk_quota: int = 1024
    image: str = "datascience"

    def to_options(self) -> SpawnOptions:
        return SpawnOptions(
            duration=self.duration,
            queue=self.queue,
            cpus=self.cpus,
            memory=self.memory,
            disk_quota=self.disk_quota,
            image=self.image,
        )


class SessionView(BaseModel):
    session_id: str
    username: str
    spawner_kind: str
    state: str
    backend: tuple[str, int] | None = None
    created_at: int
    last_transition: int
    failure_reason: str | None = None
    url: str | None = None

    @classmethod
    def from_record(cls, record: SessionRecord) -> "SessionView":
        return cls(
            session_id=record.session_id,
            username=record.username,
            spawner_kind=record.spawner_kind,
            state=record.state,
            backend=record.backend,
            created_at=record.created_at,
            last_transition=record.last_transition,
            failure_reason=record.failure_reason,
            url=f"/user/{record.username}/" if record.state == "RUNNING" else None,
        )


class SessionListResponse(BaseModel):
    sessions: list[SessionView]


class RouteView(BaseModel):
    prefix: str
    host: str
    port: int
    session_id: str


class RoutesResponse(BaseModel):
    version: int
    routes: list[RouteView]


class NodeJoinRequest(BaseModel):
    node_id: str
    cpus: int = 16
    memory: int = 65536
    slots: int = 4
    master: bool = False
    device_capacity: int = 1000


class ActionView(BaseModel):
    kind: str
    pod: str
    node: str | None = None
    from_node: str | None = None
    to_node: str | None = None
    reason: str = ""


class ActionsResponse(BaseModel):
    actions: list[ActionView]


class QuotaRow(BaseModel):
    username: str
    used: int
    quota: int
    percent: float
    flagged: bool


class QuotaReportResponse(BaseModel):
    rows: list[QuotaRow]


class FaultRequest(BaseModel):
    kind: str  # kill_node | restore_node | drop_backend
    node: str | None = None
    session: str | None = None


class FaultResponse(BaseModel):
    kind: str
    target: str
    notified: list[str] = Field(default_factory=list)


class ClockAdvanceRequest(BaseModel):
    seconds: int = 1


class ClockResponse(BaseModel):
    now: int


class ApplyRequest(BaseModel):
    pods: list[dict]


class ScenarioRequest(BaseModel):
    steps: list[dict]
    seed: int = 0


class InfoResponse(BaseModel):
    name: str
    spawner_kind: str
    auth_mode: str
    now: int
    nodes: int
    sessions: int
