"""FastAPI service exposing one simulated hub deployment.

All mutating access to the world is serialized behind one re-entrant lock;
an optional background ticker advances the logical clock at a fixed real
interval so live servers make progress without manual clock calls (tests
usually drive the clock explicitly instead).
"""

from __future__ import annotations

import argparse
import threading
from pathlib import Path

from fastapi import Depends, FastAPI, Header, Query, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from ..config import ConfigError, HubConfig, load_config
from ..errors import Forbidden, HubgateError, Unauthorized, UnknownTarget
from ..simulator import run_scenario
from ..world import World
from .models import (
    ActionsResponse,
    ActionView,
    ApplyRequest,
    ClockAdvanceRequest,
    ClockResponse,
    FaultRequest,
    FaultResponse,
    InfoResponse,
    LoginRequest,
    NodeJoinRequest,
    QuotaReportResponse,
    QuotaRow,
    RoutesResponse,
    RouteView,
    ScenarioRequest,
    SessionListResponse,
    SessionView,
    SpawnRequest,
    TokenResponse,
)


class HubgateServer:
    """World + lock + optional wall-clock ticker."""

    def __init__(self, world: World, auto_tick_interval: float | None = None) -> None:
        self.world = world
        self.lock = threading.RLock()
        self._stop = threading.Event()
        self._ticker: threading.Thread | None = None
        if auto_tick_interval is not None:
            self._ticker = threading.Thread(
                target=self._tick_loop, args=(auto_tick_interval,), daemon=True)
            self._ticker.start()

    def _tick_loop(self, interval: float) -> None:
        while not self._stop.wait(interval):
            with self.lock:
                self.world.tick(1)

    def shutdown(self) -> None:
        self._stop.set()


def create_app(
    config: HubConfig | None = None,
    seed: int = 0,
    world: World | None = None,
    auto_tick_interval: float | None = None,
    panel_dir: str | Path | None = None,
) -> FastAPI:
    if world is None:
        world = World(config or HubConfig(), seed=seed)
    server = HubgateServer(world, auto_tick_interval=auto_tick_interval)
    app = FastAPI(title="hubgate", docs_url=None, redoc_url=None)
    app.state.server = server

    @app.exception_handler(HubgateError)
    async def domain_error(_: Request, exc: HubgateError) -> JSONResponse:
        return JSONResponse(status_code=exc.http_status,
                            content={"error": exc.name, "detail": str(exc)})

    @app.exception_handler(ValueError)
    async def value_error(_: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(status_code=422,
                            content={"error": "InvalidRequest", "detail": str(exc)})

    def bearer(authorization: str | None = Header(default=None)) -> str:
        if not authorization or not authorization.startswith("Bearer "):
            raise Unauthorized("missing bearer token")
        return authorization[len("Bearer "):]

    def current_user(token: str = Depends(bearer)) -> str:
        with server.lock:
            return server.world.hub.verify(token)

    def admin_user(username: str = Depends(current_user)) -> str:
        if not server.world.hub.is_admin(username):
            raise Forbidden(f"{username} is not an admin")
        return username

    # --- auth -----------------------------------------------------------------

    @app.post("/hub/api/login", response_model=TokenResponse)
    def login(body: LoginRequest) -> TokenResponse:
        with server.lock:
            token = server.world.hub.login(body.username, body.secret)
        return TokenResponse(token=token.token, username=token.username,
                             expires_at=token.expires_at())

    @app.get("/hub/oauth/callback", response_model=TokenResponse)
    def oauth_callback(code: str = Query(...)) -> TokenResponse:
        with server.lock:
            token = server.world.hub.oauth_callback(code)
        return TokenResponse(token=token.token, username=token.username,
                             expires_at=token.expires_at())

    # --- sessions ------------------------------------------------------------------

    @app.post("/hub/api/sessions", response_model=SessionView)
    def start_session(body: SpawnRequest, token: str = Depends(bearer)) -> SessionView:
        with server.lock:
            record = server.world.hub.start_session(token, body.to_options())
        return SessionView.from_record(record)

    @app.get("/hub/api/sessions", response_model=SessionListResponse)
    def list_sessions(username: str = Depends(current_user)) -> SessionListResponse:
        with server.lock:
            records = server.world.hub.list_sessions()
            if not server.world.hub.is_admin(username):
                records = [r for r in records if r.username == username]
        return SessionListResponse(sessions=[SessionView.from_record(r) for r in records])

    @app.get("/hub/api/sessions/{session_id}", response_model=SessionView)
    def get_session(session_id: str,
                    username: str = Depends(current_user)) -> SessionView:
        with server.lock:
            record = server.world.hub.get_session(session_id)
            if record.username != username and not server.world.hub.is_admin(username):
                raise Forbidden(f"{username} does not own {session_id}")
        return SessionView.from_record(record)

    @app.delete("/hub/api/sessions/{session_id}", response_model=SessionView)
    def stop_session(session_id: str, token: str = Depends(bearer)) -> SessionView:
        with server.lock:
            record = server.world.hub.stop_session(token, session_id)
            view = SessionView.from_record(record)
            # confirmation events queued by the spawner land after the
            # response snapshot: caller sees STOPPING now, STOPPED next poll
            server.world.hub.process_pending()
        return view

    # --- routes ----------------------------------------------------------------------

    @app.get("/hub/api/routes", response_model=RoutesResponse)
    def get_routes(_: str = Depends(admin_user)) -> RoutesResponse:
        with server.lock:
            routes = server.world.routes.routes()
            version = server.world.routes.version
        return RoutesResponse(version=version, routes=[
            RouteView(prefix=r.prefix, host=r.backend[0], port=r.backend[1],
                      session_id=r.session_id)
            for r in routes
        ])

    # --- nodes --------------------------------------------------------------------

    @app.post("/hub/api/nodes")
    def join_node(body: NodeJoinRequest, _: str = Depends(admin_user)) -> dict:
        with server.lock:
            return server.world.join_node(
                body.node_id, cpus=body.cpus, memory=body.memory, slots=body.slots,
                master=body.master, device_capacity=body.device_capacity)

    @app.get("/hub/api/nodes")
    def list_nodes(_: str = Depends(admin_user)) -> dict:
        with server.lock:
            return {"nodes": server.world.list_nodes()}

    @app.post("/hub/api/nodes/{node_id}/drain", response_model=ActionsResponse)
    def drain_node(node_id: str, _: str = Depends(admin_user)) -> ActionsResponse:
        with server.lock:
            actions = server.world.drain(node_id)
        return ActionsResponse(actions=[
            ActionView(kind=a.kind, pod=a.pod, node=a.node, from_node=a.from_node,
                       to_node=a.to_node, reason=a.reason)
            for a in actions
        ])

    # --- quota ---------------------------------------------------------------------

    @app.get("/hub/api/quota", response_model=QuotaReportResponse)
    def quota_report(_: str = Depends(admin_user)) -> QuotaReportResponse:
        with server.lock:
            rows = server.world.quota_report()
        return QuotaReportResponse(rows=[QuotaRow(**row) for row in rows])

    @app.get("/hub/api/quota/{target}", response_model=QuotaRow)
    def quota_for(target: str, username: str = Depends(current_user)) -> QuotaRow:
        if target != username and not server.world.hub.is_admin(username):
            raise Forbidden(f"{username} cannot read {target}'s quota")
        with server.lock:
            rows = server.world.quota_report()
        for row in rows:
            if row["username"] == target:
                return QuotaRow(**row)
        return QuotaRow(username=target, used=0,
                        quota=server.world.config.per_user_quota,
                        percent=0.0, flagged=False)

    # --- operations ---------------------------------------------------------------

    @app.post("/hub/api/faults", response_model=FaultResponse)
    def inject_fault(body: FaultRequest, _: str = Depends(admin_user)) -> FaultResponse:
        with server.lock:
            if body.kind == "kill_node":
                if body.node is None:
                    raise UnknownTarget("kill_node requires 'node'")
                notified = server.world.kill_node(body.node)
                return FaultResponse(kind=body.kind, target=body.node,
                                     notified=notified)
            if body.kind == "restore_node":
                if body.node is None:
                    raise UnknownTarget("restore_node requires 'node'")
                server.world.restore_node(body.node)
                return FaultResponse(kind=body.kind, target=body.node)
            if body.kind == "drop_backend":
                if body.session is None:
                    raise UnknownTarget("drop_backend requires 'session'")
                server.world.drop_backend(body.session)
                return FaultResponse(kind=body.kind, target=body.session)
            raise UnknownTarget(f"unknown fault kind {body.kind!r}")

    @app.post("/hub/api/clock/advance", response_model=ClockResponse)
    def advance_clock(body: ClockAdvanceRequest,
                      _: str = Depends(admin_user)) -> ClockResponse:
        with server.lock:
            server.world.tick(max(0, body.seconds))
            return ClockResponse(now=server.world.now)

    @app.get("/hub/api/clock", response_model=ClockResponse)
    def get_clock(_: str = Depends(current_user)) -> ClockResponse:
        with server.lock:
            return ClockResponse(now=server.world.now)

    @app.post("/hub/api/apply", response_model=ActionsResponse)
    def apply_manifest(body: ApplyRequest, _: str = Depends(admin_user)) -> ActionsResponse:
        with server.lock:
            actions = server.world.apply_manifest({"pods": body.pods})
        return ActionsResponse(actions=[
            ActionView(kind=a.kind, pod=a.pod, node=a.node, from_node=a.from_node,
                       to_node=a.to_node, reason=a.reason)
            for a in actions
        ])

    @app.post("/hub/api/scenarios")
    def scenario_run(body: ScenarioRequest, _: str = Depends(admin_user)) -> dict:
        # scenarios execute against a fresh isolated world, never the live one
        return run_scenario(body.steps, seed=body.seed)

    @app.get("/hub/api/events")
    def get_events(_: str = Depends(admin_user)) -> dict:
        with server.lock:
            return {"events": server.world.log.to_list()}

    @app.get("/hub/api/info", response_model=InfoResponse)
    def info() -> InfoResponse:
        with server.lock:
            return InfoResponse(
                name="hubgate",
                spawner_kind=server.world.config.spawner_kind,
                auth_mode=server.world.config.auth_mode,
                now=server.world.now,
                nodes=len(server.world.node_ids()),
                sessions=len(server.world.hub.list_sessions()),
            )

    # --- session traffic (reverse proxy persona) ----------------------------------------

    @app.api_route("/user/{rest:path}",
                   methods=["GET", "POST", "PUT", "DELETE", "PATCH"])
    async def user_traffic(rest: str, request: Request) -> Response:
        with server.lock:
            sim = server.world.forward(request.method, f"/user/{rest}",
                                       headers=dict(request.headers))
        return Response(content=sim.body, status_code=sim.status,
                        headers=dict(sim.headers))

    if panel_dir is not None and Path(panel_dir).is_dir():
        app.mount("/panel", StaticFiles(directory=str(panel_dir), html=True),
                  name="panel")

    return app


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="hubgate-serve",
                                     description="Run the hub API server")
    parser.add_argument("--config", help="deployment config file (YAML)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--auto-tick", type=float, default=0.05, metavar="SECONDS",
                        help="advance the logical clock every N real seconds "
                             "(0 disables)")
    parser.add_argument("--panel-dir", default="frontend/dist",
                        help="static web panel directory, mounted at /panel")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config) if args.config else HubConfig()
        config.validate()
    except ConfigError as exc:
        parser.error(str(exc))

    import uvicorn

    interval = args.auto_tick if args.auto_tick > 0 else None
    app = create_app(config=config, seed=args.seed, auto_tick_interval=interval,
                     panel_dir=args.panel_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
