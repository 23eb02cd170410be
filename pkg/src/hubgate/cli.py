"""hubctl: administrator CLI for a running hub.

Thin HTTP client over the hub API — no business logic lives here. Exit
codes: 0 success, 1 domain error (the server's error name printed
verbatim), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import requests
import yaml

DEFAULT_SERVER = "http://127.0.0.1:8000"
REQUEST_TIMEOUT = 30.0


class DomainError(Exception):
    def __init__(self, name: str, detail: str) -> None:
        super().__init__(detail)
        self.name = name
        self.detail = detail


class Client:
    def __init__(self, server: str, token: str | None) -> None:
        self.server = server.rstrip("/")
        self.token = token

    def call(self, method: str, path: str, body: dict | None = None,
             params: dict | None = None) -> dict:
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            response = requests.request(
                method, f"{self.server}{path}", json=body, params=params,
                headers=headers, timeout=REQUEST_TIMEOUT)
        except requests.RequestException as exc:
            raise DomainError("ServerUnreachable", str(exc)) from exc
        try:
            payload = response.json()
        except ValueError as exc:
            raise DomainError("BadResponse",
                              f"non-JSON response (HTTP {response.status_code})") from exc
        if response.status_code >= 400:
            name = payload.get("error", f"HTTP{response.status_code}") \
                if isinstance(payload, dict) else f"HTTP{response.status_code}"
            detail = payload.get("detail", "") if isinstance(payload, dict) else ""
            raise DomainError(str(name), str(detail))
        return payload


# --- rendering -------------------------------------------------------------------


def render_json(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True)


def render_table(rows: list[dict], columns: list[str] | None = None) -> str:
    if not rows:
        return "(empty)"
    if columns is None:
        columns = list(rows[0].keys())
    cells = [[_cell(row.get(col)) for col in columns] for row in rows]
    widths = [max(len(col), *(len(line[i]) for line in cells))
              for i, col in enumerate(columns)]
    out = ["  ".join(col.ljust(widths[i]) for i, col in enumerate(columns))]
    for line in cells:
        out.append("  ".join(line[i].ljust(widths[i]) for i in range(len(columns))))
    return "\n".join(out)


def _cell(value: object) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def emit(args: argparse.Namespace, payload: dict,
         rows: list[dict] | None = None, columns: list[str] | None = None,
         summary: str | None = None) -> None:
    if args.output == "json":
        print(render_json(payload))
        return
    if rows is not None:
        print(render_table(rows, columns))
    elif summary is not None:
        print(summary)
    else:
        print(render_json(payload))


# --- verb handlers ------------------------------------------------------------------


def cmd_login(client: Client, args: argparse.Namespace) -> int:
    secret = args.secret if args.secret is not None else f"pw-{args.username}"
    payload = client.call("POST", "/hub/api/login",
                          body={"username": args.username, "secret": secret})
    emit(args, payload, summary=payload["token"])
    return 0


def cmd_nodes_join(client: Client, args: argparse.Namespace) -> int:
    body = {"node_id": args.node_id, "cpus": args.cpus, "memory": args.memory,
            "slots": args.slots, "master": args.master,
            "device_capacity": args.device_capacity}
    payload = client.call("POST", "/hub/api/nodes", body=body)
    emit(args, payload, rows=[payload])
    return 0


def cmd_nodes_drain(client: Client, args: argparse.Namespace) -> int:
    payload = client.call("POST", f"/hub/api/nodes/{args.node_id}/drain")
    emit(args, payload, rows=payload["actions"],
         columns=["kind", "pod", "from_node", "to_node", "reason"])
    return 0


def cmd_nodes_list(client: Client, args: argparse.Namespace) -> int:
    payload = client.call("GET", "/hub/api/nodes")
    emit(args, payload, rows=payload["nodes"])
    return 0


def cmd_sessions_list(client: Client, args: argparse.Namespace) -> int:
    payload = client.call("GET", "/hub/api/sessions")
    emit(args, payload, rows=payload["sessions"],
         columns=["session_id", "username", "state", "backend", "url"])
    return 0


def cmd_quota_report(client: Client, args: argparse.Namespace) -> int:
    payload = client.call("GET", "/hub/api/quota")
    emit(args, payload, rows=payload["rows"],
         columns=["username", "used", "quota", "percent", "flagged"])
    return 0


def cmd_routes_list(client: Client, args: argparse.Namespace) -> int:
    payload = client.call("GET", "/hub/api/routes")
    emit(args, payload, rows=payload["routes"],
         columns=["prefix", "host", "port", "session_id"])
    return 0


def cmd_apply(client: Client, args: argparse.Namespace) -> int:
    try:
        manifest = yaml.safe_load(Path(args.file).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise DomainError("ManifestError", str(exc)) from exc
    if not isinstance(manifest, dict) or "pods" not in manifest:
        raise DomainError("ManifestError", "manifest must be a mapping with 'pods'")
    payload = client.call("POST", "/hub/api/apply", body={"pods": manifest["pods"]})
    emit(args, payload, rows=payload["actions"],
         columns=["kind", "pod", "node", "reason"])
    return 0


def cmd_scenario_run(client: Client, args: argparse.Namespace) -> int:
    try:
        steps = json.loads(Path(args.file).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainError("ScenarioParseError", str(exc)) from exc
    payload = client.call("POST", "/hub/api/scenarios",
                          body={"steps": steps, "seed": args.seed})
    if args.output == "json":
        print(render_json(payload))
    else:
        status = "PASSED" if payload["passed"] else "FAILED"
        ok = sum(1 for a in payload["asserts"] if a["ok"])
        print(f"scenario {status}: {ok}/{len(payload['asserts'])} asserts ok, "
              f"{len(payload['errors'])} step errors, "
              f"{len(payload['event_log'])} events")
        for entry in payload["asserts"]:
            mark = "ok " if entry["ok"] else "FAIL"
            print(f"  [{mark}] {entry['kind']}: expected={entry['expected']!r} "
                  f"actual={entry['actual']!r}")
        for err in payload["errors"]:
            print(f"  [step {err['step']}] {err['op']}: {err['error']} ({err['detail']})")
    return 0 if payload["passed"] else 1


def cmd_clock_advance(client: Client, args: argparse.Namespace) -> int:
    payload = client.call("POST", "/hub/api/clock/advance",
                          body={"seconds": args.seconds})
    emit(args, payload, summary=f"now={payload['now']}")
    return 0


def cmd_clock_show(client: Client, args: argparse.Namespace) -> int:
    payload = client.call("GET", "/hub/api/clock")
    emit(args, payload, summary=f"now={payload['now']}")
    return 0


def cmd_fault(client: Client, args: argparse.Namespace) -> int:
    body = {"kind": args.fault_kind}
    if args.fault_kind in ("kill_node", "restore_node"):
        body["node"] = args.target
    else:
        body["session"] = args.target
    payload = client.call("POST", "/hub/api/faults", body=body)
    emit(args, payload,
         summary=f"{payload['kind']} {payload['target']}: "
                 f"notified {', '.join(payload['notified']) or 'none'}")
    return 0


def cmd_info(client: Client, args: argparse.Namespace) -> int:
    payload = client.call("GET", "/hub/api/info")
    emit(args, payload, rows=[payload])
    return 0


# --- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hubctl", description="Operate a running hub deployment")
    parser.add_argument("--server",
                        default=os.environ.get("HUBCTL_SERVER", DEFAULT_SERVER))
    parser.add_argument("--token", default=os.environ.get("HUBCTL_TOKEN"))
    parser.add_argument("--output", choices=("table", "json"), default="table")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("login", help="obtain a token")
    p.add_argument("username")
    p.add_argument("--secret")
    p.set_defaults(func=cmd_login)

    nodes = sub.add_parser("nodes", help="node lifecycle")
    nodes_sub = nodes.add_subparsers(dest="nodes_verb", required=True)
    p = nodes_sub.add_parser("join", help="add a node to the cluster")
    p.add_argument("node_id")
    p.add_argument("--cpus", type=int, default=16)
    p.add_argument("--memory", type=int, default=65536)
    p.add_argument("--slots", type=int, default=4)
    p.add_argument("--master", action="store_true")
    p.add_argument("--device-capacity", type=int, default=1000)
    p.set_defaults(func=cmd_nodes_join)
    p = nodes_sub.add_parser("drain", help="migrate everything off a node")
    p.add_argument("node_id")
    p.set_defaults(func=cmd_nodes_drain)
    p = nodes_sub.add_parser("list", help="show cluster nodes")
    p.set_defaults(func=cmd_nodes_list)

    sessions = sub.add_parser("sessions", help="session administration")
    sessions_sub = sessions.add_subparsers(dest="sessions_verb", required=True)
    p = sessions_sub.add_parser("list", help="show sessions")
    p.set_defaults(func=cmd_sessions_list)

    quota = sub.add_parser("quota", help="storage quota administration")
    quota_sub = quota.add_subparsers(dest="quota_verb", required=True)
    p = quota_sub.add_parser("report", help="per-user usage, worst first")
    p.set_defaults(func=cmd_quota_report)

    routes = sub.add_parser("routes", help="proxy routing table")
    routes_sub = routes.add_subparsers(dest="routes_verb", required=True)
    p = routes_sub.add_parser("list", help="show active routes")
    p.set_defaults(func=cmd_routes_list)

    p = sub.add_parser("apply", help="apply a pod manifest (k8s deployments)")
    p.add_argument("-f", "--file", required=True)
    p.set_defaults(func=cmd_apply)

    scenario = sub.add_parser("scenario", help="scripted scenario execution")
    scenario_sub = scenario.add_subparsers(dest="scenario_verb", required=True)
    p = scenario_sub.add_parser("run", help="run a scenario file on the server")
    p.add_argument("file")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_scenario_run)

    clock = sub.add_parser("clock", help="logical clock control")
    clock_sub = clock.add_subparsers(dest="clock_verb", required=True)
    p = clock_sub.add_parser("advance")
    p.add_argument("seconds", type=int)
    p.set_defaults(func=cmd_clock_advance)
    p = clock_sub.add_parser("show")
    p.set_defaults(func=cmd_clock_show)

    fault = sub.add_parser("fault", help="inject a fault")
    fault_sub = fault.add_subparsers(dest="fault_verb", required=True)
    for kind, target_name in (("kill-node", "node"), ("restore-node", "node"),
                              ("drop-backend", "session")):
        p = fault_sub.add_parser(kind)
        p.add_argument("target", metavar=target_name)
        p.set_defaults(func=cmd_fault, fault_kind=kind.replace("-", "_"))

    p = sub.add_parser("info", help="server summary")
    p.set_defaults(func=cmd_info)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    client = Client(server=args.server, token=args.token)
    try:
        return args.func(client, args)
    except DomainError as exc:
        print(f"{exc.name}: {exc.detail}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
