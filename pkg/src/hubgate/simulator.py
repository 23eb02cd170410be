"""Scripted scenarios against a fresh simulated deployment.

A scenario file is a JSON array of steps, one object per step:

    [
      {"op": "config", "spawner": {"kind": "swarm"}},
      {"op": "join", "node": "n1", "master": true},
      {"op": "join", "node": "n2"},
      {"op": "login", "user": "alice"},
      {"op": "spawn", "user": "alice", "label": "sa"},
      {"op": "assert", "kind": "session_state", "session": "@sa",
       "equals": "RUNNING"}
    ]

`config` may only appear first. Steps may carry a `label`; later steps
reference labeled outputs as "@label". Assertion failures and step-level
domain errors are recorded in the report — the run always completes — and
the report carries the full event log so reruns can be compared byte for
byte.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .config import ConfigError, HubConfig, from_dict
from .errors import HubgateError, ScenarioParseError
from .hub import SpawnOptions
from .world import World

STEP_OPS = frozenset({
    "config", "join", "login", "spawn", "stop", "write_data", "kill_node",
    "restore_node", "drop_backend", "drain", "advance_clock", "assert",
})

ASSERT_KINDS = frozenset({
    "session_state", "route_ok", "no_route", "quota_used", "pool_health",
    "node_empty", "file_content", "session_count", "event_present",
})

_REQUIRED_FIELDS = {
    "join": ("node",),
    "login": ("user",),
    "spawn": ("user",),
    "stop": ("session",),
    "write_data": ("user", "file"),
    "kill_node": ("node",),
    "restore_node": ("node",),
    "drop_backend": ("session",),
    "drain": ("node",),
    "advance_clock": ("seconds",),
    "assert": ("kind",),
}


def load_scenario(path: str | Path) -> list[dict]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioParseError(f"cannot load scenario: {exc}") from exc
    validate_steps(data)
    return data


def validate_steps(steps: Any) -> None:
    if not isinstance(steps, list):
        raise ScenarioParseError("scenario must be a JSON array of steps")
    for index, step in enumerate(steps):
        if not isinstance(step, dict):
            raise ScenarioParseError(f"step {index} is not an object")
        op = step.get("op")
        if op not in STEP_OPS:
            raise ScenarioParseError(f"step {index}: unknown op {op!r}")
        if op == "config" and index != 0:
            raise ScenarioParseError("config must be the first step")
        for field in _REQUIRED_FIELDS.get(op, ()):
            if field not in step:
                raise ScenarioParseError(f"step {index} ({op}): missing {field!r}")
        if op == "assert" and step["kind"] not in ASSERT_KINDS:
            raise ScenarioParseError(
                f"step {index}: unknown assert kind {step['kind']!r}")


def run_scenario(steps: list[dict] | str | Path, seed: int = 0,
                 workdir: str | Path | None = None,
                 base_config: HubConfig | None = None) -> dict:
    if isinstance(steps, (str, Path)):
        steps = load_scenario(steps)
    else:
        validate_steps(steps)
    runner = _Runner(steps, seed=seed, workdir=workdir, base_config=base_config)
    return runner.run()


class _Runner:
    def __init__(self, steps: list[dict], seed: int,
                 workdir: str | Path | None,
                 base_config: HubConfig | None) -> None:
        self.steps = steps
        self.seed = seed
        self.workdir = workdir
        # scenarios default to open auth so scripts can mint users freely
        self.base_config = base_config or HubConfig(auth_mode="open")
        self.labels: dict[str, Any] = {}
        self.tokens: dict[str, str] = {}
        self.asserts: list[dict] = []
        self.errors: list[dict] = []

    def run(self) -> dict:
        steps = list(self.steps)
        config = self.base_config
        if steps and steps[0]["op"] == "config":
            overrides = {k: v for k, v in steps[0].items()
                         if k not in ("op", "label")}
            try:
                config = config.with_overrides(overrides)
            except ConfigError as exc:
                raise ScenarioParseError(str(exc)) from exc
            steps = steps[1:]
        self.world = World(config, seed=self.seed, workdir=self.workdir)

        # error rows use the file's step numbering, config included
        offset = len(self.steps) - len(steps)
        for index, step in enumerate(steps, start=offset):
            op = step["op"]
            expected_error = step.get("expect_error")
            try:
                output = getattr(self, f"_op_{op}")(step)
                if expected_error is not None:
                    self.errors.append({"step": index, "op": op,
                                        "error": "ExpectedErrorMissing",
                                        "detail": f"expected {expected_error}"})
                elif step.get("label") is not None:
                    self.labels[step["label"]] = output
            except HubgateError as exc:
                if expected_error == exc.name:
                    self.asserts.append({"kind": "expected_error",
                                         "label": step.get("label"), "ok": True,
                                         "expected": expected_error,
                                         "actual": exc.name})
                else:
                    self.errors.append({"step": index, "op": op, "error": exc.name,
                                        "detail": str(exc)})

        passed = not self.errors and all(a["ok"] for a in self.asserts)
        return {
            "passed": passed,
            "seed": self.seed,
            "asserts": self.asserts,
            "errors": self.errors,
            "event_log": self.world.log.to_list(),
        }

    # --- reference resolution ---------------------------------------------------

    def _resolve(self, value: Any) -> Any:
        if isinstance(value, str) and value.startswith("@"):
            label = value[1:]
            if label not in self.labels:
                raise KeyError(f"unresolved label {label!r}")
            return self.labels[label]
        return value

    def _token_for(self, username: str) -> str:
        token = self.tokens.get(username)
        if token is None:
            raise HubgateError(f"{username} has not logged in yet")
        return token

    # --- step handlers ---------------------------------------------------------------

    def _op_join(self, step: dict) -> dict:
        kwargs = {}
        for key in ("cpus", "memory", "slots", "master", "device_capacity"):
            if key in step:
                kwargs[key] = step[key]
        return self.world.join_node(step["node"], **kwargs)

    def _op_login(self, step: dict) -> str:
        username = step["user"]
        secret = step.get("secret", f"pw-{username}")
        token = self.world.hub.login(username, secret)
        self.tokens[username] = token.token
        return token.token

    def _op_spawn(self, step: dict) -> str:
        token = self._token_for(step["user"])
        options = SpawnOptions(**step.get("options", {}))
        record = self.world.hub.start_session(token, options)
        if step.get("wait", True):
            self.world.settle_session(record.session_id)
        return record.session_id

    def _op_stop(self, step: dict) -> str:
        session_id = self._resolve(step["session"])
        username = step.get("user")
        token = self._token_for(username) if username else self._admin_token()
        self.world.hub.stop_session(token, session_id)
        self.world.hub.process_pending()
        return session_id

    def _admin_token(self) -> str:
        for username in self.world.config.admin_users:
            if username in self.tokens:
                return self.tokens[username]
        raise HubgateError("no admin has logged in")

    def _op_write_data(self, step: dict) -> dict:
        content = step["content"].encode() if "content" in step else None
        return self.world.write_data(step["user"], step["file"],
                                     mib=step.get("mib", 1), content=content)

    def _op_kill_node(self, step: dict) -> list[str]:
        return self.world.kill_node(step["node"])

    def _op_restore_node(self, step: dict) -> None:
        self.world.restore_node(step["node"])

    def _op_drop_backend(self, step: dict) -> None:
        self.world.drop_backend(self._resolve(step["session"]))

    def _op_drain(self, step: dict) -> list[dict]:
        actions = self.world.drain(step["node"])
        return [{"kind": a.kind, "pod": a.pod, "from": a.from_node,
                 "to": a.to_node or a.node} for a in actions]

    def _op_advance_clock(self, step: dict) -> int:
        self.world.tick(int(step["seconds"]))
        return self.world.now

    # --- asserts ----------------------------------------------------------------------

    def _op_assert(self, step: dict) -> None:
        kind = step["kind"]
        verdict = {"kind": kind, "label": step.get("label"), "ok": False,
                   "expected": None, "actual": None}
        try:
            expected, actual = getattr(self, f"_assert_{kind}")(step)
            verdict["expected"] = expected
            verdict["actual"] = actual
            verdict["ok"] = expected == actual
        except (HubgateError, KeyError, ValueError, OSError) as exc:
            verdict["expected"] = step.get("equals")
            verdict["actual"] = f"error: {exc}"
        self.asserts.append(verdict)

    def _assert_session_state(self, step: dict) -> tuple[Any, Any]:
        session_id = self._resolve(step["session"])
        record = self.world.hub.get_session(session_id)
        return step["equals"], record.state

    def _assert_route_ok(self, step: dict) -> tuple[Any, Any]:
        response = self.world.forward("GET", step["path"])
        needle = step.get("contains", "")
        ok = response.status == 200 and needle in response.body.decode()
        return True, ok

    def _assert_no_route(self, step: dict) -> tuple[Any, Any]:
        response = self.world.forward("GET", step["path"])
        return 404, response.status

    def _assert_quota_used(self, step: dict) -> tuple[Any, Any]:
        volume = self.world.volumes.get_volume(step["user"]) \
            if self.world.volumes else None
        return step["equals"], None if volume is None else volume.used

    def _assert_pool_health(self, step: dict) -> tuple[Any, Any]:
        health = self.world.pool.health if self.world.pool else None
        return step["equals"], health

    def _assert_node_empty(self, step: dict) -> tuple[Any, Any]:
        nodes = {n["node_id"]: n for n in self.world.list_nodes()}
        node = nodes.get(step["node"])
        if node is None:
            return True, f"unknown node {step['node']}"
        if "pods" in node:
            empty = not node["pods"]
        elif "containers" in node:
            empty = node["containers"] == 0
        else:
            empty = node["used_slots"] == 0
        if step.get("cordoned") is not None:
            return True, empty and node.get("cordoned") == step["cordoned"]
        return True, empty

    def _assert_file_content(self, step: dict) -> tuple[Any, Any]:
        payload = self.world.read_data(step["user"], step["file"]).decode()
        return True, step.get("contains", "") in payload

    def _assert_session_count(self, step: dict) -> tuple[Any, Any]:
        records = self.world.hub.list_sessions()
        if "state" in step:
            records = [r for r in records if r.state == step["state"]]
        return step["equals"], len(records)

    def _assert_event_present(self, step: dict) -> tuple[Any, Any]:
        count = sum(1 for entry in self.world.log.to_list()
                    if entry.get("event") == step["event"])
        return True, count >= step.get("min", 1)
