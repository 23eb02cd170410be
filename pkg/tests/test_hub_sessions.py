import random

import pytest

from hubgate.errors import (
    AlreadyRunning,
    Forbidden,
    IllegalTransition,
    InvalidOptions,
    UnknownSession,
)
from hubgate.hub import (
    FAILED,
    NON_TERMINAL_STATES,
    PENDING,
    RUNNING,
    SCHEDULED,
    SessionEvent,
    SpawnOptions,
    STARTING,
    STOPPED,
    STOPPING,
    TERMINAL_STATES,
)

from conftest import login, spawn


class TestSpawnFlow:
    def test_default_spawn_reaches_running(self, swarm_world):
        token = login(swarm_world, "alice")
        record = swarm_world.hub.start_session(token, SpawnOptions())
        assert record.state == PENDING
        settled = swarm_world.settle_session(record.session_id)
        assert settled.state == RUNNING
        assert settled.backend is not None
        host, port = settled.backend
        assert swarm_world.backends.get(host, port) is not None

    def test_transition_chain_is_recorded(self, swarm_world):
        session_id = spawn(swarm_world, "alice")
        seen = [e["to"] for e in swarm_world.log.to_list()
                if e["event"] == "session_transition" and e["session"] == session_id]
        assert seen == [SCHEDULED, STARTING, "READY", RUNNING]

    def test_second_session_while_live_rejected(self, swarm_world):
        token = login(swarm_world, "alice")
        swarm_world.hub.start_session(token, SpawnOptions())
        with pytest.raises(AlreadyRunning):
            swarm_world.hub.start_session(token, SpawnOptions())

    def test_new_session_after_stop_gets_fresh_id(self, swarm_world):
        token = login(swarm_world, "alice")
        first = swarm_world.hub.start_session(token, SpawnOptions())
        swarm_world.settle_session(first.session_id)
        swarm_world.hub.stop_session(token, first.session_id)
        swarm_world.hub.process_pending()
        assert swarm_world.hub.get_session(first.session_id).state == STOPPED
        second = swarm_world.hub.start_session(token, SpawnOptions())
        assert second.session_id != first.session_id

    def test_oversized_request_fails_at_admission(self, swarm_world):
        # largest node has 16 cpus; derive the bound from the cluster itself
        biggest = max(n.cpus for n in swarm_world.swarm_cluster.nodes.values())
        token = login(swarm_world, "alice")
        with pytest.raises(InvalidOptions):
            swarm_world.hub.start_session(token, SpawnOptions(cpus=biggest * 4))

    def test_invalid_options_rejected(self, swarm_world):
        token = login(swarm_world, "alice")
        for bad in (SpawnOptions(duration=0), SpawnOptions(cpus=0),
                    SpawnOptions(memory=1), SpawnOptions(image="")):
            with pytest.raises(InvalidOptions):
                swarm_world.hub.start_session(token, bad)


class TestStop:
    def test_owner_stop_goes_stopping_then_stopped(self, swarm_world):
        token = login(swarm_world, "alice")
        record = swarm_world.hub.start_session(token, SpawnOptions())
        swarm_world.settle_session(record.session_id)
        stopped = swarm_world.hub.stop_session(token, record.session_id)
        assert stopped.state == STOPPING
        swarm_world.hub.process_pending()
        assert swarm_world.hub.get_session(record.session_id).state == STOPPED

    def test_non_owner_cannot_stop(self, swarm_world):
        session_id = spawn(swarm_world, "alice")
        bob = login(swarm_world, "bob")
        with pytest.raises(Forbidden):
            swarm_world.hub.stop_session(bob, session_id)

    def test_admin_can_stop_any_session(self, swarm_world):
        session_id = spawn(swarm_world, "alice")
        admin = login(swarm_world, "admin")
        swarm_world.hub.stop_session(admin, session_id)
        swarm_world.hub.process_pending()
        assert swarm_world.hub.get_session(session_id).state == STOPPED

    def test_stop_on_terminal_session_is_unknown(self, swarm_world):
        token = login(swarm_world, "alice")
        record = swarm_world.hub.start_session(token, SpawnOptions())
        swarm_world.settle_session(record.session_id)
        swarm_world.hub.stop_session(token, record.session_id)
        swarm_world.hub.process_pending()
        with pytest.raises(UnknownSession):
            swarm_world.hub.stop_session(token, record.session_id)
        # ...but the archived record stays readable
        assert swarm_world.hub.get_session(record.session_id).state == STOPPED


class TestTimeout:
    def test_queued_job_times_out_without_backend(self, tmp_path):
        from conftest import make_world
        world = make_world("batch", tmp_path, readiness_timeout_s=30)
        world.join_node("n1", slots=1)
        spawn(world, "alice")  # takes the only slot
        token = login(world, "bob")
        record = world.hub.start_session(token, SpawnOptions())
        world.tick(31)
        final = world.hub.get_session(record.session_id)
        assert final.state == FAILED
        assert final.failure_reason == "TimedOut"
        # alice is untouched
        assert world.hub.live_session_for("alice").state == RUNNING

    def test_pre_ready_timeout_fires_at_boundary(self, tmp_path):
        from conftest import make_world

        world = make_world("swarm", tmp_path, readiness_timeout_s=10)
        world.join_node("n1", master=True)
        token = login(world, "alice")
        record = world.hub.start_session(token, SpawnOptions())
        # strand the session by never ticking the spawner: deliver events by hand
        world.hub.check_timeouts()
        assert world.hub.get_session(record.session_id).state == PENDING
        world.clock.advance(10)
        world.hub.check_timeouts()
        final = world.hub.get_session(record.session_id)
        assert final.state == FAILED
        assert final.failure_reason == "TimedOut"


class TestTransitionTable:
    LEGAL = {
        PENDING: {"scheduled", "failed", "timed_out"},
        SCHEDULED: {"starting", "failed", "timed_out"},
        STARTING: {"backend_ready", "failed", "timed_out"},
        RUNNING: {"stopped", "failed"},
        STOPPING: {"stopped", "failed"},
    }
    ALL_EVENTS = ("scheduled", "starting", "backend_ready", "stopped",
                  "failed", "timed_out")

    def _fresh_session(self, world):
        token = login(world, f"u{random.randrange(10**9)}")
        return world.hub.start_session(token, SpawnOptions()).session_id

    def _force_state(self, world, session_id, state):
        chain = {
            PENDING: [],
            SCHEDULED: ["scheduled"],
            STARTING: ["scheduled", "starting"],
            RUNNING: ["scheduled", "starting", "backend_ready"],
        }[state]
        for kind in chain:
            event = SessionEvent(kind=kind, host="n2", port=40000) \
                if kind == "backend_ready" else SessionEvent(kind=kind)
            world.hub.advance_session(session_id, event)

    def test_fuzzed_events_follow_table_or_raise(self, swarm_world):
        # exhaustive: every (reachable state, event) pair
        for state, legal in self.LEGAL.items():
            if state == STOPPING:
                continue  # reached via stop_session below
            for kind in self.ALL_EVENTS:
                session_id = self._fresh_session(swarm_world)
                self._force_state(swarm_world, session_id, state)
                event = SessionEvent(kind=kind, host="n2", port=40001) \
                    if kind == "backend_ready" else SessionEvent(kind=kind)
                if kind in legal:
                    swarm_world.hub.advance_session(session_id, event)
                else:
                    with pytest.raises(IllegalTransition):
                        swarm_world.hub.advance_session(session_id, event)
                record = swarm_world.hub.get_session(session_id)
                assert record.state in NON_TERMINAL_STATES | TERMINAL_STATES
                # cleanup so the next user can spawn
                if record.state not in TERMINAL_STATES:
                    swarm_world.hub.advance_session(
                        session_id, SessionEvent(kind="failed", reason="cleanup"))

    def test_terminal_states_reject_everything(self, swarm_world):
        session_id = self._fresh_session(swarm_world)
        swarm_world.hub.advance_session(session_id, SessionEvent(kind="failed",
                                                                 reason="x"))
        for kind in self.ALL_EVENTS:
            with pytest.raises((UnknownSession, IllegalTransition)):
                swarm_world.hub.advance_session(session_id, SessionEvent(kind=kind))

    def test_late_backend_ready_after_failure_is_dropped(self, swarm_world):
        # the queue path logs stale events instead of crashing the loop
        session_id = self._fresh_session(swarm_world)
        swarm_world.hub.advance_session(session_id, SessionEvent(kind="failed",
                                                                 reason="boom"))
        swarm_world.hub.deliver(session_id,
                                SessionEvent(kind="backend_ready", host="n2", port=1))
        swarm_world.hub.process_pending()
        stale = [e for e in swarm_world.log.to_list() if e["event"] == "stale_event"]
        assert stale and stale[-1]["session"] == session_id


class TestInvariants:
    def test_routes_match_running_sessions_exactly(self, swarm_world):
        ids = [spawn(swarm_world, u) for u in ("alice", "bob", "carol")]
        swarm_world.check_invariants()
        token = login(swarm_world, "alice")
        swarm_world.hub.stop_session(token, ids[0])
        swarm_world.hub.process_pending()
        swarm_world.check_invariants()
        prefixes = [r.prefix for r in swarm_world.routes.routes()]
        assert "/user/alice/" not in prefixes
        assert "/user/bob/" in prefixes

    def test_archived_sessions_hold_no_resources(self, swarm_world):
        session_id = spawn(swarm_world, "alice")
        token = login(swarm_world, "alice")
        swarm_world.hub.stop_session(token, session_id)
        swarm_world.hub.process_pending()
        assert not swarm_world.spawner.has_live_resources(session_id)
        assert not swarm_world.routes.prefixes_for_session(session_id)

    def test_failover_keeps_exactly_one_live_container(self, swarm_world):
        ids = {u: spawn(swarm_world, u) for u in ("alice", "bob", "carol")}
        victim = swarm_world.hub.get_session(ids["bob"]).backend[0]
        assert victim != swarm_world.swarm_cluster.master
        swarm_world.kill_node(victim)
        # rescheduled, still exactly one live container for the session
        containers = [c for c in swarm_world.swarm_cluster.containers.values()
                      if c.service == f"nb-{ids['bob']}" and c.state == "RUNNING"]
        assert len(containers) == 1
        assert swarm_world.hub.get_session(ids["bob"]).state == RUNNING
        swarm_world.check_invariants()
