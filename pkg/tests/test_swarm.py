import random
from collections import Counter

import pytest

from hubgate.errors import (
    DuplicateNode,
    MasterLost,
    NoMaster,
    Unschedulable,
    UnknownNode,
)
from hubgate.hub import FAILED, RUNNING
from hubgate.swarm import (
    ANY_SPREAD,
    MASTER_ONLY,
    ServiceSpec,
    SwarmCluster,
)

from conftest import spawn


def make_cluster(workers=2, cpus=16, memory=65536):
    cluster = SwarmCluster()
    cluster.join_node("m0", cpus=cpus, memory=memory)
    for i in range(1, workers + 1):
        cluster.join_node(f"w{i}", cpus=cpus, memory=memory, master_addr="m0")
    return cluster


def running_by_node(cluster):
    counts = Counter()
    for c in cluster.containers.values():
        if c.state == "RUNNING":
            counts[c.node_id] += 1
    return counts


class TestMembership:
    def test_first_join_creates_master(self):
        cluster = SwarmCluster()
        node = cluster.join_node("m0", cpus=8, memory=16384)
        assert node.is_master
        assert cluster.master.node_id == "m0"

    def test_worker_needs_master(self):
        cluster = SwarmCluster()
        with pytest.raises(NoMaster):
            cluster.join_node("w1", cpus=8, memory=16384, master_addr="m0")

    def test_second_master_rejected(self):
        cluster = make_cluster()
        with pytest.raises(DuplicateNode):
            cluster.join_node("m1", cpus=8, memory=16384)

    def test_duplicate_node_id_rejected(self):
        cluster = make_cluster()
        with pytest.raises(DuplicateNode):
            cluster.join_node("w1", cpus=8, memory=16384, master_addr="m0")


class TestPlacement:
    def test_master_only_pins_to_master(self):
        cluster = make_cluster(workers=3)
        placed = cluster.schedule_service(ServiceSpec(
            name="hub", replicas=1, limits=(4, 8192), placement=MASTER_ONLY))
        assert [c.node_id for c in placed] == ["m0"]

    def test_master_only_fails_when_master_is_full(self):
        cluster = make_cluster(workers=1, cpus=4, memory=8192)
        cluster.schedule_service(ServiceSpec(
            name="hub", replicas=1, limits=(4, 8192), placement=MASTER_ONLY))
        with pytest.raises(Unschedulable):
            cluster.schedule_service(ServiceSpec(
                name="registry", replicas=1, limits=(1, 1024),
                placement=MASTER_ONLY))

    def test_spread_prefers_least_loaded_then_lowest_id(self):
        cluster = make_cluster(workers=2)
        spec = lambda i: ServiceSpec(name=f"svc{i}", replicas=1, limits=(1, 1024))
        assert cluster.schedule_service(spec(1))[0].node_id == "m0"
        assert cluster.schedule_service(spec(2))[0].node_id == "w1"
        assert cluster.schedule_service(spec(3))[0].node_id == "w2"
        # all tied at 1 again: lowest id wins
        assert cluster.schedule_service(spec(4))[0].node_id == "m0"

    def test_four_replicas_split_two_per_worker_when_master_full(self):
        cluster = make_cluster(workers=2, cpus=8, memory=16384)
        cluster.schedule_service(ServiceSpec(
            name="hub", replicas=1, limits=(8, 16384), placement=MASTER_ONLY))
        placed = cluster.schedule_service(ServiceSpec(
            name="web", replicas=4, limits=(2, 2048)))
        assert Counter(c.node_id for c in placed) == {"w1": 2, "w2": 2}

    def test_replicas_interleave_within_one_service(self):
        cluster = make_cluster(workers=2)
        placed = cluster.schedule_service(ServiceSpec(
            name="web", replicas=3, limits=(1, 1024)))
        # in-plan reservations count toward load, so replicas spread out
        assert [c.node_id for c in placed] == ["m0", "w1", "w2"]

    def test_spread_is_balanced_within_one(self):
        rng = random.Random(3)
        cluster = make_cluster(workers=4)
        for i in range(rng.randint(20, 30)):
            cluster.schedule_service(ServiceSpec(
                name=f"svc{i}", replicas=1, limits=(1, 1024)))
        counts = running_by_node(cluster)
        assert max(counts.values()) - min(counts.values()) <= 1

    def test_ports_count_up_per_node(self):
        cluster = make_cluster(workers=1)
        a = cluster.schedule_service(ServiceSpec("a", 1, (1, 1024)))[0]
        b = cluster.schedule_service(ServiceSpec("b", 1, (1, 1024)))[0]
        c = cluster.schedule_service(ServiceSpec("c", 1, (1, 1024)))[0]
        assert (a.node_id, a.port) == ("m0", 32000)
        assert (b.node_id, b.port) == ("w1", 32000)
        assert (c.node_id, c.port) == ("m0", 32001)


class TestAllOrNothing:
    def test_unschedulable_leaves_reservations_untouched(self):
        cluster = make_cluster(workers=2, cpus=4, memory=8192)
        before = {n.node_id: (n.reserved_cpus, n.reserved_memory)
                  for n in cluster.nodes.values()}
        # 3 nodes x 4 cpus: five 2-cpu replicas need 10 cpus, only 4th+5th fail
        with pytest.raises(Unschedulable):
            cluster.schedule_service(ServiceSpec("big", 7, (2, 1024)))
        after = {n.node_id: (n.reserved_cpus, n.reserved_memory)
                 for n in cluster.nodes.values()}
        assert after == before
        assert "big" not in cluster.services
        assert cluster.containers == {}
        cluster.check_capacity_invariant()

    def test_partial_fit_never_materializes(self):
        cluster = make_cluster(workers=1, cpus=2, memory=4096)
        with pytest.raises(Unschedulable):
            cluster.schedule_service(ServiceSpec("web", 5, (1, 1024)))
        assert running_by_node(cluster) == {}
        # and the capacity freed by the rollback is still usable
        placed = cluster.schedule_service(ServiceSpec("web", 4, (1, 1024)))
        assert len(placed) == 4


class TestNodeFailure:
    def test_worker_failure_conserves_replica_multiset(self):
        cluster = make_cluster(workers=3)
        for i in range(6):
            cluster.schedule_service(ServiceSpec(f"svc{i}", 1, (1, 1024)))
        before = Counter(c.service for c in cluster.containers.values()
                         if c.state == "RUNNING")
        actions = cluster.handle_node_failure("w2")
        after = Counter(c.service for c in cluster.containers.values()
                        if c.state == "RUNNING")
        assert after == before
        assert all(a.to_node is not None for a in actions)
        assert running_by_node(cluster).get("w2", 0) == 0
        cluster.check_capacity_invariant()

    def test_reschedule_follows_spread_rule(self):
        cluster = make_cluster(workers=2)
        # m0:1 w1:1 w2:1 after three singles
        for i in range(3):
            cluster.schedule_service(ServiceSpec(f"svc{i}", 1, (1, 1024)))
        actions = cluster.handle_node_failure("w1")
        assert len(actions) == 1
        # m0 and w2 both hold 1; lowest id wins
        assert actions[0].to_node == "m0"

    def test_no_capacity_leaves_action_unplaced(self):
        cluster = make_cluster(workers=1, cpus=2, memory=4096)
        cluster.schedule_service(ServiceSpec("a", 2, (2, 4096)))  # fills both
        actions = cluster.handle_node_failure("w1")
        assert [a.to_node for a in actions] == [None]
        assert actions[0].new_container is None
        cluster.check_capacity_invariant()

    def test_dead_node_failure_is_noop(self):
        cluster = make_cluster(workers=1)
        cluster.handle_node_failure("w1")
        assert cluster.handle_node_failure("w1") == []

    def test_unknown_node_failure_raises(self):
        cluster = make_cluster()
        with pytest.raises(UnknownNode):
            cluster.handle_node_failure("w9")

    def test_master_failure_halts_control_plane(self):
        cluster = make_cluster(workers=2)
        cluster.schedule_service(ServiceSpec("svc", 3, (1, 1024)))
        with pytest.raises(MasterLost):
            cluster.handle_node_failure("m0")
        assert cluster.halted
        # master's container is LOST, not silently RUNNING on a dead node
        states = {c.node_id: c.state for c in cluster.containers.values()}
        assert states["m0"] == "LOST"
        with pytest.raises(MasterLost):
            cluster.schedule_service(ServiceSpec("later", 1, (1, 1024)))
        cluster.check_capacity_invariant()

    def test_master_restore_reopens_scheduling(self):
        cluster = make_cluster(workers=1)
        with pytest.raises(MasterLost):
            cluster.handle_node_failure("m0")
        cluster.restore_node("m0")
        assert not cluster.halted
        placed = cluster.schedule_service(ServiceSpec("svc", 1, (1, 1024)))
        assert placed[0].node_id in ("m0", "w1")

    def test_restored_worker_comes_back_empty(self):
        cluster = make_cluster(workers=2)
        cluster.schedule_service(ServiceSpec("svc", 3, (4, 4096)))
        cluster.handle_node_failure("w1")
        node = cluster.restore_node("w1")
        assert node.alive
        assert (node.reserved_cpus, node.reserved_memory) == (0, 0)
        assert running_by_node(cluster).get("w1", 0) == 0
        cluster.check_capacity_invariant()


class TestCapacityFuzz:
    def test_ledger_survives_random_churn(self):
        rng = random.Random(42)
        cluster = make_cluster(workers=4, cpus=8, memory=16384)
        live = []
        for step in range(300):
            roll = rng.random()
            if roll < 0.5:
                name = f"svc{step}"
                spec = ServiceSpec(name, rng.randint(1, 3),
                                   (rng.randint(1, 4), rng.choice([1024, 4096])))
                try:
                    cluster.schedule_service(spec)
                    live.append(name)
                except Unschedulable:
                    pass
            elif roll < 0.8 and live:
                cluster.remove_service(live.pop(rng.randrange(len(live))))
            elif roll < 0.9:
                victim = rng.choice([n for n in cluster.nodes if n != "m0"])
                if cluster.nodes[victim].alive:
                    cluster.handle_node_failure(victim)
            else:
                dead = [n for n, node in cluster.nodes.items() if not node.alive]
                if dead:
                    cluster.restore_node(rng.choice(dead))
            cluster.check_capacity_invariant()
            for container in cluster.containers.values():
                if container.state == "RUNNING":
                    assert cluster.nodes[container.node_id].alive


class TestSwarmSpawner:
    def test_spawn_places_container_and_routes(self, swarm_world):
        session_id = spawn(swarm_world, "alice")
        record = swarm_world.hub.get_session(session_id)
        assert record.state == RUNNING
        assert record.backend == ("n1", 32000)
        container = swarm_world.swarm_cluster.running_container_for(f"nb-{session_id}")
        assert container is not None and container.node_id == "n1"
        assert swarm_world.forward("GET", "/user/alice/").body == b"OK-alice"

    def test_worker_failover_relocates_running_session(self, swarm_world):
        ids = [spawn(swarm_world, u) for u in ("alice", "bob", "carol")]
        bob = swarm_world.hub.get_session(ids[1])
        assert bob.backend[0] == "n2"
        swarm_world.kill_node("n2")
        moved = swarm_world.hub.get_session(ids[1])
        assert moved.state == RUNNING
        assert moved.backend[0] in ("n1", "n3")
        assert swarm_world.forward("GET", "/user/bob/").status == 200
        events = [e["event"] for e in swarm_world.log.to_list()]
        assert "backend_moved" in events
        swarm_world.check_invariants()

    def test_failover_without_capacity_fails_session(self, tmp_path):
        from conftest import make_world
        world = make_world("swarm", tmp_path)
        world.join_node("n1", master=True, cpus=2, memory=4096)
        world.join_node("n2", cpus=2, memory=4096)
        a = spawn(world, "alice", cpus=2, memory=4096)
        b = spawn(world, "bob", cpus=2, memory=4096)
        assert world.hub.get_session(b).backend[0] == "n2"  # alice filled the master
        world.kill_node("n2")
        record = world.hub.get_session(b)
        assert record.state == FAILED
        assert "capacity" in record.failure_reason
        assert world.hub.get_session(a).state == RUNNING
        world.check_invariants()

    def test_master_kill_fails_affected_sessions(self, swarm_world):
        from hubgate.hub import SpawnOptions

        ids = [spawn(swarm_world, u) for u in ("alice", "bob")]
        assert swarm_world.hub.get_session(ids[0]).backend[0] == "n1"
        with pytest.raises(MasterLost):
            swarm_world.kill_node("n1")
        assert swarm_world.hub.get_session(ids[0]).state == FAILED
        assert swarm_world.hub.get_session(ids[0]).failure_reason == "master lost"
        # bob's notebook on n2 keeps serving; the control plane does not
        assert swarm_world.hub.get_session(ids[1]).state == RUNNING
        assert swarm_world.forward("GET", "/user/bob/").status == 200
        token = swarm_world.hub.login("dave", "pw-dave").token
        record = swarm_world.hub.start_session(token, SpawnOptions())
        swarm_world.tick(3)
        assert swarm_world.hub.get_session(record.session_id).state == FAILED

    def test_stop_releases_container_and_volume_survives(self, swarm_world):
        session_id = spawn(swarm_world, "alice")
        swarm_world.write_data("alice", "notes.txt")
        token = swarm_world.hub.login("alice", "pw-alice").token
        swarm_world.hub.stop_session(token, session_id)
        swarm_world.hub.process_pending()
        assert swarm_world.swarm_cluster.running_container_for(f"nb-{session_id}") is None
        assert not swarm_world.spawner.has_live_resources(session_id)
        # user data outlives the session
        assert swarm_world.read_data("alice", "notes.txt")
