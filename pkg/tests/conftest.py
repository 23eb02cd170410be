import pytest

from hubgate.config import HubConfig
from hubgate.hub import SpawnOptions
from hubgate.world import World


def make_world(kind: str, tmp_path, **overrides) -> World:
    seed = overrides.pop("seed", 0)
    config = HubConfig(spawner_kind=kind, auth_mode="open", **overrides)
    return World(config, seed=seed, workdir=tmp_path / "world")


@pytest.fixture
def swarm_world(tmp_path):
    world = make_world("swarm", tmp_path)
    world.join_node("n1", master=True)
    world.join_node("n2")
    world.join_node("n3")
    return world


@pytest.fixture
def batch_world(tmp_path):
    world = make_world("batch", tmp_path)
    world.join_node("n1", slots=2)
    world.join_node("n2", slots=2)
    return world


@pytest.fixture
def k8s_world(tmp_path):
    world = make_world("k8s", tmp_path)
    world.join_node("n1")
    world.join_node("n2")
    world.join_node("n3")
    return world


def spawn(world: World, username: str, wait: bool = True, **options) -> str:
    token = world.hub.login(username, f"pw-{username}").token
    record = world.hub.start_session(token, SpawnOptions(**options))
    if wait:
        world.settle_session(record.session_id)
    return record.session_id


def login(world: World, username: str) -> str:
    return world.hub.login(username, f"pw-{username}").token
