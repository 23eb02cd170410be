import threading

import pytest

from hubgate.errors import ExportFull, QuotaExceeded, UnknownVolume
from hubgate.volumes import QuotaPolicy, VolumeManager, max_capacity


@pytest.fixture
def manager(tmp_path):
    return VolumeManager(tmp_path / "export",
                         QuotaPolicy(per_user_quota=100, export_total=1000))


class TestProvisioning:
    def test_ensure_is_idempotent(self, manager):
        first = manager.ensure_user_volume("alice")
        first.used = 40
        again = manager.ensure_user_volume("alice")
        assert again is first
        assert manager.volume_count() == 1

    def test_volume_directory_exists_on_disk(self, manager):
        volume = manager.ensure_user_volume("alice")
        from pathlib import Path
        assert Path(volume.path).is_dir()
        assert Path(volume.path).name == "alice"

    def test_capacity_is_total_over_quota(self):
        assert max_capacity(QuotaPolicy(5120, 512000)) == 100
        assert max_capacity(QuotaPolicy(1024, 10000)) == 9
        assert max_capacity(QuotaPolicy(10240, 10240)) == 1

    def test_export_admits_exactly_capacity_users(self, manager):
        for i in range(10):
            manager.ensure_user_volume(f"user{i:02d}")
        with pytest.raises(ExportFull):
            manager.ensure_user_volume("user10")
        # re-ensuring an existing user is still fine
        manager.ensure_user_volume("user00")
        assert manager.volume_count() == 10

    def test_unknown_volume(self, manager):
        with pytest.raises(UnknownVolume):
            manager.get_volume("ghost")
        with pytest.raises(UnknownVolume):
            manager.enforce_quota_write("ghost", 1)


class TestQuota:
    def test_exact_fill_allowed_one_more_rejected(self, manager):
        manager.ensure_user_volume("alice")
        manager.enforce_quota_write("alice", 60)
        volume = manager.enforce_quota_write("alice", 40)
        assert volume.used == 100
        with pytest.raises(QuotaExceeded):
            manager.enforce_quota_write("alice", 1)
        assert manager.get_volume("alice").used == 100  # rejected write charged nothing

    def test_zero_write_at_full_quota_is_fine(self, manager):
        manager.ensure_user_volume("alice")
        manager.enforce_quota_write("alice", 100)
        manager.enforce_quota_write("alice", 0)

    def test_negative_write_rejected(self, manager):
        manager.ensure_user_volume("alice")
        with pytest.raises(ValueError):
            manager.enforce_quota_write("alice", -1)

    def test_quotas_are_independent(self, manager):
        manager.ensure_user_volume("alice")
        manager.ensure_user_volume("bob")
        manager.enforce_quota_write("alice", 100)
        assert manager.enforce_quota_write("bob", 100).used == 100

    def test_concurrent_writers_never_oversubscribe(self, manager):
        manager.ensure_user_volume("alice")
        rejected = []

        def writer():
            for _ in range(40):
                try:
                    manager.enforce_quota_write("alice", 1)
                except QuotaExceeded:
                    rejected.append(1)

        threads = [threading.Thread(target=writer) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        volume = manager.get_volume("alice")
        assert volume.used == 100
        assert len(rejected) == 60  # 160 attempts, exactly quota admitted


class TestReport:
    def test_rows_sorted_worst_first_and_flagged(self, manager):
        for user, used in (("alice", 50), ("bob", 95), ("carol", 90)):
            manager.ensure_user_volume(user)
            manager.enforce_quota_write(user, used)
        report = manager.quota_report()
        assert [r["username"] for r in report] == ["bob", "carol", "alice"]
        assert [r["flagged"] for r in report] == [True, True, False]
        assert report[0]["percent"] == 95.0

    def test_flag_threshold_is_ninety_percent_inclusive(self, manager):
        manager.ensure_user_volume("edge")
        manager.enforce_quota_write("edge", 89)
        assert manager.quota_report()[0]["flagged"] is False
        manager.enforce_quota_write("edge", 1)
        assert manager.quota_report()[0]["flagged"] is True

    def test_ties_break_by_username(self, manager):
        for user in ("zed", "amy"):
            manager.ensure_user_volume(user)
            manager.enforce_quota_write(user, 10)
        assert [r["username"] for r in manager.quota_report()] == ["amy", "zed"]


class TestFiles:
    def test_write_read_roundtrip(self, manager):
        manager.ensure_user_volume("alice")
        manager.write_file("alice", "proj/results.csv", b"a,b\n1,2\n")
        assert manager.read_file("alice", "proj/results.csv") == b"a,b\n1,2\n"

    def test_small_files_charge_one_mib(self, manager):
        manager.ensure_user_volume("alice")
        manager.write_file("alice", "tiny.txt", b"x")
        assert manager.get_volume("alice").used == 1
        manager.write_file("alice", "big.bin", b"\0" * (3 * 1024 * 1024 + 1))
        assert manager.get_volume("alice").used == 5  # 1 + ceil(3MiB+1B)

    def test_over_quota_write_leaves_no_file(self, manager, tmp_path):
        manager.ensure_user_volume("alice")
        with pytest.raises(QuotaExceeded):
            manager.write_file("alice", "huge.bin", b"", charge_mib=101)
        assert not (tmp_path / "export" / "alice" / "huge.bin").exists()

    def test_path_escape_rejected(self, manager):
        manager.ensure_user_volume("alice")
        manager.ensure_user_volume("bob")
        manager.write_file("bob", "secret.txt", b"s3cret")
        for evil in ("../bob/secret.txt", "../../etc/passwd", "a/../../bob/x"):
            with pytest.raises(ValueError):
                manager.read_file("alice", evil)
            with pytest.raises(ValueError):
                manager.write_file("alice", evil, b"overwrite")


class TestPersistence:
    def test_ledger_survives_restart(self, tmp_path):
        policy = QuotaPolicy(per_user_quota=100, export_total=1000)
        manager = VolumeManager(tmp_path / "export", policy)
        manager.ensure_user_volume("alice")
        manager.enforce_quota_write("alice", 73)
        manager.write_file("alice", "keep.txt", b"survives", charge_mib=0)

        reborn = VolumeManager(tmp_path / "export", policy)
        volume = reborn.get_volume("alice")
        assert volume.used == 73
        assert reborn.read_file("alice", "keep.txt") == b"survives"
        # capacity accounting carries over too
        assert reborn.volume_count() == 1
