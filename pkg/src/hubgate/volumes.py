"""Per-user volumes on a shared export with directory quotas.

Each user gets one directory under the export root, attachable from any
node. Quota accounting is a logical byte ledger (all notebooks run under
one unix account, so per-directory quotas are the only enforcement point);
the check-then-commit on writes is atomic under a lock. The ledger is
persisted as a JSON sidecar at the export root, and file contents are real
files so failover survival is observable on disk.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import ExportFull, QuotaExceeded, UnknownVolume

LEDGER_FILENAME = "quota_ledger.json"
DEFAULT_WARN_THRESHOLD = 0.9


@dataclass
class QuotaPolicy:
    per_user_quota: int   # MiB
    export_total: int     # MiB

    def __post_init__(self) -> None:
        if self.per_user_quota <= 0:
            raise ValueError("per_user_quota must be positive")
        if self.export_total < self.per_user_quota:
            raise ValueError("export_total must cover at least one user quota")


@dataclass
class UserVolume:
    username: str
    path: str     # export-relative, one directory per user
    quota: int    # MiB
    used: int     # MiB

    @property
    def percent(self) -> float:
        return round(100.0 * self.used / self.quota, 1) if self.quota else 0.0


def max_capacity(policy: QuotaPolicy) -> int:
    """How many users the export can hold before quotas oversubscribe it."""
    return policy.export_total // policy.per_user_quota


class VolumeManager:
    """Volume ledger over a real export directory. Single-writer, locked."""

    def __init__(self, export_root: Path, policy: QuotaPolicy,
                 warn_threshold: float = DEFAULT_WARN_THRESHOLD) -> None:
        self.export_root = Path(export_root)
        self.export_root.mkdir(parents=True, exist_ok=True)
        self.policy = policy
        self.warn_threshold = warn_threshold
        self._volumes: dict[str, UserVolume] = {}
        self._lock = threading.Lock()
        self._load_ledger()

    # --- volumes ---------------------------------------------------------------

    def ensure_user_volume(self, username: str) -> UserVolume:
        """Create-or-return, idempotent; creation is bounded by export size."""
        with self._lock:
            volume = self._volumes.get(username)
            if volume is not None:
                return volume
            committed = sum(v.quota for v in self._volumes.values())
            if committed + self.policy.per_user_quota > self.policy.export_total:
                raise ExportFull(
                    f"{len(self._volumes)} volumes already commit {committed} MiB "
                    f"of {self.policy.export_total} MiB")
            volume = UserVolume(
                username=username,
                path=str(self.export_root / username),
                quota=self.policy.per_user_quota,
                used=0,
            )
            self._volumes[username] = volume
            (self.export_root / username).mkdir(exist_ok=True)
            self._save_ledger()
            return volume

    def get_volume(self, username: str) -> UserVolume:
        volume = self._volumes.get(username)
        if volume is None:
            raise UnknownVolume(username)
        return volume

    def volume_count(self) -> int:
        return len(self._volumes)

    # --- quota ---------------------------------------------------------------------

    def enforce_quota_write(self, username: str, mib: int) -> UserVolume:
        """Charge a write against the quota; over-quota writes change nothing."""
        if mib < 0:
            raise ValueError("write size cannot be negative")
        with self._lock:
            volume = self._volumes.get(username)
            if volume is None:
                raise UnknownVolume(username)
            if volume.used + mib > volume.quota:
                raise QuotaExceeded(
                    f"{username}: {volume.used}+{mib} MiB exceeds quota {volume.quota} MiB")
            volume.used += mib
            self._save_ledger()
            return volume

    def quota_report(self) -> list[dict]:
        """One row per volume, worst first; rows at/over the warn mark flagged."""
        rows = []
        for volume in self._volumes.values():
            rows.append({
                "username": volume.username,
                "used": volume.used,
                "quota": volume.quota,
                "percent": volume.percent,
                "flagged": volume.used >= volume.quota * self.warn_threshold,
            })
        rows.sort(key=lambda r: (-r["percent"], r["username"]))
        return rows

    # --- file payloads ------------------------------------------------------------

    def write_file(self, username: str, relpath: str, content: bytes,
                   charge_mib: int | None = None) -> Path:
        """Write a real file in the user's directory, charging the ledger."""
        if charge_mib is None:
            charge_mib = max(1, math.ceil(len(content) / (1024 * 1024)))
        self.enforce_quota_write(username, charge_mib)
        target = self._resolve(username, relpath)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(content)
        return target

    def read_file(self, username: str, relpath: str) -> bytes:
        if username not in self._volumes:
            raise UnknownVolume(username)
        return self._resolve(username, relpath).read_bytes()

    def _resolve(self, username: str, relpath: str) -> Path:
        target = (self.export_root / username / relpath).resolve()
        root = (self.export_root / username).resolve()
        if not target.is_relative_to(root):
            raise ValueError(f"path escapes volume: {relpath!r}")
        return target

    # --- ledger persistence ----------------------------------------------------------

    def _ledger_path(self) -> Path:
        return self.export_root / LEDGER_FILENAME

    def _save_ledger(self) -> None:
        payload = {
            "per_user_quota": self.policy.per_user_quota,
            "export_total": self.policy.export_total,
            "volumes": {
                name: {"used": v.used, "quota": v.quota}
                for name, v in sorted(self._volumes.items())
            },
        }
        self._ledger_path().write_text(json.dumps(payload, indent=2, sort_keys=True))

    def _load_ledger(self) -> None:
        path = self._ledger_path()
        if not path.exists():
            return
        payload = json.loads(path.read_text())
        for name, entry in payload.get("volumes", {}).items():
            self._volumes[name] = UserVolume(
                username=name, path=str(self.export_root / name),
                quota=entry["quota"], used=entry["used"])
