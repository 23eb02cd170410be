"""Replicated block pool federating per-node storage devices.

Each node contributes one device; payloads are written as fixed 4 MiB
blocks to the k distinct alive devices with most free space (lowest node
id on ties). Reads come from the lowest-id alive replica and are checksum
verified. Losing a device triggers re-replication onto the remaining
devices; the pool is HEALTHY exactly when every block holds k live
replicas. Claims are ordered block lists sized at ceil(size / 4 MiB),
allocated all-or-nothing.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .errors import (
    BlockUnavailable,
    ChecksumMismatch,
    DuplicateDevice,
    InsufficientDevices,
    PoolFull,
    UnknownBlock,
    UnknownDevice,
    UnknownVolume,
)

BLOCK_SIZE_MIB = 4
BLOCK_SIZE_BYTES = BLOCK_SIZE_MIB * 1024 * 1024

HEALTHY = "HEALTHY"
DEGRADED = "DEGRADED"


def payload_checksum(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


class BlockStore(Protocol):
    """Physical payload storage, one namespace per device (node id)."""

    def put(self, node_id: str, block_id: str, payload: bytes) -> None: ...
    def get(self, node_id: str, block_id: str) -> bytes | None: ...
    def delete(self, node_id: str, block_id: str) -> None: ...
    def drop_device(self, node_id: str) -> None: ...


class MemoryBlockStore:
    """In-process store for large simulations where disk IO would dominate."""

    def __init__(self) -> None:
        self._blocks: dict[tuple[str, str], bytes] = {}

    def put(self, node_id: str, block_id: str, payload: bytes) -> None:
        self._blocks[(node_id, block_id)] = payload

    def get(self, node_id: str, block_id: str) -> bytes | None:
        return self._blocks.get((node_id, block_id))

    def delete(self, node_id: str, block_id: str) -> None:
        self._blocks.pop((node_id, block_id), None)

    def drop_device(self, node_id: str) -> None:
        for key in [k for k in self._blocks if k[0] == node_id]:
            del self._blocks[key]


class DirectoryBlockStore:
    """One directory per device, one file per block; survives process restart."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, node_id: str, block_id: str) -> Path:
        return self.root / node_id / block_id

    def put(self, node_id: str, block_id: str, payload: bytes) -> None:
        path = self._path(node_id, block_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)

    def get(self, node_id: str, block_id: str) -> bytes | None:
        path = self._path(node_id, block_id)
        if not path.is_file():
            return None
        return path.read_bytes()

    def delete(self, node_id: str, block_id: str) -> None:
        path = self._path(node_id, block_id)
        if path.is_file():
            path.unlink()

    def drop_device(self, node_id: str) -> None:
        device_dir = self.root / node_id
        if not device_dir.is_dir():
            return
        for entry in sorted(device_dir.iterdir()):
            entry.unlink()
        device_dir.rmdir()


@dataclass
class Device:
    node_id: str
    capacity: int            # block slots
    used: int = 0
    alive: bool = True

    @property
    def free(self) -> int:
        return self.capacity - self.used if self.alive else 0


@dataclass
class BlockPlacement:
    block_id: str
    replicas: list[str]      # node ids, kept sorted
    payload_hash: str
    size: int                # payload bytes, <= BLOCK_SIZE_BYTES


@dataclass
class VolumeClaim:
    claim_id: str
    owner: str
    size_mib: int
    block_ids: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class RebalanceReport:
    moved_blocks: int
    health: str


class StoragePool:
    """Placement metadata is single-writer; payload reads go straight to the store."""

    def __init__(self, store: BlockStore, k: int = 2) -> None:
        if k < 1:
            raise ValueError("replication factor must be >= 1")
        self.store = store
        self.k = k
        self.devices: dict[str, Device] = {}
        self.placements: dict[str, BlockPlacement] = {}
        self.claims: dict[str, VolumeClaim] = {}
        self._next_block = 1
        self._next_claim = 1

    # --- devices -------------------------------------------------------------

    def add_device(self, node_id: str, capacity: int) -> Device:
        if node_id in self.devices:
            raise DuplicateDevice(node_id)
        if capacity < 1:
            raise ValueError("device capacity must be >= 1 block")
        device = Device(node_id=node_id, capacity=capacity)
        self.devices[node_id] = device
        # a fresh device is immediately a re-replication target
        self.rebalance()
        return device

    def _alive_devices(self) -> list[Device]:
        return [d for d in self.devices.values() if d.alive]

    # --- blocks -----------------------------------------------------------------

    def _pick_targets(self, count: int, exclude: set[str]) -> list[Device]:
        candidates = [d for d in self._alive_devices()
                      if d.free > 0 and d.node_id not in exclude]
        candidates.sort(key=lambda d: (-d.free, d.node_id))
        return candidates[:count]

    def place_block(self, payload: bytes) -> BlockPlacement:
        if len(payload) > BLOCK_SIZE_BYTES:
            raise ValueError("payload exceeds the 4 MiB block size")
        targets = self._pick_targets(self.k, exclude=set())
        if not targets:
            raise InsufficientDevices("no alive device with free space")
        block_id = f"b{self._next_block}"
        self._next_block += 1
        digest = payload_checksum(payload)
        for device in targets:
            self.store.put(device.node_id, block_id, payload)
            device.used += 1
        placement = BlockPlacement(
            block_id=block_id,
            replicas=sorted(d.node_id for d in targets),
            payload_hash=digest,
            size=len(payload),
        )
        self.placements[block_id] = placement
        return placement

    def read_block(self, block_id: str) -> bytes:
        placement = self.placements.get(block_id)
        if placement is None:
            raise UnknownBlock(block_id)
        alive = [n for n in placement.replicas
                 if n in self.devices and self.devices[n].alive]
        if not alive:
            raise BlockUnavailable(block_id)
        payload = self.store.get(min(alive), block_id)
        if payload is None:
            raise BlockUnavailable(f"{block_id}: replica payload missing")
        if payload_checksum(payload) != placement.payload_hash:
            raise ChecksumMismatch(block_id)
        return payload

    def delete_block(self, block_id: str) -> None:
        placement = self.placements.pop(block_id, None)
        if placement is None:
            raise UnknownBlock(block_id)
        for node_id in placement.replicas:
            device = self.devices.get(node_id)
            if device is not None and device.alive:
                self.store.delete(node_id, block_id)
                device.used -= 1

    # --- failure and repair ----------------------------------------------------------

    def handle_device_loss(self, node_id: str) -> RebalanceReport:
        device = self.devices.get(node_id)
        if device is None:
            raise UnknownDevice(node_id)
        if not device.alive:
            return RebalanceReport(moved_blocks=0, health=self.health)
        device.alive = False
        device.used = 0
        self.store.drop_device(node_id)
        for placement in self.placements.values():
            if node_id in placement.replicas:
                placement.replicas.remove(node_id)
        return self.rebalance()

    def restore_device(self, node_id: str) -> Device:
        """Device returns empty (its data was re-replicated away on loss)."""
        device = self.devices.get(node_id)
        if device is None:
            raise UnknownDevice(node_id)
        device.alive = True
        device.used = 0
        return device

    def rebalance(self) -> RebalanceReport:
        """Give every under-replicated block new replicas; no-op when HEALTHY."""
        moved = 0
        for block_id in sorted(self.placements, key=lambda b: int(b[1:])):
            placement = self.placements[block_id]
            while len(placement.replicas) < self.k:
                targets = self._pick_targets(1, exclude=set(placement.replicas))
                if not targets:
                    break
                if not placement.replicas:
                    break  # no surviving source: declared lost, nothing to copy
                source = min(placement.replicas)
                payload = self.store.get(source, block_id)
                if payload is None or payload_checksum(payload) != placement.payload_hash:
                    raise ChecksumMismatch(f"{block_id}: bad source replica on {source}")
                target = targets[0]
                self.store.put(target.node_id, block_id, payload)
                target.used += 1
                placement.replicas = sorted(placement.replicas + [target.node_id])
                moved += 1
        return RebalanceReport(moved_blocks=moved, health=self.health)

    @property
    def health(self) -> str:
        for placement in self.placements.values():
            if len(placement.replicas) < self.k:
                return DEGRADED
        return HEALTHY

    def lost_blocks(self) -> list[str]:
        return sorted((b for b, p in self.placements.items() if not p.replicas),
                      key=lambda b: int(b[1:]))

    # --- claims -----------------------------------------------------------------

    def claim_volume(self, size_mib: int, owner: str,
                     payloads: list[bytes] | None = None) -> VolumeClaim:
        if size_mib < 1:
            raise ValueError("claim size must be >= 1 MiB")
        nblocks = math.ceil(size_mib / BLOCK_SIZE_MIB)
        replicas_per_block = min(self.k, len(self._alive_devices()))
        free = sum(d.free for d in self._alive_devices())
        if free < replicas_per_block * nblocks or replicas_per_block == 0:
            raise PoolFull(
                f"claim needs {replicas_per_block * nblocks} free block slots, "
                f"pool has {free}")
        claim_id = f"claim{self._next_claim}"
        self._next_claim += 1
        if payloads is None:
            payloads = [f"{claim_id}/{owner}/block{i}".encode() for i in range(nblocks)]
        if len(payloads) != nblocks:
            raise ValueError(f"claim of {size_mib} MiB needs {nblocks} payloads")
        placed: list[BlockPlacement] = []
        try:
            for payload in payloads:
                placed.append(self.place_block(payload))
        except (InsufficientDevices, PoolFull):
            for placement in placed:  # all-or-nothing
                self.delete_block(placement.block_id)
            raise
        claim = VolumeClaim(
            claim_id=claim_id, owner=owner, size_mib=size_mib,
            block_ids=[p.block_id for p in placed])
        self.claims[claim_id] = claim
        return claim

    def delete_claim(self, claim_id: str) -> None:
        claim = self.claims.pop(claim_id, None)
        if claim is None:
            raise UnknownVolume(claim_id)
        for block_id in claim.block_ids:
            self.delete_block(block_id)

    def claim_checksums(self, claim_id: str) -> list[str]:
        claim = self.claims.get(claim_id)
        if claim is None:
            raise UnknownVolume(claim_id)
        return [self.placements[b].payload_hash for b in claim.block_ids]

    def read_claim(self, claim_id: str) -> list[bytes]:
        claim = self.claims.get(claim_id)
        if claim is None:
            raise UnknownVolume(claim_id)
        return [self.read_block(b) for b in claim.block_ids]

    # --- introspection ---------------------------------------------------------------

    def verify_all(self) -> int:
        """Read every block back, checksum-verified; returns blocks checked."""
        checked = 0
        for block_id in sorted(self.placements, key=lambda b: int(b[1:])):
            self.read_block(block_id)
            checked += 1
        return checked

    def check_accounting(self) -> None:
        by_device: dict[str, int] = {d: 0 for d in self.devices}
        for placement in self.placements.values():
            assert len(set(placement.replicas)) == len(placement.replicas), \
                f"{placement.block_id}: duplicate replica"
            for node_id in placement.replicas:
                by_device[node_id] += 1
        for node_id, device in self.devices.items():
            expected = by_device[node_id] if device.alive else 0
            assert device.used == expected, \
                f"{node_id}: used={device.used} expected={expected}"
            assert 0 <= device.used <= device.capacity, node_id

    def stats(self) -> dict:
        return {
            "k": self.k,
            "health": self.health,
            "devices": {
                d.node_id: {"capacity": d.capacity, "used": d.used, "alive": d.alive}
                for d in sorted(self.devices.values(), key=lambda d: d.node_id)
            },
            "blocks": len(self.placements),
            "claims": len(self.claims),
            "free_blocks": sum(d.free for d in self._alive_devices()),
        }

    # --- manifest ---------------------------------------------------------------------

    def to_manifest(self) -> dict:
        return {
            "k": self.k,
            "next_block": self._next_block,
            "next_claim": self._next_claim,
            "devices": [
                {"node_id": d.node_id, "capacity": d.capacity,
                 "used": d.used, "alive": d.alive}
                for d in sorted(self.devices.values(), key=lambda d: d.node_id)
            ],
            "placements": [
                {"block_id": p.block_id, "replicas": p.replicas,
                 "payload_hash": p.payload_hash, "size": p.size}
                for p in sorted(self.placements.values(), key=lambda p: int(p.block_id[1:]))
            ],
            "claims": [
                {"claim_id": c.claim_id, "owner": c.owner,
                 "size_mib": c.size_mib, "block_ids": c.block_ids}
                for c in sorted(self.claims.values(), key=lambda c: int(c.claim_id[5:]))
            ],
        }

    def save_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_manifest(), indent=2, sort_keys=True))

    @classmethod
    def from_manifest(cls, manifest: dict, store: BlockStore) -> "StoragePool":
        pool = cls(store=store, k=manifest["k"])
        pool._next_block = manifest["next_block"]
        pool._next_claim = manifest["next_claim"]
        for entry in manifest["devices"]:
            pool.devices[entry["node_id"]] = Device(**entry)
        for entry in manifest["placements"]:
            pool.placements[entry["block_id"]] = BlockPlacement(**entry)
        for entry in manifest["claims"]:
            pool.claims[entry["claim_id"]] = VolumeClaim(**entry)
        return pool

    @classmethod
    def load_manifest(cls, path: str | Path, store: BlockStore) -> "StoragePool":
        return cls.from_manifest(json.loads(Path(path).read_text()), store)
