"""Domain error hierarchy.

Every error a module contract can raise is a subclass of HubgateError with a
stable wire name (the class name) and an HTTP status used by the API layer.
The CLI prints the wire name verbatim, so these names are part of the
external contract and must not be renamed casually.
"""


class HubgateError(Exception):
    """Base class for all domain errors."""

    http_status = 400

    @property
    def name(self) -> str:
        return type(self).__name__


# --- authentication / authorization ---------------------------------------

class AuthFailed(HubgateError):
    http_status = 401


class Unauthorized(HubgateError):
    http_status = 401


class Forbidden(HubgateError):
    http_status = 403


# --- hub-core sessions ------------------------------------------------------

class AlreadyRunning(HubgateError):
    http_status = 409


class InvalidOptions(HubgateError):
    http_status = 422


class UnknownSession(HubgateError):
    http_status = 404


class IllegalTransition(HubgateError):
    http_status = 409


class MissingChargeIdentity(HubgateError):
    http_status = 422


# --- proxy ------------------------------------------------------------------

class DuplicatePrefix(HubgateError):
    http_status = 409


class MalformedPrefix(HubgateError):
    http_status = 422


class UnknownPrefix(HubgateError):
    http_status = 404


class NoRoute(HubgateError):
    http_status = 404


class BackendUnreachable(HubgateError):
    http_status = 502


# --- spawner-batch ------------------------------------------------------------

class WalltimeExceedsQueueMax(HubgateError):
    http_status = 422


class UnknownQueue(HubgateError):
    http_status = 422


class JobNotRunning(HubgateError):
    http_status = 409


class PortPoolExhausted(HubgateError):
    http_status = 409


class UnknownJob(HubgateError):
    http_status = 404


class AlreadyTerminal(HubgateError):
    http_status = 409


# --- spawner-swarm ------------------------------------------------------------

class DuplicateNode(HubgateError):
    http_status = 409


class NoMaster(HubgateError):
    http_status = 409


class Unschedulable(HubgateError):
    http_status = 409


class UnknownNode(HubgateError):
    http_status = 404


class MasterLost(HubgateError):
    http_status = 409


class ExportFull(HubgateError):
    http_status = 409


class QuotaExceeded(HubgateError):
    http_status = 409


class UnknownVolume(HubgateError):
    http_status = 404


# --- storage-pool ------------------------------------------------------------

class DuplicateDevice(HubgateError):
    http_status = 409


class InsufficientDevices(HubgateError):
    http_status = 409


class UnknownBlock(HubgateError):
    http_status = 404


class BlockUnavailable(HubgateError):
    http_status = 409


class ChecksumMismatch(HubgateError):
    http_status = 500


class UnknownDevice(HubgateError):
    http_status = 404


class PoolFull(HubgateError):
    http_status = 409


# --- orchestrator-k8s ---------------------------------------------------------

class InsufficientCapacity(HubgateError):
    http_status = 409


class UnsupportedForSpawner(HubgateError):
    """Operation exists only on a different spawner kind (e.g. drain on batch)."""

    http_status = 409


# --- simulator ----------------------------------------------------------------

class UnknownTarget(HubgateError):
    http_status = 404


class ScenarioParseError(HubgateError):
    http_status = 422
