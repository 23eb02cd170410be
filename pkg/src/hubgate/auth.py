"""Users, tokens and the pluggable stub authenticators.

Two credential sources: a static username->secret map, and an OAuth-style
stub that exchanges pre-registered callback codes for identities. Real
identity federation is out of scope; both are deliberately small.

Tokens are 128-bit hex strings drawn from the world's seeded RNG so that
scenario runs stay reproducible. Lookup is exact-match, which is what makes
the one-bit-perturbation property hold trivially.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass

from .clock import LogicalClock
from .errors import AuthFailed, MissingChargeIdentity, Unauthorized

USERNAME_RE = re.compile(r"^[a-z0-9_-]{1,32}$")

DEFAULT_TOKEN_TTL_S = 8 * 3600  # logical seconds; renewal is re-authentication


@dataclass
class UserAccount:
    username: str
    auth_source: str = "STATIC"  # STATIC | OAUTH_STUB
    charge_identity: str | None = None

    def __post_init__(self) -> None:
        if not USERNAME_RE.match(self.username):
            raise ValueError(f"invalid username: {self.username!r}")


@dataclass
class AuthToken:
    token: str
    username: str
    issued_at: int
    ttl: int

    def expires_at(self) -> int:
        return self.issued_at + self.ttl


@dataclass
class ChargeAccountPolicy:
    mode: str  # COMMUNITY | DELEGATED
    community_account: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("COMMUNITY", "DELEGATED"):
            raise ValueError(f"invalid charge mode: {self.mode!r}")
        if self.mode == "COMMUNITY" and not self.community_account:
            raise ValueError("COMMUNITY policy requires community_account")


def select_charge_account(policy: ChargeAccountPolicy, user: UserAccount) -> str:
    """Pick the scheduler account a user's jobs are billed to."""
    if policy.mode == "COMMUNITY":
        assert policy.community_account
        return policy.community_account
    if not user.charge_identity:
        raise MissingChargeIdentity(f"user {user.username} has no charge identity")
    return user.charge_identity


class Authenticator:
    """Credential verification plus the user registry.

    `allow_any` is the workshop/testing convenience mode (any fresh user
    authenticates with secret "pw-<username>"); off by default.
    """

    def __init__(
        self,
        static_users: dict[str, str] | None = None,
        oauth_codes: dict[str, str] | None = None,
        charge_identities: dict[str, str] | None = None,
        allow_any: bool = False,
    ) -> None:
        self._static = dict(static_users or {})
        self._codes = dict(oauth_codes or {})
        self._identities = dict(charge_identities or {})
        self._allow_any = allow_any
        self._accounts: dict[str, UserAccount] = {}

    def _account_for(self, username: str, source: str) -> UserAccount:
        account = self._accounts.get(username)
        if account is None:
            account = UserAccount(
                username=username,
                auth_source=source,
                charge_identity=self._identities.get(username),
            )
            self._accounts[username] = account
        return account

    def check_password(self, username: str, secret: str) -> UserAccount:
        expected = self._static.get(username)
        if expected is not None:
            if expected != secret:
                raise AuthFailed(f"wrong secret for {username}")
            return self._account_for(username, "STATIC")
        if self._allow_any and USERNAME_RE.match(username) and secret == f"pw-{username}":
            return self._account_for(username, "STATIC")
        raise AuthFailed(f"unknown user {username}")

    def check_oauth_code(self, code: str) -> UserAccount:
        username = self._codes.get(code)
        if username is None:
            raise AuthFailed("unknown oauth code")
        return self._account_for(username, "OAUTH_STUB")

    def get_user(self, username: str) -> UserAccount | None:
        return self._accounts.get(username)


class TokenStore:
    """Issued bearer tokens with logical-time TTL. Unbounded by contract."""

    def __init__(self, clock: LogicalClock, rng: random.Random, ttl: int = DEFAULT_TOKEN_TTL_S) -> None:
        self._clock = clock
        self._rng = rng
        self._ttl = ttl
        self._tokens: dict[str, AuthToken] = {}

    def issue(self, username: str) -> AuthToken:
        value = f"{self._rng.getrandbits(128):032x}"
        token = AuthToken(token=value, username=username, issued_at=self._clock.now, ttl=self._ttl)
        self._tokens[value] = token
        return token

    def verify(self, token: str) -> str:
        """Return the username a live token is bound to; expired never passes."""
        record = self._tokens.get(token)
        if record is None:
            raise Unauthorized("unknown token")
        if self._clock.now >= record.expires_at():
            raise Unauthorized("token expired")
        return record.username
