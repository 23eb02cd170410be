import random

import pytest

from hubgate.auth import (
    Authenticator,
    ChargeAccountPolicy,
    TokenStore,
    UserAccount,
    select_charge_account,
)
from hubgate.clock import LogicalClock
from hubgate.errors import AuthFailed, MissingChargeIdentity, Unauthorized


def make_tokens(ttl: int = 8 * 3600) -> tuple[LogicalClock, TokenStore]:
    clock = LogicalClock()
    return clock, TokenStore(clock, random.Random(42), ttl=ttl)


class TestAuthenticator:
    def test_static_password_roundtrip(self):
        auth = Authenticator(static_users={"alice": "hunter2"})
        account = auth.check_password("alice", "hunter2")
        assert account.username == "alice"
        assert account.auth_source == "STATIC"

    def test_wrong_password_rejected(self):
        auth = Authenticator(static_users={"alice": "hunter2"})
        with pytest.raises(AuthFailed):
            auth.check_password("alice", "wrong")

    def test_unknown_user_rejected(self):
        auth = Authenticator(static_users={"alice": "hunter2"})
        with pytest.raises(AuthFailed):
            auth.check_password("mallory", "hunter2")

    def test_oauth_code_maps_to_user(self):
        auth = Authenticator(oauth_codes={"code-1": "bob"})
        assert auth.check_oauth_code("code-1").username == "bob"
        with pytest.raises(AuthFailed):
            auth.check_oauth_code("bogus")

    def test_open_mode_mints_users_with_conventional_secret(self):
        auth = Authenticator(allow_any=True)
        assert auth.check_password("walkin", "pw-walkin").username == "walkin"
        with pytest.raises(AuthFailed):
            auth.check_password("walkin", "nope")

    def test_bad_usernames_rejected(self):
        for name in ("", "UPPER", "has space", "x" * 33, "semi;colon"):
            with pytest.raises((AuthFailed, ValueError)):
                Authenticator(static_users={name: "pw"}).check_password(name, "pw")


class TestTokens:
    def test_verify_roundtrip(self):
        _, tokens = make_tokens()
        issued = tokens.issue("alice")
        assert tokens.verify(issued.token) == "alice"

    def test_single_bit_perturbation_fails(self):
        # verify() must be exact-match: flipping any nibble of the token
        # yields Unauthorized, never another user's identity
        _, tokens = make_tokens()
        token = tokens.issue("alice").token
        for i in range(len(token)):
            flipped = token[:i] + ("0" if token[i] != "0" else "1") + token[i + 1:]
            with pytest.raises(Unauthorized):
                tokens.verify(flipped)

    def test_expiry_at_ttl(self):
        clock, tokens = make_tokens(ttl=100)
        token = tokens.issue("alice").token
        clock.advance(99)
        assert tokens.verify(token) == "alice"
        clock.advance(1)
        with pytest.raises(Unauthorized):
            tokens.verify(token)

    def test_tokens_deterministic_for_seed(self):
        _, a = make_tokens()
        _, b = make_tokens()
        assert a.issue("u").token == b.issue("u").token


class TestChargeAccounts:
    def test_community_uses_shared_account(self):
        policy = ChargeAccountPolicy(mode="COMMUNITY", community_account="gw-proj1")
        alice = UserAccount(username="alice")
        assert select_charge_account(policy, alice) == "gw-proj1"

    def test_delegated_uses_user_identity(self):
        policy = ChargeAccountPolicy(mode="DELEGATED", community_account=None)
        alice = UserAccount(username="alice", charge_identity="alice-xsede")
        assert select_charge_account(policy, alice) == "alice-xsede"

    def test_delegated_without_identity_fails(self):
        policy = ChargeAccountPolicy(mode="DELEGATED", community_account=None)
        carol = UserAccount(username="carol")
        with pytest.raises(MissingChargeIdentity):
            select_charge_account(policy, carol)

    def test_community_mode_requires_account(self):
        with pytest.raises(ValueError):
            ChargeAccountPolicy(mode="COMMUNITY", community_account=None)
