"""Users, roles, tokens, and access decisions across the four
authentication surfaces (framework, image, storage, network/remote)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

from .errors import BadCredential, NotFound, UnknownUser

SURFACES = ("framework", "image", "storage", "network_remote")


class Role(str, Enum):
    ADMIN = "admin"
    USER = "user"


def hash_credential(credential: str, salt: str) -> str:
    return hashlib.sha256(f"{salt}:{credential}".encode()).hexdigest()


@dataclass
class User:
    id: str
    username: str
    role: Role
    credential_salt: str
    credential_hash: str
    project_ids: set[str] = field(default_factory=set)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "username": self.username,
            "role": self.role.value,
            "credential_salt": self.credential_salt,
            "credential_hash": self.credential_hash,
            "project_ids": sorted(self.project_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "User":
        d = dict(d)
        d["role"] = Role(d["role"])
        d["project_ids"] = set(d["project_ids"])
        return cls(**d)


@dataclass
class AuthToken:
    token: str
    user_id: str
    surfaces: tuple[str, ...]
    issued_at: float
    expires_at: float

    def __post_init__(self):
        if not self.surfaces:
            raise ValueError("token must grant at least one surface")
        if self.expires_at <= self.issued_at:
            raise ValueError("expires_at must be after issued_at")

    def to_dict(self) -> dict:
        return {
            "token": self.token,
            "user_id": self.user_id,
            "surfaces": list(self.surfaces),
            "issued_at": self.issued_at,
            "expires_at": self.expires_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuthToken":
        d = dict(d)
        d["surfaces"] = tuple(d["surfaces"])
        return cls(**d)


class AuthService:
    def __init__(self, token_ttl_s: float = 8 * 3600.0):
        self.token_ttl_s = token_ttl_s
        self.users: dict[str, User] = {}
        self.tokens: dict[str, AuthToken] = {}

    def add_user(self, user_id: str, username: str, credential: str, role: Role,
                 project_ids: set[str] | None = None) -> User:
        salt = hashlib.sha256(f"salt:{user_id}".encode()).hexdigest()[:16]
        user = User(
            id=user_id,
            username=username,
            role=role,
            credential_salt=salt,
            credential_hash=hash_credential(credential, salt),
            project_ids=set(project_ids or ()),
        )
        self.users[user_id] = user
        return user

    def find_user(self, username: str) -> User:
        for user in self.users.values():
            if user.username == username:
                return user
        raise UnknownUser(f"no user {username!r}")

    def get_user(self, user_id: str) -> User:
        try:
            return self.users[user_id]
        except KeyError:
            raise UnknownUser(f"no user id {user_id}")

    def authenticate(self, username: str, credential: str,
                     requested_surfaces: list[str], now: float, token_value: str) -> AuthToken:
        user = self.find_user(username)
        if hash_credential(credential, user.credential_salt) != user.credential_hash:
            raise BadCredential(f"bad credential for {username!r}")
        surfaces = tuple(s for s in SURFACES if s in requested_surfaces)
        if not surfaces:
            raise ValueError("no valid surface requested")
        token = AuthToken(
            token=token_value,
            user_id=user.id,
            surfaces=surfaces,
            issued_at=now,
            expires_at=now + self.token_ttl_s,
        )
        self.tokens[token.token] = token
        return token

    def resolve(self, token_value: str) -> AuthToken | None:
        return self.tokens.get(token_value)

    def check_access(
        self,
        token: AuthToken,
        surface: str,
        action: str,
        now: float,
        resource_project: str | None = None,
        resource_owner_user: str | None = None,
    ) -> str:
        """Decide allow/deny.

        Admins may do anything on a granted, unexpired surface.  Users may
        view everything, and modify only resources they own inside their
        own projects.
        """
        if now >= token.expires_at or surface not in token.surfaces:
            return "deny"
        user = self.users.get(token.user_id)
        if user is None:
            return "deny"
        if user.role == Role.ADMIN:
            return "allow"
        if action == "view":
            return "allow"
        if action == "modify":
            if resource_project is not None and resource_project not in user.project_ids:
                return "deny"
            if resource_owner_user is not None and resource_owner_user != user.id:
                return "deny"
            if resource_project is None and resource_owner_user is None:
                # creating farm-level/admin resources stays admin-only
                return "deny"
            return "allow"
        return "deny"

    def state_dict(self) -> dict:
        return {
            "token_ttl_s": self.token_ttl_s,
            "users": {k: v.to_dict() for k, v in sorted(self.users.items())},
            "tokens": {k: v.to_dict() for k, v in sorted(self.tokens.items())},
        }

    def load_state(self, state: dict) -> None:
        self.token_ttl_s = state["token_ttl_s"]
        self.users = {k: User.from_dict(v) for k, v in state["users"].items()}
        self.tokens = {k: AuthToken.from_dict(v) for k, v in state["tokens"].items()}
