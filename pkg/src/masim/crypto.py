"""Signing scheme, key registry, and principal-id helpers.

All signatures in the simulator are HMAC-SHA-256 under per-principal keys
held in one registry.  The scheme is pluggable: anything with sign/verify
over (key, message) slots in, so an asymmetric scheme can replace the HMAC
stand-in without touching callers.
"""

from __future__ import annotations

import hashlib
import hmac

ID_LEN = 16
KEY_LEN = 32
SIG_LEN = 32


class UnknownKey(KeyError):
    pass


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def principal_id(name: str | bytes) -> bytes:
    """Canonical 16-byte id for a scenario-level name (UTF-8, zero padded)."""
    if isinstance(name, bytes):
        raw = name
    else:
        raw = name.encode("utf-8")
    if len(raw) > ID_LEN:
        raise ValueError(f"id {name!r} longer than {ID_LEN} bytes")
    return raw.ljust(ID_LEN, b"\x00")


def derive_key(kind: str, ident: bytes) -> bytes:
    """Deterministic default key for a principal; scenarios may override."""
    return sha256(b"MAKEY:" + kind.encode("ascii") + b":" + ident)


class HmacScheme:
    def sign(self, key: bytes, message: bytes) -> bytes:
        return hmac.new(key, message, hashlib.sha256).digest()

    def verify(self, key: bytes, message: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(key, message), signature)


class KeyRegistry:
    """Keys for platforms and owners plus the shared payload-sealing key."""

    def __init__(self, scheme: HmacScheme | None = None):
        self.scheme = scheme or HmacScheme()
        self.platform_keys: dict[bytes, bytes] = {}
        self.owner_keys: dict[bytes, bytes] = {}
        self.sealing_key: bytes = derive_key("seal", b"default")

    def register_platform(self, platform_id: bytes, key: bytes | None = None) -> bytes:
        k = key or derive_key("platform", platform_id)
        self.platform_keys[platform_id] = k
        return k

    def register_owner(self, owner_id: bytes, key: bytes | None = None) -> bytes:
        k = key or derive_key("owner", owner_id)
        self.owner_keys[owner_id] = k
        return k

    def platform_key(self, platform_id: bytes) -> bytes:
        try:
            return self.platform_keys[platform_id]
        except KeyError:
            raise UnknownKey(f"no key for platform {platform_id.hex()}") from None

    def owner_key(self, owner_id: bytes) -> bytes:
        try:
            return self.owner_keys[owner_id]
        except KeyError:
            raise UnknownKey(f"no key for owner {owner_id.hex()}") from None

    def sign_as_platform(self, platform_id: bytes, message: bytes) -> bytes:
        return self.scheme.sign(self.platform_key(platform_id), message)

    def verify_platform(self, platform_id: bytes, message: bytes, signature: bytes) -> bool:
        return self.scheme.verify(self.platform_key(platform_id), message, signature)

    def sign_as_owner(self, owner_id: bytes, message: bytes) -> bytes:
        return self.scheme.sign(self.owner_key(owner_id), message)

    def verify_owner(self, owner_id: bytes, message: bytes, signature: bytes) -> bool:
        return self.scheme.verify(self.owner_key(owner_id), message, signature)


class DefaultKeyRegistry(KeyRegistry):
    """Registry that falls back to the derived default key for unknown
    principals; matches runs that never set explicit keys."""

    def platform_key(self, platform_id: bytes) -> bytes:
        return self.platform_keys.get(platform_id) or derive_key("platform", platform_id)

    def owner_key(self, owner_id: bytes) -> bytes:
        return self.owner_keys.get(owner_id) or derive_key("owner", owner_id)
