"""Challenge-response proof of DID control.

A verifier mints a :class:`Challenge` (random nonce, target DID,
issue time, TTL); the holder answers with an :class:`AuthToken` whose
signature covers nonce + audience + timestamp.  Tokens verify against
the key the DID text itself certifies, so any component can run the
exchange without a registry lookup.  Nonce single-use is the verifier's
job — it tracks consumption; this module checks everything else.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

from .canonical import b64u_encode, canonical_bytes
from .identity import Did, Signature, sign, verify

#: Smallest nonce the protocol accepts, in bytes.
MIN_NONCE_BYTES = 16


@dataclass(frozen=True)
class Challenge:
    nonce: str  # base64url, >= MIN_NONCE_BYTES of entropy
    audience: str  # DID text expected to answer
    issued_at: float
    ttl: float

    def expired(self, now: float) -> bool:
        return now - self.issued_at > self.ttl


@dataclass(frozen=True)
class AuthToken:
    nonce: str
    holder: str  # DID text
    issued_at: float
    signature: Signature

    def to_dict(self) -> Dict[str, Any]:
        return {
            "nonce": self.nonce,
            "holder": self.holder,
            "issued_at": self.issued_at,
            "signature": self.signature.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AuthToken":
        return cls(
            nonce=data["nonce"],
            holder=data["holder"],
            issued_at=data["issued_at"],
            signature=Signature.from_dict(data["signature"]),
        )


def make_challenge(audience: str, entropy: Any, now: float, ttl: float, nonce_bytes: int = 32) -> Challenge:
    if nonce_bytes < MIN_NONCE_BYTES:
        raise ValueError("challenge nonce below protocol minimum")
    return Challenge(
        nonce=b64u_encode(entropy.randbytes(nonce_bytes)),
        audience=audience,
        issued_at=now,
        ttl=ttl,
    )


def token_signing_bytes(nonce: str, audience: str, issued_at: float) -> bytes:
    return canonical_bytes({"audience": audience, "nonce": nonce, "ts": issued_at})


def answer_challenge(challenge: Challenge, did: Did, now: float) -> AuthToken:
    if did.text != challenge.audience:
        raise ValueError("challenge addressed to a different DID")
    return AuthToken(
        nonce=challenge.nonce,
        holder=did.text,
        issued_at=now,
        signature=sign(token_signing_bytes(challenge.nonce, did.text, now), did),
    )


def check_token(token: AuthToken, challenge: Challenge, now: float) -> Tuple[bool, Optional[str]]:
    """Validate a token against its challenge.  Nonce reuse is the caller's check."""
    if token.nonce != challenge.nonce:
        return False, "nonce-mismatch"
    if token.holder != challenge.audience:
        return False, "wrong-holder"
    if challenge.expired(now):
        return False, "expired"
    if not verify(
        token_signing_bytes(token.nonce, token.holder, token.issued_at),
        token.signature,
    ):
        return False, "bad-signature"
    if token.signature.signer != token.holder:
        return False, "bad-signature"
    return True, None
