"""Enrollment authority: identity proofing and verifiable credentials.

The authority checks enrollment evidence (pluggable predicate — this is
a protocol artifact, not a KYC product), stores the *only* copy of the
subject's real-identity material, and hands back a signed credential
binding the subject's public DID to a successful check.  Everyone else
verifies credentials offline against the authority's key.

Deanonymization is deliberately narrow: `investigate` answers only under
a warrant token, and nothing the authority returns at enrollment time
contains the identity material it archived.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional

from .canonical import canonical_bytes
from .identity import Did, PUBLIC, Signature, as_entropy, create_did, digest, sign, verify


class EnrollmentError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class VerifiableCredential:
    subject: str  # DID text
    issuer: str  # authority DID text
    claims: Dict[str, Any]
    issued_at: float
    signature: Dict[str, str]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "subject": self.subject,
            "issuer": self.issuer,
            "claims": self.claims,
            "issued_at": self.issued_at,
            "signature": self.signature,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "VerifiableCredential":
        return cls(
            subject=data["subject"],
            issuer=data["issuer"],
            claims=dict(data["claims"]),
            issued_at=data["issued_at"],
            signature=dict(data["signature"]),
        )


def credential_payload(subject: str, issuer: str, claims: Dict[str, Any], issued_at: float) -> bytes:
    return canonical_bytes(
        {"claims": claims, "issued_at": issued_at, "issuer": issuer, "subject": subject}
    )


def verify_credential(
    credential: VerifiableCredential,
    authority_key: bytes,
    now: Optional[float] = None,
) -> bool:
    """Pure check: signature over canonical payload + claim expiry."""
    try:
        signature = Signature.from_dict(credential.signature)
    except (KeyError, TypeError, ValueError):
        return False
    if signature.signer != credential.issuer:
        return False
    payload = credential_payload(
        credential.subject, credential.issuer, credential.claims, credential.issued_at
    )
    if not verify(payload, signature, authority_key):
        return False
    expires_at = credential.claims.get("expires_at")
    if expires_at is not None:
        if now is None:
            now = time.time()
        if now > expires_at:
            return False
    return True


@dataclass
class IdentityRecord:
    subject: str
    real_identity: str  # digest of the enrollment evidence, the sole copy
    enrolled_at: float


class _WallClock:
    def now(self) -> float:
        return time.time()


class EnrollmentAuthority:
    def __init__(
        self,
        rng: Any = None,
        clock: Any = None,
        evidence_check: Optional[Callable[[str], bool]] = None,
    ):
        self.rng = as_entropy(rng)
        self.clock = clock or _WallClock()
        self.did: Did = create_did(PUBLIC, self.rng)
        self._evidence_check = evidence_check or (lambda evidence: bool(evidence.strip()))
        self._records: Dict[str, IdentityRecord] = {}
        self._warrants: set = set()

    @property
    def verification_key(self) -> bytes:
        return self.did.keys.verification_key

    def enroll(
        self,
        subject_did: str,
        evidence: str,
        expires_at: Optional[float] = None,
    ) -> VerifiableCredential:
        if subject_did in self._records:
            raise EnrollmentError("already-enrolled", "subject DID already enrolled")
        if not self._evidence_check(evidence):
            raise EnrollmentError("evidence-rejected", "enrollment evidence failed checks")
        now = self.clock.now()
        self._records[subject_did] = IdentityRecord(
            subject=subject_did,
            real_identity=digest(evidence.encode()).hex,
            enrolled_at=now,
        )
        claims: Dict[str, Any] = {"enrollment": "verified"}
        if expires_at is not None:
            claims["expires_at"] = expires_at
        signature = sign(
            credential_payload(subject_did, self.did.text, claims, now), self.did
        )
        return VerifiableCredential(
            subject=subject_did,
            issuer=self.did.text,
            claims=claims,
            issued_at=now,
            signature=signature.to_dict(),
        )

    # ------------------------------------------------------------------
    # Lawful-access path (harness scenarios only)
    # ------------------------------------------------------------------

    def issue_warrant(self) -> str:
        warrant = self.rng.randbytes(16).hex()
        self._warrants.add(warrant)
        return warrant

    def investigate(self, subject_did: str, warrant: str) -> str:
        if warrant not in self._warrants:
            raise EnrollmentError("warrant-required", "no valid warrant presented")
        self._warrants.discard(warrant)  # single use
        record = self._records.get(subject_did)
        if record is None:
            raise EnrollmentError("unknown-subject", "subject was never enrolled")
        return record.real_identity

    # ------------------------------------------------------------------
    # Socket surface
    # ------------------------------------------------------------------

    def api_handle(self, endpoint: str, body: Dict[str, Any]) -> Any:
        if endpoint == "enroll":
            credential = self.enroll(
                body["subject"], body["evidence"], body.get("expires_at")
            )
            return credential.to_dict()
        if endpoint == "investigate":
            return {"real_identity": self.investigate(body["subject"], body["warrant"])}
        raise EnrollmentError("unknown-endpoint", endpoint)
