"""Enrollment authority: credential soundness and identity containment."""

import random

import pytest

from ccn.canonical import canonical_bytes
from ccn.enrollment import (
    EnrollmentAuthority,
    EnrollmentError,
    VerifiableCredential,
    credential_payload,
    verify_credential,
)
from ccn.identity import create_did, digest, sign


class FakeClock:
    def __init__(self, t=0.0):
        self.t = t

    def now(self):
        return self.t


def test_enroll_and_verify_round_trip():
    authority = EnrollmentAuthority(rng=1, clock=FakeClock(10.0))
    subject = create_did("public", 2)
    credential = authority.enroll(subject.text, "passport:alice-7")
    assert credential.subject == subject.text
    assert credential.claims["enrollment"] == "verified"
    assert verify_credential(credential, authority.verification_key, now=11.0)


def test_credential_rejects_wrong_key_and_tampering():
    authority = EnrollmentAuthority(rng=3, clock=FakeClock())
    subject = create_did("public", 4)
    credential = authority.enroll(subject.text, "passport:bob-1")

    other_authority = EnrollmentAuthority(rng=5, clock=FakeClock())
    assert not verify_credential(credential, other_authority.verification_key)

    resubjected = VerifiableCredential.from_dict(
        credential.to_dict() | {"subject": create_did("public", 6).text}
    )
    assert not verify_credential(resubjected, authority.verification_key)

    upgraded = credential.to_dict()
    upgraded["claims"] = {"enrollment": "verified", "role": "auditor"}
    assert not verify_credential(
        VerifiableCredential.from_dict(upgraded), authority.verification_key
    )


def test_credential_expiry_follows_claims():
    clock = FakeClock(100.0)
    authority = EnrollmentAuthority(rng=7, clock=clock)
    subject = create_did("public", 8)
    credential = authority.enroll(subject.text, "id-card:carol", expires_at=200.0)
    assert verify_credential(credential, authority.verification_key, now=150.0)
    assert not verify_credential(credential, authority.verification_key, now=201.0)


def test_forgery_attempts_fail():
    authority = EnrollmentAuthority(rng=9, clock=FakeClock())
    subject = create_did("public", 10)
    for seed in range(20):
        forger = create_did("public", 1000 + seed)
        payload = credential_payload(subject.text, authority.did.text, {"enrollment": "verified"}, 1.0)
        forged = VerifiableCredential(
            subject=subject.text,
            issuer=authority.did.text,
            claims={"enrollment": "verified"},
            issued_at=1.0,
            signature=sign(payload, forger).to_dict(),
        )
        assert not verify_credential(forged, authority.verification_key)


def test_duplicate_enrollment_and_evidence_predicate():
    authority = EnrollmentAuthority(
        rng=11, clock=FakeClock(), evidence_check=lambda e: e.startswith("passport:")
    )
    subject = create_did("public", 12)
    authority.enroll(subject.text, "passport:dora-2")
    with pytest.raises(EnrollmentError) as err:
        authority.enroll(subject.text, "passport:dora-2")
    assert err.value.code == "already-enrolled"
    with pytest.raises(EnrollmentError) as err:
        authority.enroll(create_did("public", 13).text, "note from my neighbor")
    assert err.value.code == "evidence-rejected"


def test_investigation_needs_single_use_warrant():
    authority = EnrollmentAuthority(rng=14, clock=FakeClock())
    subject = create_did("public", 15)
    evidence = "passport:erin-9"
    authority.enroll(subject.text, evidence)

    with pytest.raises(EnrollmentError) as err:
        authority.investigate(subject.text, "forged-warrant")
    assert err.value.code == "warrant-required"

    warrant = authority.issue_warrant()
    assert authority.investigate(subject.text, warrant) == digest(evidence.encode()).hex
    with pytest.raises(EnrollmentError) as err:
        authority.investigate(subject.text, warrant)  # consumed
    assert err.value.code == "warrant-required"

    warrant = authority.issue_warrant()
    with pytest.raises(EnrollmentError) as err:
        authority.investigate(create_did("public", 16).text, warrant)
    assert err.value.code == "unknown-subject"


def test_identity_material_never_leaves_with_the_credential():
    authority = EnrollmentAuthority(rng=17, clock=FakeClock())
    subject = create_did("public", 18)
    evidence = "passport:frank-3"
    credential = authority.enroll(subject.text, evidence)
    blob = canonical_bytes(credential.to_dict())
    assert evidence.encode() not in blob
    assert digest(evidence.encode()).hex.encode() not in blob
