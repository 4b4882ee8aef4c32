"""Non-repudiation probes: tampered packages and after-the-fact denials.

A consent package is the sealed signed form plus its ledger-anchored
proof.  Tampering anywhere — form fields, signatures, envelope bytes,
the proof, the transaction reference — must be caught by package
verification, and either side's later denial must be refutable from the
artifacts alone.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

from ..canonical import b64u_decode, b64u_encode, canonical_bytes, from_canonical
from ..identity import (
    Envelope,
    digest,
    envelope_from_bytes,
    resolve_did,
    seal_envelope,
    serialize_envelope,
)
from ..wallet import (
    PrivateConsentForm,
    verify_consent_package,
    verify_org_signature,
    verify_participant_signature,
)
from .config import ScenarioConfig
from .flows import run_consent_flow
from .world import World


@dataclass
class NonRepReport:
    tampered_total: int
    tampered_accepted: int
    reasons: Dict[str, int] = field(default_factory=dict)
    org_denial_refuted: bool = False
    participant_denial_refuted: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tampered_total": self.tampered_total,
            "tampered_accepted": self.tampered_accepted,
            "reasons": dict(sorted(self.reasons.items())),
            "org_denial_refuted": self.org_denial_refuted,
            "participant_denial_refuted": self.participant_denial_refuted,
        }


def _flip_byte(data: bytes, rng: random.Random) -> bytes:
    pos = rng.randrange(len(data))
    mutated = bytearray(data)
    mutated[pos] ^= 1 << rng.randrange(8)
    return bytes(mutated)


def _reseal(world: World, actor, form_dict: Dict[str, Any], org) -> Tuple[Envelope, str]:
    """Seal a (possibly doctored) form exactly the way the wallet would."""
    org_doc = resolve_did(org.wallet.public_did.text, "public", world.registry)
    private = actor.wallet.project_identity(form_dict["project_id"])
    envelope = seal_envelope(
        canonical_bytes(form_dict), org_doc, sender=private, rng=actor.wallet.rng
    )
    return envelope, digest(serialize_envelope(envelope)).hex


def _verify(world: World, org, envelope: Envelope, proof: str, consent_tx, sender: str):
    return verify_consent_package(
        org.wallet, envelope, proof, consent_tx, org.ledger,
        expected_participant_did=sender,
    )


def non_repudiation_suite(seed: int = 0, tampers: int = 100) -> NonRepReport:
    """Fuzz one genuine package ``tampers`` ways; refute both denials."""
    rng = random.Random(seed)
    config = ScenarioConfig(n_participants=2, n_orgs=2, n_projects=10, seed=seed)
    world = World.build(config)
    try:
        report = run_consent_flow(world, participants=[0, 1], projects=world.project_ids[:2])
        assert all(p.accepted for p in report.pairs)
        target = report.pairs[0]
        actor = world.participants[target.participant]
        org = world.org_for_project(target.project_id)
        stored = next(e for e in org.accepted if e["proof"] == target.proof)
        sender = stored["private_did"]
        envelope = Envelope.from_dict(stored["envelope"])
        wire = serialize_envelope(envelope)
        form_dict = stored["form"]
        consent_tx = stored["consent_tx"]

        # sanity: the untampered package still verifies
        genuine = _verify(world, org, envelope, target.proof, consent_tx, sender)
        assert genuine.accepted, genuine.reason

        other = next(p for p in report.pairs if p.proof != target.proof)
        outcomes: List[str] = []
        plan = (
            ["envelope"] * 40 + ["field"] * 20 + ["signature"] * 10
            + ["proof"] * 15 + ["txref"] * 15
        )
        rng.shuffle(plan)
        accepted = 0
        for kind in plan[:tampers]:
            if kind == "envelope":
                try:
                    mangled = envelope_from_bytes(_flip_byte(wire, rng))
                except Exception:
                    outcomes.append("envelope-rejected-at-parse")
                    continue
                result = _verify(world, org, mangled, target.proof, consent_tx, sender)
            elif kind == "field":
                doctored = from_canonical(canonical_bytes(form_dict))
                index = rng.randrange(len(doctored["fields"]))
                name, value = doctored["fields"][index]
                doctored["fields"][index] = [name, "no" if value == "yes" else "yes"]
                env2, proof2 = _reseal(world, actor, doctored, org)
                result = _verify(world, org, env2, proof2, consent_tx, sender)
            elif kind == "signature":
                doctored = from_canonical(canonical_bytes(form_dict))
                which = rng.choice(["org_signature", "participant_signature"])
                sig = doctored[which]
                sig["value"] = b64u_encode(_flip_byte(b64u_decode(sig["value"]), rng))
                env2, proof2 = _reseal(world, actor, doctored, org)
                result = _verify(world, org, env2, proof2, consent_tx, sender)
            elif kind == "proof":
                fake = _flip_hex(target.proof, rng)
                result = _verify(world, org, envelope, fake, consent_tx, sender)
            else:  # txref: a real but foreign transaction reference
                result = _verify(
                    world, org, envelope, target.proof, other.consent_tx, sender
                )
            if result.accepted:
                accepted += 1
                outcomes.append("ACCEPTED")
            else:
                outcomes.append(result.reason)

        reasons: Dict[str, int] = {}
        for reason in outcomes:
            reasons[reason] = reasons.get(reason, 0) + 1

        org_refuted = _refute_org_denial(world, form_dict)
        participant_refuted = _refute_participant_denial(
            world, org, form_dict, envelope, target.proof
        )
        return NonRepReport(
            tampered_total=len(plan[:tampers]),
            tampered_accepted=accepted,
            reasons=reasons,
            org_denial_refuted=org_refuted,
            participant_denial_refuted=participant_refuted,
        )
    finally:
        world.close()


def _flip_hex(proof: str, rng: random.Random) -> str:
    pos = rng.randrange(len(proof))
    replacement = rng.choice([c for c in "0123456789abcdef" if c != proof[pos]])
    return proof[:pos] + replacement + proof[pos + 1 :]


def _refute_org_denial(world: World, form_dict: Dict[str, Any]) -> bool:
    """Claim: "we never issued this form."  The org's signature says otherwise.

    The signature verifies against the key certified by the org's public
    DID over the blank template, and the terms reference inside the form
    is anchored on the append-only ledger.
    """
    form = PrivateConsentForm.from_dict(form_dict)
    if not verify_org_signature(form):
        return False
    try:
        ref = world.ledger.terms_by_ref(form.terms_tx["tx_id"])
    except Exception:
        return False
    return ref is not None


def _refute_participant_denial(
    world: World,
    org,
    form_dict: Dict[str, Any],
    envelope: Envelope,
    proof: str,
) -> bool:
    """Claim: "I never consented."  Signature + ledger anchor say otherwise.

    The pairwise DID certified exactly this completed form, the sealed
    copy hashes to the on-ledger proof, and the ledger timestamped it.
    """
    form = PrivateConsentForm.from_dict(form_dict)
    if not verify_participant_signature(form):
        return False
    if digest(serialize_envelope(envelope)).hex != proof:
        return False
    try:
        record, ref = world.ledger.get_consent_record(proof)
    except Exception:
        return False
    return record.published_at is not None


__all__ = ["NonRepReport", "non_repudiation_suite"]
