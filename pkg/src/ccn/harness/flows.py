"""End-to-end consent lifecycle flows run against a scenario world.

Each protocol step is a small function so the latency benchmark can time
them individually; ``run_consent_flow`` strings them together for every
(participant, project) pair and records what each actor saw.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..canonical import canonical_bytes, from_canonical
from ..identity import Did, Envelope, resolve_did
from ..ledger import ConsentRecord
from ..portal import PortalError
from ..wallet import (
    ConsentDossier,
    PrivateConsentForm,
    REVOKED,
    VerificationResult,
    as_issued_template,
    verify_consent_package,
    verify_org_signature,
)
from .world import OrgActor, ParticipantActor, World

FIELD_CHOICES = ("yes", "no")


@dataclass
class PairOutcome:
    participant: int
    project_id: str
    accepted: bool
    reason: str
    proof: str = ""
    consent_tx: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "participant": self.participant,
            "project_id": self.project_id,
            "accepted": self.accepted,
            "reason": self.reason,
            "proof": self.proof,
            "consent_tx": self.consent_tx,
        }


@dataclass
class FlowReport:
    pairs: List[PairOutcome]
    elapsed_s: float
    ledger_counts: Dict[str, int]
    world_state_digest: str
    chain_ok: bool

    @property
    def accepted(self) -> int:
        return sum(1 for p in self.pairs if p.accepted)

    @property
    def total(self) -> int:
        return len(self.pairs)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accepted": self.accepted,
            "total": self.total,
            "elapsed_s": round(self.elapsed_s, 3),
            "ledger_counts": self.ledger_counts,
            "world_state_digest": self.world_state_digest,
            "chain_ok": self.chain_ok,
            "pairs": [p.to_dict() for p in self.pairs],
        }


# ----------------------------------------------------------------------
# Individual protocol steps
# ----------------------------------------------------------------------


def step_portal_session(world: World, actor: ParticipantActor) -> str:
    wallet = actor.wallet
    challenge = world.portal.login(wallet.public_did.text)
    session = world.portal.authenticate(wallet.did_auth_response(challenge))
    actor.session = session
    return session


def step_browse_catalog(world: World, actor: ParticipantActor) -> int:
    listing = world.portal.list_projects(actor.session)
    actor.wallet.check_catalog_privacy(listing["size"])
    return listing["size"]


def step_create_identity(actor: ParticipantActor, project_id: str) -> Did:
    return actor.wallet.create_project_identity(project_id)


def step_register_inbox(world: World, actor: ParticipantActor, private: Did) -> str:
    challenge = world.mediator.challenge(private.text)
    token = world.mediator.register_inbox(
        private.text, actor.wallet.did_auth_response(challenge, private)
    )
    actor.inbox_tokens[private.text] = token
    return token


def org_process_inbox(world: World, org: OrgActor) -> int:
    """Drain the org inbox: answer participation requests, verify packages."""
    envelopes = world.mediator.fetch(org.wallet.public_did.text, org.inbox_token)
    handled = 0
    for envelope in envelopes:
        plaintext, sender = org.wallet.open_addressed(envelope)
        message = from_canonical(plaintext)
        if sender is None:
            continue
        if message["type"] == "participation-request":
            _org_answer_request(world, org, sender, message)
        elif message["type"] == "consent-package":
            _org_verify_package(world, org, sender, message)
        handled += 1
    return handled


def _org_answer_request(
    world: World, org: OrgActor, sender: str, message: Dict[str, Any]
) -> None:
    project_id = message["project_id"]
    org.connections[sender] = project_id
    world.transcript.record(
        org.label, "connection", private_did=sender, project=project_id
    )
    sender_doc = resolve_did(sender, "private")
    ack = {"type": "ack", "project_id": project_id, "nonce": message["nonce"]}
    org_handle = org.wallet.transport_handle(world.config.pseudonymous_transport)
    world.mediator.route(
        org.wallet.seal_for(canonical_bytes(ack), sender_doc), org_handle
    )
    form = org.wallet.build_consent_form(project_id, sender)
    delivery = {"type": "consent-form", "form": form.to_dict()}
    world.mediator.route(
        org.wallet.seal_for(canonical_bytes(delivery), sender_doc), org_handle
    )
    world.transcript.record(
        org.label, "form-issued", project=project_id, form_id=form.form_id
    )


def _org_verify_package(
    world: World, org: OrgActor, sender: str, message: Dict[str, Any]
) -> VerificationResult:
    expected = org.connections.get(sender)
    envelope = Envelope.from_dict(message["envelope"])
    result = verify_consent_package(
        org.wallet,
        envelope,
        message["proof"],
        message["consent_tx"],
        org.ledger,
        expected_participant_did=sender,
    )
    entry = {
        "private_did": sender,
        "project": expected,
        "proof": message["proof"],
        "consent_tx": message["consent_tx"],
        "accepted": result.accepted,
        "reason": result.reason,
        "form": result.form.to_dict() if result.form is not None else None,
        "envelope": message["envelope"],
    }
    (org.accepted if result.accepted else org.rejected).append(entry)
    world.transcript.record(
        org.label,
        "package",
        private_did=sender,
        accepted=result.accepted,
        reason=result.reason,
        proof=message["proof"],
    )
    return result


def step_connect_org(
    world: World, actor: ParticipantActor, private: Did, project_id: str
) -> Envelope:
    """DID-auth style connection: request via mediator, ack + form back.

    Returns the still-sealed consent-form envelope for the next step.
    """
    org = world.org_for_project(project_id)
    org_doc = resolve_did(org.wallet.public_did.text, "public", world.registry)
    nonce = actor.wallet.rng.randbytes(8).hex()
    request = {"type": "participation-request", "project_id": project_id, "nonce": nonce}
    sealed = actor.wallet.seal_for(canonical_bytes(request), org_doc, sender=private)
    handle = actor.wallet.transport_handle(world.config.pseudonymous_transport)
    world.mediator.route(sealed, handle)
    org_process_inbox(world, org)
    inbound = world.mediator.fetch(private.text, actor.inbox_tokens[private.text])
    if len(inbound) != 2:
        raise RuntimeError(f"expected ack + form, got {len(inbound)} messages")
    ack_env, form_env = inbound
    plaintext, sender = actor.wallet.open_addressed(ack_env, private)
    ack = from_canonical(plaintext)
    if sender != org.wallet.public_did.text or ack["nonce"] != nonce:
        raise RuntimeError("connection ack failed authentication")
    return form_env


def step_receive_form(
    world: World, actor: ParticipantActor, private: Did, project_id: str, form_env: Envelope
) -> PrivateConsentForm:
    org = world.org_for_project(project_id)
    plaintext, sender = actor.wallet.open_addressed(form_env, private)
    if sender != org.wallet.public_did.text:
        raise RuntimeError("consent form not from the expected organization")
    message = from_canonical(plaintext)
    return PrivateConsentForm.from_dict(message["form"])


def step_verify_form(form: PrivateConsentForm) -> bool:
    return verify_org_signature(form)


def pick_choices(actor: ParticipantActor, form: PrivateConsentForm) -> Dict[str, str]:
    rng = actor.wallet.rng
    return {
        name: FIELD_CHOICES[rng.randbytes(1)[0] % len(FIELD_CHOICES)]
        for name, _ in form.fields
    }


def step_sign_form(
    actor: ParticipantActor, form: PrivateConsentForm, choices: Dict[str, str]
) -> PrivateConsentForm:
    return actor.wallet.complete_and_sign_form(form, choices)


def step_generate_proof(
    world: World, actor: ParticipantActor, completed: PrivateConsentForm
) -> ConsentDossier:
    org = world.org_for_project(completed.project_id)
    org_doc = resolve_did(org.wallet.public_did.text, "public", world.registry)
    return actor.wallet.generate_consent_proof(completed, org_doc)


def step_publish_proof(
    world: World, actor: ParticipantActor, dossier: ConsentDossier
) -> Dict[str, Any]:
    item = world.portal.proxy_publish(actor.session, dossier.proof)
    actor.wallet.attach_consent_tx(dossier, item["consent_tx"])
    return item["consent_tx"]


def step_query_proof(world: World, dossier: ConsentDossier) -> ConsentRecord:
    record, _ = world.ledger.get_consent_record(dossier.proof)
    return record


def step_send_package(
    world: World, actor: ParticipantActor, private: Did, dossier: ConsentDossier
) -> bool:
    org = world.org_for_project(dossier.project_id)
    org_doc = resolve_did(org.wallet.public_did.text, "public", world.registry)
    package = {
        "type": "consent-package",
        "envelope": dossier.envelope.to_dict(),
        "proof": dossier.proof,
        "consent_tx": dossier.consent_tx,
    }
    sealed = actor.wallet.seal_for(canonical_bytes(package), org_doc, sender=private)
    handle = actor.wallet.transport_handle(world.config.pseudonymous_transport)
    before = len(org.accepted)
    world.mediator.route(sealed, handle)
    org_process_inbox(world, org)
    return len(org.accepted) > before and org.accepted[-1]["proof"] == dossier.proof


# ----------------------------------------------------------------------
# Whole-lifecycle flows
# ----------------------------------------------------------------------


def join_project(world: World, actor: ParticipantActor, project_id: str) -> PairOutcome:
    """Steps 1-11 for one (participant, project) pair."""
    private = step_create_identity(actor, project_id)
    return complete_join(world, actor, private, project_id)


def complete_join(
    world: World, actor: ParticipantActor, private: Did, project_id: str
) -> PairOutcome:
    """The join steps after identity selection (reused by probe controls)."""
    step_register_inbox(world, actor, private)
    form_env = step_connect_org(world, actor, private, project_id)
    form = step_receive_form(world, actor, private, project_id, form_env)
    if not step_verify_form(form):
        return PairOutcome(actor.index, project_id, False, "org-signature-invalid")
    choices = pick_choices(actor, form)
    completed = step_sign_form(actor, form, choices)
    dossier = step_generate_proof(world, actor, completed)
    consent_tx = step_publish_proof(world, actor, dossier)
    step_query_proof(world, dossier)
    accepted = step_send_package(world, actor, private, dossier)
    outcome = PairOutcome(
        participant=actor.index,
        project_id=project_id,
        accepted=accepted,
        reason="accepted" if accepted else "rejected-by-org",
        proof=dossier.proof,
        consent_tx=consent_tx,
    )
    world.transcript.record(
        actor.label,
        "joined",
        project=project_id,
        private_did=private.text,
        proof=dossier.proof,
        consent_tx=consent_tx,
        accepted=accepted,
        choices=choices,
    )
    return outcome


def run_consent_flow(
    world: World,
    participants: Optional[Sequence[int]] = None,
    projects: Optional[Sequence[str]] = None,
) -> FlowReport:
    """Run the full consent lifecycle for every (participant, project) pair."""
    started = time.perf_counter()
    chosen_participants = (
        world.participants
        if participants is None
        else [world.participants[i] for i in participants]
    )
    chosen_projects = list(world.project_ids if projects is None else projects)

    outcomes: List[PairOutcome] = []
    for actor in chosen_participants:
        step_portal_session(world, actor)
        step_browse_catalog(world, actor)
        for project_id in chosen_projects:
            outcomes.append(join_project(world, actor, project_id))
    world.ledger.flush()
    world.snapshot_observers()
    return FlowReport(
        pairs=outcomes,
        elapsed_s=time.perf_counter() - started,
        ledger_counts=world.ledger_counts(),
        world_state_digest=world.ledger.world_state_digest(),
        chain_ok=world.ledger.verify_chain()["ok"],
    )


@dataclass
class RevocationReport:
    revoked: int
    stale_rejected: int
    updated: int
    update_verified: int
    foreign_denials: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "revoked": self.revoked,
            "stale_rejected": self.stale_rejected,
            "updated": self.updated,
            "update_verified": self.update_verified,
            "foreign_denials": self.foreign_denials,
        }


def revoke_pair(world: World, actor: ParticipantActor, outcome: PairOutcome) -> bool:
    """Participant revokes one consent; the org's stored package goes stale."""
    world.portal.request_revoke(actor.session, outcome.consent_tx)
    dossier = actor.wallet.dossier_for(outcome.project_id)
    dossier.status = REVOKED
    world.transcript.record(
        actor.label, "revoked", project=outcome.project_id, proof=outcome.proof
    )
    org = world.org_for_project(outcome.project_id)
    stored = next(e for e in org.accepted if e["proof"] == outcome.proof)
    result = verify_consent_package(
        org.wallet,
        Envelope.from_dict(stored["envelope"]),
        stored["proof"],
        stored["consent_tx"],
        org.ledger,
        expected_participant_did=stored["private_did"],
    )
    world.transcript.record(
        org.label,
        "re-verify",
        proof=outcome.proof,
        accepted=result.accepted,
        reason=result.reason,
    )
    return (not result.accepted) and result.reason == "ledger-state-invalid"


def update_pair(
    world: World, actor: ParticipantActor, outcome: PairOutcome
) -> Tuple[bool, str]:
    """Atomically replace one published consent with re-completed terms."""
    old = actor.wallet.dossier_for(outcome.project_id)
    template = as_issued_template(old.form)
    choices = pick_choices(actor, template)
    completed = actor.wallet.complete_and_sign_form(template, choices)
    fresh = step_generate_proof(world, actor, completed)
    item = world.portal.request_update(actor.session, old.consent_tx, fresh.proof)
    old.status = REVOKED
    actor.wallet.attach_consent_tx(fresh, item["consent_tx"])
    world.transcript.record(
        actor.label,
        "updated",
        project=outcome.project_id,
        old_proof=old.proof,
        new_proof=fresh.proof,
    )
    private = actor.wallet.project_identity(outcome.project_id)
    accepted = step_send_package(world, actor, private, fresh)
    return accepted, fresh.proof


def run_revocation_flow(
    world: World,
    report: FlowReport,
    revoke_every: int = 3,
    update_every: int = 7,
) -> RevocationReport:
    """Revoke/update a deterministic sample of previously accepted consents."""
    accepted = [p for p in report.pairs if p.accepted]
    revocations = [p for i, p in enumerate(accepted) if i % revoke_every == 0]
    remaining = [p for p in accepted if p not in revocations]
    updates = [p for i, p in enumerate(remaining) if i % update_every == 0]

    by_index = {a.index: a for a in world.participants}
    stale_rejected = 0
    for outcome in revocations:
        if revoke_pair(world, by_index[outcome.participant], outcome):
            stale_rejected += 1

    update_verified = 0
    for outcome in updates:
        ok, _ = update_pair(world, by_index[outcome.participant], outcome)
        if ok:
            update_verified += 1

    # A consent tx that belongs to someone else must be indistinguishable
    # from one that does not exist.
    foreign_denials = 0
    if len(world.participants) >= 2 and accepted:
        alice, bob = world.participants[0], world.participants[1]
        bob_pairs = [p for p in accepted if p.participant == bob.index]
        if bob_pairs and alice.session:
            try:
                world.portal.request_revoke(alice.session, bob_pairs[0].consent_tx)
            except PortalError as exc:
                if exc.code == "authorization":
                    foreign_denials += 1

    world.ledger.flush()
    world.snapshot_observers()
    return RevocationReport(
        revoked=len(revocations),
        stale_rejected=stale_rejected,
        updated=len(updates),
        update_verified=update_verified,
        foreign_denials=foreign_denials,
    )


__all__ = [
    "FIELD_CHOICES",
    "PairOutcome",
    "FlowReport",
    "RevocationReport",
    "step_portal_session",
    "step_browse_catalog",
    "step_create_identity",
    "step_register_inbox",
    "step_connect_org",
    "step_receive_form",
    "step_verify_form",
    "step_sign_form",
    "step_generate_proof",
    "step_publish_proof",
    "step_query_proof",
    "step_send_package",
    "pick_choices",
    "join_project",
    "complete_join",
    "org_process_inbox",
    "run_consent_flow",
    "run_revocation_flow",
    "revoke_pair",
    "update_pair",
]
