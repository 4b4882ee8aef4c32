"""Deterministic scenario world: every component wired on seeded entropy.

A ``World`` holds one ledger, one portal, one mediator, one enrollment
authority, and the org/participant actors.  All randomness flows from the
scenario seed and all timestamps from one shared logical clock, so two
worlds built from the same config produce byte-identical ledger journals
and transcripts.
"""

from __future__ import annotations

import json
import random
import shutil
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..canonical import canonical_bytes, canonical_str
from ..enrollment import EnrollmentAuthority, VerifiableCredential
from ..identity import PUBLIC, Did, DidRegistry, create_did, digest
from ..ledger import (
    ROLE_AUDITOR,
    ROLE_ORGANIZATION,
    ROLE_PORTAL,
    ConsentLedger,
    LedgerClient,
    LedgerIdentity,
)
from ..mediator import Mediator
from ..portal import Portal, PortalConfig
from ..wallet import ROLE_PARTICIPANT, Wallet
from ..wallet import ROLE_ORGANIZATION as WALLET_ORG
from .config import ScenarioConfig, org_index_for_project, project_ids


class LogicalClock:
    """Monotonic tick counter shared by every component in a world."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            self._now += 1.0
            return self._now


class Transcript:
    """What each actor saw, recorded at trust boundaries.

    Actor keys are harness labels ("participant:3", "org:0", "portal",
    "mediator"), never protocol identifiers, so the transcript itself does
    not leak ground truth into any actor's view.
    """

    def __init__(self) -> None:
        self.events: Dict[str, List[Dict[str, Any]]] = {}

    def record(self, actor: str, kind: str, **data: Any) -> None:
        event = {"kind": kind}
        event.update(data)
        self.events.setdefault(actor, []).append(event)

    def view(self, actor: str) -> List[Dict[str, Any]]:
        return self.events.get(actor, [])

    def view_bytes(self, actor: str) -> bytes:
        return canonical_bytes(self.view(actor))

    def canonical(self) -> bytes:
        return canonical_bytes(self.events)

    def actors(self) -> List[str]:
        return sorted(self.events)


@dataclass
class OrgActor:
    index: int
    wallet: Wallet
    ledger: LedgerClient
    inbox_token: str = ""
    projects: List[str] = field(default_factory=list)
    # private DID text -> project id, learned from participation requests
    connections: Dict[str, str] = field(default_factory=dict)
    accepted: List[Dict[str, Any]] = field(default_factory=list)
    rejected: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def label(self) -> str:
        return f"org:{self.index}"


@dataclass
class ParticipantActor:
    index: int
    wallet: Wallet
    evidence: str = ""
    credential: Optional[VerifiableCredential] = None
    session: Optional[str] = None
    inbox_tokens: Dict[str, str] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return f"participant:{self.index}"


class World:
    def __init__(
        self,
        config: ScenarioConfig,
        clock: LogicalClock,
        registry: DidRegistry,
        ledger: ConsentLedger,
        portal: Portal,
        mediator: Mediator,
        authority: EnrollmentAuthority,
        orgs: List[OrgActor],
        participants: List[ParticipantActor],
        auditor: Did,
        base_dir: Optional[Path],
        owns_base_dir: bool,
    ):
        self.config = config
        self.clock = clock
        self.registry = registry
        self.ledger = ledger
        self.portal = portal
        self.mediator = mediator
        self.authority = authority
        self.orgs = orgs
        self.participants = participants
        self.auditor = auditor
        self.base_dir = base_dir
        self._owns_base_dir = owns_base_dir
        self.transcript = Transcript()
        self.project_ids: List[str] = project_ids(config)
        self.terms_refs: Dict[str, Dict[str, Any]] = {}

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------

    @classmethod
    def build(
        cls,
        config: ScenarioConfig,
        base_dir: Optional[str] = None,
        persistent: bool = False,
    ) -> "World":
        """Wire up one complete deployment from a scenario config.

        With ``persistent`` (or an explicit ``base_dir``) the ledger
        journal, portal store, and mediator routing log live on disk.
        """
        master = random.Random(config.seed)

        def spawn() -> random.Random:
            return random.Random(master.randrange(2**63))

        owns_dir = False
        dir_path: Optional[Path] = None
        if base_dir is not None:
            dir_path = Path(base_dir)
            dir_path.mkdir(parents=True, exist_ok=True)
        elif persistent:
            dir_path = Path(tempfile.mkdtemp(prefix="ccn-world-"))
            owns_dir = True

        clock = LogicalClock()
        registry = DidRegistry()
        journal = dir_path / "ledger.journal" if dir_path else None
        ledger = ConsentLedger(
            journal_path=journal,
            batch_size=config.ledger_batch_size,
            batch_timeout=config.ledger_batch_timeout,
        )
        authority = EnrollmentAuthority(rng=spawn(), clock=clock)
        mediator = Mediator(
            registry=registry,
            rng=spawn(),
            clock=clock,
            harness_mode=True,
            log_path=dir_path / "mediator.log" if dir_path else None,
        )

        auditor = create_did(PUBLIC, spawn())
        ledger.admit(
            LedgerIdentity(auditor.text, ROLE_AUDITOR, auditor.keys.verification_key)
        )

        portal_did = create_did(PUBLIC, spawn())
        ledger.admit(
            LedgerIdentity(portal_did.text, ROLE_PORTAL, portal_did.keys.verification_key)
        )
        portal = Portal(
            LedgerClient(ledger, portal_did),
            config=PortalConfig(enrollment_required=config.enrollment),
            rng=spawn(),
            clock=clock,
            store_dir=dir_path / "portal" if dir_path else None,
            authority_key=authority.did.keys.verification_key,
        )

        world = cls(
            config=config,
            clock=clock,
            registry=registry,
            ledger=ledger,
            portal=portal,
            mediator=mediator,
            authority=authority,
            orgs=[],
            participants=[],
            auditor=auditor,
            base_dir=dir_path,
            owns_base_dir=owns_dir,
        )

        for i in range(config.n_orgs):
            world.orgs.append(world._build_org(i, spawn()))
        for p, project in enumerate(world.project_ids):
            world._sponsor_project(project, world.orgs[org_index_for_project(config, p)])
        for i in range(config.n_participants):
            world.participants.append(world._build_participant(i, spawn()))
        return world

    def _build_org(self, index: int, rng: random.Random) -> OrgActor:
        wallet = Wallet(WALLET_ORG, rng=rng, clock=self.clock)
        self.registry.register(wallet.public_did)
        self.ledger.admit(
            LedgerIdentity(
                wallet.public_did.text,
                ROLE_ORGANIZATION,
                wallet.public_did.keys.verification_key,
            )
        )
        org = OrgActor(
            index=index,
            wallet=wallet,
            ledger=LedgerClient(self.ledger, wallet.public_did),
        )
        challenge = self.mediator.challenge(wallet.public_did.text)
        org.inbox_token = self.mediator.register_inbox(
            wallet.public_did.text, wallet.did_auth_response(challenge)
        )
        return org

    def _sponsor_project(self, project_id: str, org: OrgActor) -> None:
        terms = {
            "project": project_id,
            "version": 1,
            "title": f"Consent terms for {project_id}",
        }
        ref = org.ledger.publish_consent_terms(
            project_id, 1, digest(canonical_bytes(terms)).hex
        )
        terms_tx = ref.to_dict()
        org.wallet.sponsor_project(
            project_id, terms_tx, ["data_sharing", "sample_storage", "recontact"]
        )
        org.projects.append(project_id)
        self.portal.add_project(
            project_id,
            org.wallet.public_did.text,
            1,
            terms_tx,
            enrollment_required=self.config.enrollment,
        )
        self.terms_refs[project_id] = terms_tx

    def _build_participant(self, index: int, rng: random.Random) -> ParticipantActor:
        wallet = Wallet(
            ROLE_PARTICIPANT,
            rng=rng,
            clock=self.clock,
            preseed=self.config.preseed_dids,
            herd_threshold=self.config.herd_threshold,
        )
        actor = ParticipantActor(
            index=index, wallet=wallet, evidence=f"passport:holder-{index:04d}"
        )
        if self.config.enrollment:
            actor.credential = self.authority.enroll(
                wallet.public_did.text, actor.evidence
            )
        challenge = self.portal.challenge(wallet.public_did.text)
        self.portal.register(
            wallet.public_did.text,
            wallet.did_auth_response(challenge),
            credential=actor.credential,
        )
        return actor

    # ------------------------------------------------------------------
    # Lookup helpers
    # ------------------------------------------------------------------

    def org_for_project(self, project_id: str) -> OrgActor:
        index = self.project_ids.index(project_id)
        return self.orgs[org_index_for_project(self.config, index)]

    def participant_for_private_did(self, did_text: str) -> Optional[ParticipantActor]:
        """Ground-truth lookup.  Harness-only: no protocol actor can do this."""
        for actor in self.participants:
            for did in actor.wallet.project_identities.values():
                if did.text == did_text:
                    return actor
        return None

    def ledger_counts(self) -> Dict[str, int]:
        counts = {"terms": 0, "proof-valid": 0, "proof-revoked": 0}
        for key, record in self.ledger.list_state().items():
            kind = json.loads(key)[0]
            if kind == "terms":
                counts["terms"] += 1
            elif record.get("state") == "valid":
                counts["proof-valid"] += 1
            else:
                counts["proof-revoked"] += 1
        return counts

    def snapshot_observers(self) -> None:
        """Copy portal/mediator observation surfaces into the transcript."""
        self.transcript.events["portal"] = [dict(e) for e in self.portal.request_log]
        self.transcript.events["mediator"] = self.mediator.metadata_view()

    def close(self) -> None:
        self.portal.close()
        self.ledger.close()
        if self._owns_base_dir and self.base_dir is not None:
            shutil.rmtree(self.base_dir, ignore_errors=True)


def containment_violations(world: World) -> List[str]:
    """Cross-boundary leak scan over every actor view in the transcript.

    Checks that organizations never see a participant's public DID or
    wallet secrets, that the portal never sees a pairwise DID, and that
    the mediator sees neither kind of participant DID in the clear.
    """
    violations: List[str] = []
    public_dids = [p.wallet.public_did.text for p in world.participants]
    private_dids = [
        did.text
        for p in world.participants
        for did in p.wallet.project_identities.values()
    ]
    secrets = [s.hex() for p in world.participants for s in p.wallet.secret_material()]

    for org in world.orgs:
        blob = canonical_str(world.transcript.view(org.label))
        for text in public_dids:
            if text in blob:
                violations.append(f"{org.label} saw participant public DID")
        for hexed in secrets:
            if hexed in blob:
                violations.append(f"{org.label} saw wallet secret material")

    portal_blob = canonical_str(world.transcript.view("portal"))
    for text in private_dids:
        if text in portal_blob:
            violations.append("portal saw a pairwise DID")

    # The mediator necessarily learns inbox addresses (pairwise DIDs), but
    # must never see a participant's public DID: sources in its log are
    # transport handles and destinations are per-project inboxes.
    mediator_blob = canonical_str(world.transcript.view("mediator"))
    for text in public_dids:
        if text in mediator_blob:
            violations.append("mediator metadata held a participant public DID")
    return violations


__all__ = [
    "LogicalClock",
    "Transcript",
    "OrgActor",
    "ParticipantActor",
    "World",
    "containment_violations",
]
