"""Right-to-be-forgotten probe: erasure with an audit-proof ledger.

Forgetting destroys the portal's (account DID <-> proof) association and
rewrites its store; the ledger keeps only orphaned digests.  The oracle
is a byte-level scan over every persistent store in the deployment: a
forgotten pair must co-occur nowhere, while an untouched control pair
must still be findable (so the scan itself is known to work).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Tuple

from ..canonical import b64u_encode, canonical_bytes
from ..ledger import LedgerError
from ..wallet import save_wallet
from .config import ScenarioConfig
from .flows import run_consent_flow, step_portal_session
from .world import World


@dataclass
class RtbfReport:
    forgotten_pairs: int
    revoked_on_ledger: int
    co_occurrences: int
    control_pair_present: bool
    orphan_state: str
    permanence_ok: bool
    stores: List[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return (
            self.co_occurrences == 0
            and self.control_pair_present
            and self.permanence_ok
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "forgotten_pairs": self.forgotten_pairs,
            "revoked_on_ledger": self.revoked_on_ledger,
            "co_occurrences": self.co_occurrences,
            "control_pair_present": self.control_pair_present,
            "orphan_state": self.orphan_state,
            "permanence_ok": self.permanence_ok,
            "clean": self.clean,
            "stores": self.stores,
        }


def pair_co_occurs(blob: bytes, did_text: str, proof_hex: str) -> bool:
    """Both halves of an association present in one store, any encoding."""
    proof_forms = [
        proof_hex.encode(),
        bytes.fromhex(proof_hex),
        b64u_encode(bytes.fromhex(proof_hex)).encode(),
    ]
    return did_text.encode() in blob and any(form in blob for form in proof_forms)


def _collect_stores(world: World, wallet_files: Dict[int, Any]) -> Dict[str, bytes]:
    stores: Dict[str, bytes] = {
        "portal-store": world.portal.store_bytes(),
        "mediator-log": world.mediator.log_bytes(),
    }
    if world.base_dir is not None:
        journal = world.base_dir / "ledger.journal"
        if journal.exists():
            stores["ledger-journal"] = journal.read_bytes()
        mediator_file = world.base_dir / "mediator.log"
        if mediator_file.exists():
            stores["mediator-file"] = mediator_file.read_bytes()
    for index, path in wallet_files.items():
        stores[f"wallet-{index}"] = path.read_bytes()
    return stores


def rtbf_suite(seed: int = 0) -> RtbfReport:
    """One participant forgets one consent, another forgets everything."""
    config = ScenarioConfig(n_participants=3, n_orgs=2, n_projects=10, seed=seed)
    world = World.build(config, persistent=True)
    try:
        report = run_consent_flow(world, projects=world.project_ids[:3])
        assert report.accepted == report.total
        alice, bob, carol = world.participants

        wallet_files = {}
        for actor in world.participants:
            path = world.base_dir / f"wallet-{actor.index}.enc"
            save_wallet(actor.wallet, path, passphrase=f"pp-{actor.index}")
            wallet_files[actor.index] = path

        pairs_of = lambda i: [p for p in report.pairs if p.participant == i]
        target = pairs_of(0)[0]
        bob_pairs = pairs_of(1)
        control = pairs_of(2)[0]

        one = world.portal.forget_me(alice.session, scope=target.consent_tx["tx_id"])
        everything = world.portal.forget_me(bob.session, scope="all")
        revoked = one["revoked"] + everything["revoked"]

        forgotten: List[Tuple[str, str]] = [
            (alice.wallet.public_did.text, target.proof)
        ] + [(bob.wallet.public_did.text, p.proof) for p in bob_pairs]

        stores = _collect_stores(world, wallet_files)
        co_occurrences = sum(
            1
            for blob in stores.values()
            for did_text, proof in forgotten
            if pair_co_occurs(blob, did_text, proof)
        )
        control_present = pair_co_occurs(
            stores["portal-store"], carol.wallet.public_did.text, control.proof
        )

        record, _ = world.ledger.get_consent_record(target.proof)
        orphan_state = record.state

        permanence = _replay_every_surface(world, alice, bob, carol, forgotten)

        return RtbfReport(
            forgotten_pairs=len(forgotten),
            revoked_on_ledger=revoked,
            co_occurrences=co_occurrences,
            control_pair_present=control_present,
            orphan_state=orphan_state,
            permanence_ok=permanence,
            stores=sorted(stores),
        )
    finally:
        world.close()


def _replay_every_surface(
    world: World, alice, bob, carol, forgotten: List[Tuple[str, str]]
) -> bool:
    """After erasure, no portal response can reproduce a forgotten pair."""
    from ..portal import PortalError

    # a full-account erasure also kills the account
    try:
        world.portal.login(bob.wallet.public_did.text)
        return False
    except PortalError as exc:
        if exc.code != "unknown-user":
            return False

    # re-enrolling starts from nothing
    challenge = world.portal.challenge(bob.wallet.public_did.text)
    world.portal.register(
        bob.wallet.public_did.text, bob.wallet.did_auth_response(challenge)
    )
    step_portal_session(world, bob)

    responses: List[bytes] = []
    for actor in (alice, bob, carol):
        session = actor.session if actor is not alice else alice.session
        responses.append(canonical_bytes(world.portal.consent_history(session)))
        responses.append(canonical_bytes(world.portal.list_projects(session)))
    blob = b"".join(responses)
    for _, proof in forgotten:
        if proof.encode() in blob:
            return False
    return True


__all__ = ["RtbfReport", "rtbf_suite", "pair_co_occurs"]
