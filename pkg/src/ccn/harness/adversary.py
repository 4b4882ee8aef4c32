"""Adversarial probes: colluding orgs, curious portal, curious mediator.

Each probe gives the adversary its full legitimate observation surface and
a concrete attack, then scores the attack against harness-held ground
truth.  Where the attacker has no signal it guesses independently and
uniformly, so the success count is binomial and the normal-approximation
interval in :mod:`.stats` is the right acceptance band.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Set, Tuple

from ..identity import PRIVATE, PUBLIC, create_did
from ..ledger import ROLE_PORTAL, ConsentLedger, LedgerClient, LedgerIdentity
from ..mediator import Mediator, MediatorError
from ..portal import Portal, PortalConfig, PortalError
from ..wallet import ROLE_PARTICIPANT, Wallet
from .config import ScenarioConfig
from .flows import (
    complete_join,
    join_project,
    step_browse_catalog,
    step_portal_session,
)
from .stats import binomial_ci
from .world import LogicalClock, ParticipantActor, World

# Identifier-shaped tokens: DIDs, long hex (digests, tx ids, tokens),
# long base64url (signatures, ciphertexts, keys).  Vocabulary such as
# field names and message types stays below these length floors.
_IDENTIFIER = re.compile(
    r"did:key:z[1-9A-HJ-NP-Za-km-z]+|[0-9a-f]{32,}|[A-Za-z0-9_-]{22,}"
)


def harvest_identifiers(value: Any) -> Set[str]:
    """Collect every identifier-shaped string reachable in a structure."""
    found: Set[str] = set()
    if isinstance(value, str):
        found.update(_IDENTIFIER.findall(value))
    elif isinstance(value, dict):
        for key, inner in value.items():
            found.update(harvest_identifiers(key))
            found.update(harvest_identifiers(inner))
    elif isinstance(value, (list, tuple)):
        for inner in value:
            found.update(harvest_identifiers(inner))
    return found


@dataclass
class LinkageResult:
    probe: str
    trials: int
    guesses: int
    correct: int
    baseline: float
    ci_low: float
    ci_high: float
    identifier_intersection: List[str] = field(default_factory=list)
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.correct / self.guesses if self.guesses else 0.0

    @property
    def within_ci(self) -> bool:
        return self.ci_low <= self.accuracy <= self.ci_high

    def to_dict(self) -> Dict[str, Any]:
        return {
            "probe": self.probe,
            "trials": self.trials,
            "guesses": self.guesses,
            "correct": self.correct,
            "accuracy": round(self.accuracy, 6),
            "baseline": self.baseline,
            "ci": [round(self.ci_low, 6), round(self.ci_high, 6)],
            "within_ci": self.within_ci,
            "identifier_intersection": self.identifier_intersection,
            "extras": self.extras,
        }


# ----------------------------------------------------------------------
# Probe 1: colluding organizations
# ----------------------------------------------------------------------


def _org_view(org) -> Dict[str, Set[str]]:
    """Identifier sets per connection, minus the org's shared vocabulary.

    Tokens that show up for two or more distinct connections at the same
    org (its own DID, terms references, and the like) carry no linking
    signal and are stripped before cross-org comparison.
    """
    per_connection: Dict[str, Set[str]] = {}
    for entry in org.accepted + org.rejected:
        tokens = harvest_identifiers(entry)
        per_connection.setdefault(entry["private_did"], set()).update(tokens)
    counts: Dict[str, int] = {}
    for tokens in per_connection.values():
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
    shared = {token for token, n in counts.items() if n > 1}
    return {did: tokens - shared for did, tokens in per_connection.items()}


def adversary_link_projects(
    trials: int = 200,
    n_participants: int = 32,
    seed: int = 0,
    reuse_identities: bool = False,
) -> LinkageResult:
    """Two colluding orgs try to match their participants across projects.

    Every participant joins one project at each org.  The adversary pools
    both transcripts, extracts identifier-shaped tokens per connection,
    and matches connections across orgs by token overlap; absent overlap
    it guesses uniformly.  With pairwise DIDs the overlap is empty by
    construction.  ``reuse_identities`` is the negative control: the same
    private DID is forced onto both projects, and matching must become
    perfect.
    """
    master = random.Random(seed)
    total_correct = 0
    total_guesses = 0
    intersection: Set[str] = set()

    for trial in range(trials):
        world_seed = master.randrange(2**63)
        # The attacker's coin flips must be independent of world
        # construction, or shared PRNG state masquerades as signal.
        trial_rng = random.Random(master.randrange(2**63))
        config = ScenarioConfig(
            n_participants=n_participants,
            n_orgs=2,
            n_projects=2,
            herd_threshold=2,
            seed=world_seed,
        )
        world = World.build(config)
        try:
            for actor in world.participants:
                step_portal_session(world, actor)
                step_browse_catalog(world, actor)
                if reuse_identities:
                    shared = create_did(PRIVATE, actor.wallet.rng)
                    for pid in world.project_ids:
                        actor.wallet.project_identities[pid] = shared
            pairs: List[Tuple[ParticipantActor, str]] = [
                (actor, pid)
                for actor in world.participants
                for pid in world.project_ids
            ]
            trial_rng.shuffle(pairs)  # deny the adversary arrival-order luck
            for actor, pid in pairs:
                if reuse_identities:
                    complete_join(world, actor, actor.wallet.project_identity(pid), pid)
                else:
                    join_project(world, actor, pid)

            views = [_org_view(org) for org in world.orgs]
            left, right = views[0], views[1]
            correct, guesses, overlap = _match_connections(
                world, left, right, trial_rng
            )
            total_correct += correct
            total_guesses += guesses
            intersection.update(overlap)
            intersection.update(true_pair_identifier_intersection(world, views))
        finally:
            world.close()

    baseline = 1.0 / n_participants
    low, high = binomial_ci(baseline, total_guesses)
    return LinkageResult(
        probe="link-projects" + ("-control" if reuse_identities else ""),
        trials=trials,
        guesses=total_guesses,
        correct=total_correct,
        baseline=baseline,
        ci_low=low,
        ci_high=high,
        identifier_intersection=sorted(intersection),
        extras={"reuse_identities": reuse_identities},
    )


def _match_connections(
    world: World,
    left: Dict[str, Set[str]],
    right: Dict[str, Set[str]],
    rng: random.Random,
) -> Tuple[int, int, Set[str]]:
    """Score the cross-org matching attack for one trial."""
    right_dids = sorted(right)
    overlap_union: Set[str] = set()
    correct = 0
    guesses = 0
    for left_did in sorted(left):
        scored = [
            (len(left[left_did] & right[rd]), rd) for rd in right_dids
        ]
        best_score, best_rd = max(scored, key=lambda pair: pair[0])
        if best_score > 0:
            guess = best_rd
            overlap_union.update(left[left_did] & right[guess])
        else:
            guess = right_dids[rng.randrange(len(right_dids))]
        left_owner = world.participant_for_private_did(left_did)
        right_owner = world.participant_for_private_did(guess)
        if left_owner is not None and left_owner is right_owner:
            correct += 1
        guesses += 1
    return correct, guesses, overlap_union


def true_pair_identifier_intersection(
    world: World, views: Optional[List[Dict[str, Set[str]]]] = None
) -> Set[str]:
    """Union of cross-org token overlaps for ground-truth pairs only."""
    if views is None:
        views = [_org_view(org) for org in world.orgs[:2]]
    owners: Dict[str, List[str]] = {}
    for view in views:
        for did in view:
            actor = world.participant_for_private_did(did)
            if actor is not None:
                owners.setdefault(actor.label, []).append(did)
    union: Set[str] = set()
    for dids in owners.values():
        if len(dids) == 2:
            union.update(views[0].get(dids[0], set()) & views[1].get(dids[1], set()))
            union.update(views[0].get(dids[1], set()) & views[1].get(dids[0], set()))
    return union


# ----------------------------------------------------------------------
# Probe 2: honest-but-curious portal
# ----------------------------------------------------------------------


def adversary_portal(
    trials: int = 20,
    n_participants: int = 10,
    seed: int = 0,
) -> LinkageResult:
    """The portal guesses which project each published proof belongs to.

    Proofs are digests of sealed envelopes, so request content gives the
    portal nothing; its guesses are uniform over the catalog.  The probe
    also confirms the publish endpoint rejects any extra fields (nothing
    beyond session + proof can reach the portal), and reports the
    timing-correlation accuracy a portal + mediator coalition would get,
    which is why routing metadata must stay out of the portal's hands.
    """
    master = random.Random(seed)
    catalog_size = 10
    total_correct = 0
    total_guesses = 0
    timing_correct = 0
    timing_guesses = 0
    schema_closed = True

    for trial in range(trials):
        trial_seed = master.randrange(2**63)
        trial_rng = random.Random(trial_seed)
        config = ScenarioConfig(
            n_participants=n_participants,
            n_orgs=2,
            n_projects=catalog_size,
            herd_threshold=catalog_size,
            seed=trial_seed,
        )
        world = World.build(config)
        try:
            truth: Dict[str, str] = {}
            for actor in world.participants:
                step_portal_session(world, actor)
                step_browse_catalog(world, actor)
                project = world.project_ids[trial_rng.randrange(catalog_size)]
                outcome = join_project(world, actor, project)
                truth[outcome.proof] = project

            # the publish endpoint accepts nothing beyond session + proof
            probe_session = world.participants[0].session
            try:
                world.portal.api_handle(
                    "publish",
                    {"session": probe_session, "proof": "0" * 64, "project": "proj-00"},
                )
                schema_closed = False
            except PortalError as exc:
                schema_closed = schema_closed and exc.code == "schema"

            publishes = [
                e for e in world.portal.request_log if e["endpoint"] == "publish"
            ]
            routes = world.mediator.metadata_view()
            org_of = {
                org.wallet.public_did.text: org for org in world.orgs
            }
            for event in publishes:
                proof = event["data"]["proof"]
                if proof not in truth:
                    continue
                # content-based guess: uniform over the catalog
                guess = world.project_ids[trial_rng.randrange(catalog_size)]
                if guess == truth[proof]:
                    total_correct += 1
                total_guesses += 1
                # collusion upper bound: latest org-bound route before the
                # publish names the org; guess among that org's projects
                prior = [
                    r
                    for r in routes
                    if r["destination"] in org_of and r["ts"] < event["ts"]
                ]
                if prior:
                    org = org_of[prior[-1]["destination"]]
                    timing_guess = org.projects[trial_rng.randrange(len(org.projects))]
                    if timing_guess == truth[proof]:
                        timing_correct += 1
                    timing_guesses += 1
        finally:
            world.close()

    baseline = 1.0 / catalog_size
    low, high = binomial_ci(baseline, total_guesses)
    return LinkageResult(
        probe="portal-project-guess",
        trials=trials,
        guesses=total_guesses,
        correct=total_correct,
        baseline=baseline,
        ci_low=low,
        ci_high=high,
        extras={
            "schema_closed": schema_closed,
            "timing_collusion_accuracy": (
                round(timing_correct / timing_guesses, 6) if timing_guesses else None
            ),
            "timing_collusion_guesses": timing_guesses,
        },
    )


# ----------------------------------------------------------------------
# Probe 3: honest-but-curious mediator
# ----------------------------------------------------------------------


@dataclass
class MediatorProbeResult:
    pseudonymous_linkable_pairs: int
    direct_linkable_pairs: int
    public_did_leaks: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pseudonymous_linkable_pairs": self.pseudonymous_linkable_pairs,
            "direct_linkable_pairs": self.direct_linkable_pairs,
            "public_did_leaks": self.public_did_leaks,
        }


def _linkable_pairs(world: World) -> int:
    """Inbox DIDs a curious mediator can tie to one source handle.

    Attribution: an org-bound route is followed by replies to a private
    inbox; the mediator blames that inbox on the source handle of the
    latest org-bound route.  Stable handles collect a participant's
    inboxes; per-session handles collect at most one each.
    """
    org_dids = {org.wallet.public_did.text for org in world.orgs}
    attributed: Dict[str, Set[str]] = {}
    last_org_source: Optional[str] = None
    for entry in world.mediator.metadata_view():
        if entry["destination"] in org_dids:
            last_org_source = entry["source"]
        elif last_org_source is not None:
            attributed.setdefault(last_org_source, set()).add(entry["destination"])
    return sum(
        len(inboxes) * (len(inboxes) - 1) // 2 for inboxes in attributed.values()
    )


def adversary_mediator(seed: int = 0, joins_per_participant: int = 3) -> MediatorProbeResult:
    """Compare mediator linkage with and without pseudonymous transport."""
    results: Dict[bool, int] = {}
    leaks = 0
    for pseudonymous in (True, False):
        config = ScenarioConfig(
            n_participants=6,
            n_orgs=2,
            n_projects=12,
            seed=seed,
            pseudonymous_transport=pseudonymous,
        )
        world = World.build(config)
        try:
            picker = random.Random(seed ^ 0x5EED)
            for actor in world.participants:
                step_portal_session(world, actor)
                step_browse_catalog(world, actor)
                projects = picker.sample(world.project_ids, joins_per_participant)
                for pid in projects:
                    join_project(world, actor, pid)
            results[pseudonymous] = _linkable_pairs(world)
            blob = world.mediator.log_bytes().decode()
            leaks += sum(
                1
                for p in world.participants
                if p.wallet.public_did.text in blob
            )
        finally:
            world.close()
    return MediatorProbeResult(
        pseudonymous_linkable_pairs=results[True],
        direct_linkable_pairs=results[False],
        public_did_leaks=leaks,
    )


# ----------------------------------------------------------------------
# Probe 4: stolen and stale auth tokens
# ----------------------------------------------------------------------


@dataclass
class AuthHygieneResult:
    valid_total: int
    valid_accepted: int
    replayed_total: int
    replayed_accepted: int
    expired_total: int
    expired_accepted: int
    rejection_codes: Dict[str, int] = field(default_factory=dict)

    @property
    def clean(self) -> bool:
        return (
            self.valid_accepted == self.valid_total
            and self.replayed_accepted == 0
            and self.expired_accepted == 0
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "valid": [self.valid_accepted, self.valid_total],
            "replayed": [self.replayed_accepted, self.replayed_total],
            "expired": [self.expired_accepted, self.expired_total],
            "rejection_codes": dict(sorted(self.rejection_codes.items())),
            "clean": self.clean,
        }


def auth_hygiene(
    valid: int = 1000,
    replayed: int = 1000,
    expired: int = 1000,
    seed: int = 0,
    n_wallets: int = 8,
    ttl: float = 5.0,
) -> AuthHygieneResult:
    """Present replayed and expired auth tokens in a randomized schedule.

    Every challenge-response verifier (portal and mediator) gets a mixed
    diet of fresh tokens, second presentations of already-consumed
    tokens, and tokens answered after the challenge TTL.  Acceptance is a
    returned session or inbox key; anything accepted outside the ``valid``
    category is an auth-hygiene failure.  The logical clock makes expiry
    deterministic: every observation ticks it by one.
    """
    master = random.Random(seed)
    clock = LogicalClock()
    ledger = ConsentLedger(batch_size=1)
    portal_did = create_did(PUBLIC, random.Random(master.randrange(2**63)))
    ledger.admit(
        LedgerIdentity(portal_did.text, ROLE_PORTAL, portal_did.keys.verification_key)
    )
    portal = Portal(
        LedgerClient(ledger, portal_did),
        config=PortalConfig(challenge_ttl=ttl),
        rng=random.Random(master.randrange(2**63)),
        clock=clock,
    )
    mediator = Mediator(
        rng=random.Random(master.randrange(2**63)),
        clock=clock,
        challenge_ttl=ttl,
    )
    wallets = [
        Wallet(
            ROLE_PARTICIPANT,
            rng=random.Random(master.randrange(2**63)),
            clock=clock,
        )
        for _ in range(n_wallets)
    ]
    for wallet in wallets:
        challenge = portal.challenge(wallet.public_did.text)
        portal.register(wallet.public_did.text, wallet.did_auth_response(challenge))

    schedule = ["valid"] * valid + ["replay"] * replayed + ["expired"] * expired
    master.shuffle(schedule)

    result = AuthHygieneResult(
        valid_total=valid,
        valid_accepted=0,
        replayed_total=replayed,
        replayed_accepted=0,
        expired_total=expired,
        expired_accepted=0,
    )

    def present(verifier: str, wallet: Wallet, token) -> Tuple[bool, str]:
        try:
            if verifier == "portal":
                portal.authenticate(token)
            else:
                mediator.register_inbox(wallet.public_did.text, token)
            return True, ""
        except (PortalError, MediatorError) as exc:
            return False, exc.code

    try:
        for kind in schedule:
            wallet = wallets[master.randrange(n_wallets)]
            verifier = ("portal", "mediator")[master.randrange(2)]
            source = portal if verifier == "portal" else mediator
            challenge = source.challenge(wallet.public_did.text)
            token = wallet.did_auth_response(challenge)
            if kind == "expired":
                for _ in range(int(ttl) + 1):
                    clock.now()
                accepted, code = present(verifier, wallet, token)
                if accepted:
                    result.expired_accepted += 1
                else:
                    result.rejection_codes[code] = result.rejection_codes.get(code, 0) + 1
            elif kind == "replay":
                first, _ = present(verifier, wallet, token)
                assert first, "setup presentation must succeed"
                accepted, code = present(verifier, wallet, token)
                if accepted:
                    result.replayed_accepted += 1
                else:
                    result.rejection_codes[code] = result.rejection_codes.get(code, 0) + 1
            else:
                accepted, _ = present(verifier, wallet, token)
                if accepted:
                    result.valid_accepted += 1
    finally:
        ledger.close()
    return result


__all__ = [
    "LinkageResult",
    "MediatorProbeResult",
    "AuthHygieneResult",
    "harvest_identifiers",
    "adversary_link_projects",
    "adversary_portal",
    "adversary_mediator",
    "auth_hygiene",
    "true_pair_identifier_intersection",
]
