"""Wallets: pairwise identities, dual-signed forms, proofs, persistence."""

import random

import pytest

from ccn.canonical import b64u_encode, canonical_bytes
from ccn.didauth import check_token, make_challenge
from ccn.identity import create_did, digest, document_for, seal_envelope, serialize_envelope
from ccn.ledger import (
    ConsentLedger,
    LedgerClient,
    LedgerIdentity,
    ROLE_PORTAL,
)
from ccn.wallet import (
    ConsentDossier,
    PrivateConsentForm,
    ROLE_ORGANIZATION,
    ROLE_PARTICIPANT,
    Wallet,
    WalletError,
    load_wallet,
    save_wallet,
    verify_consent_package,
    verify_org_signature,
    verify_participant_signature,
)


class TickClock:
    def __init__(self):
        self.t = 0.0

    def now(self) -> float:
        self.t += 1.0
        return self.t


class CountingEntropy:
    """Seeded entropy that counts how often it is drawn from."""

    def __init__(self, seed):
        self._rng = random.Random(seed)
        self.calls = 0

    def randbytes(self, n):
        self.calls += 1
        return self._rng.randbytes(n)


TERMS_TX = {"height": 1, "index": 0, "tx_id": "ab" * 32}
CHOICES = {"data_sharing": "yes", "recontact": "no"}


def consent_pair(seed=0, clock=None):
    clock = clock or TickClock()
    org = Wallet(ROLE_ORGANIZATION, rng=1000 + seed, clock=clock)
    participant = Wallet(ROLE_PARTICIPANT, rng=2000 + seed, clock=clock)
    org.sponsor_project("proj-a", TERMS_TX, ["data_sharing", "recontact"])
    private = participant.create_project_identity("proj-a")
    form = org.build_consent_form("proj-a", private.text)
    completed = participant.complete_and_sign_form(form, dict(CHOICES))
    return org, participant, completed


def test_wallet_roles_and_public_did():
    wallet = Wallet(ROLE_PARTICIPANT, rng=1)
    assert wallet.public_did.kind == "public"
    with pytest.raises(WalletError):
        Wallet("courier")


def test_preseeded_pool_is_drawn_before_fresh_generation():
    entropy = CountingEntropy(7)
    wallet = Wallet(ROLE_PARTICIPANT, rng=entropy, preseed=3)
    assert len(wallet.did_pool) == 3
    after_init = entropy.calls
    for i in range(3):
        wallet.create_project_identity(f"proj-{i}")
    assert entropy.calls == after_init  # pool hits draw no new entropy
    assert len(wallet.did_pool) == 0
    wallet.create_project_identity("proj-3")
    assert entropy.calls > after_init  # pool empty -> fresh key material


def test_project_identities_are_unique_and_single_use():
    wallet = Wallet(ROLE_PARTICIPANT, rng=2)
    texts = {wallet.create_project_identity(f"proj-{i}").text for i in range(50)}
    assert len(texts) == 50
    assert wallet.public_did.text not in texts
    with pytest.raises(WalletError) as err:
        wallet.create_project_identity("proj-0")
    assert err.value.code == "project-identity-exists"


def test_herd_privacy_gate():
    wallet = Wallet(ROLE_PARTICIPANT, rng=3)  # default threshold 10
    wallet.check_catalog_privacy(10)
    wallet.check_catalog_privacy(25)
    with pytest.raises(WalletError) as err:
        wallet.check_catalog_privacy(9)
    assert err.value.code == "herd-privacy"
    roomy = Wallet(ROLE_PARTICIPANT, rng=4, herd_threshold=3)
    roomy.check_catalog_privacy(3)


def test_form_template_is_blank_and_org_signed():
    clock = TickClock()
    org = Wallet(ROLE_ORGANIZATION, rng=5, clock=clock)
    org.sponsor_project("proj-a", TERMS_TX, ["data_sharing"])
    form = org.build_consent_form("proj-a", create_did("private", 6).text)
    assert form.fields == [["data_sharing", ""]]
    assert form.completed_at is None
    assert form.participant_signature is None
    assert verify_org_signature(form)
    with pytest.raises(WalletError):
        org.sponsor_project("proj-b", TERMS_TX, ["dup", "dup"])
    with pytest.raises(WalletError):
        org.build_consent_form("proj-unknown", "did:key:z6Mkfake")


def test_complete_and_sign_binds_choices():
    _, participant, completed = consent_pair()
    assert completed.fields == [["data_sharing", "yes"], ["recontact", "no"]]
    assert completed.completed_at is not None
    assert verify_org_signature(completed)  # still, after completion
    assert verify_participant_signature(completed)
    assert participant.form_copies and participant.form_copies[-1] is completed


def test_complete_rejections():
    clock = TickClock()
    org = Wallet(ROLE_ORGANIZATION, rng=7, clock=clock)
    participant = Wallet(ROLE_PARTICIPANT, rng=8, clock=clock)
    org.sponsor_project("proj-a", TERMS_TX, ["data_sharing"])
    private = participant.create_project_identity("proj-a")
    form = org.build_consent_form("proj-a", private.text)

    stranger_form = org.build_consent_form("proj-a", create_did("private", 9).text)
    with pytest.raises(WalletError) as err:
        participant.complete_and_sign_form(stranger_form, {})
    assert err.value.code == "wrong-participant"

    with pytest.raises(WalletError) as err:
        participant.complete_and_sign_form(form, {"no-such-field": "x"})
    assert err.value.code == "unknown-field"

    unsigned = PrivateConsentForm.from_dict(form.to_dict())
    unsigned.org_signature = None
    with pytest.raises(WalletError) as err:
        participant.complete_and_sign_form(unsigned, {})
    assert err.value.code == "org-signature-invalid"

    with pytest.raises(WalletError) as err:
        org.complete_and_sign_form(form, {})
    assert err.value.code == "wrong-role"


def test_tamper_matrix_breaks_the_right_signature():
    _, _, completed = consent_pair(seed=1)

    reissued = PrivateConsentForm.from_dict(completed.to_dict())
    reissued.project_id = "proj-b"
    assert not verify_org_signature(reissued)

    value_swap = PrivateConsentForm.from_dict(completed.to_dict())
    value_swap.fields = [["data_sharing", "no"], ["recontact", "no"]]
    assert verify_org_signature(value_swap)  # org signed names, not choices
    assert not verify_participant_signature(value_swap)

    name_swap = PrivateConsentForm.from_dict(completed.to_dict())
    name_swap.fields = [["data_sharing_all", "yes"], ["recontact", "no"]]
    assert not verify_org_signature(name_swap)
    assert not verify_participant_signature(name_swap)

    later = PrivateConsentForm.from_dict(completed.to_dict())
    later.completed_at = (later.completed_at or 0) + 1
    assert verify_org_signature(later)
    assert not verify_participant_signature(later)

    _, _, other = consent_pair(seed=2)
    grafted = PrivateConsentForm.from_dict(completed.to_dict())
    grafted.org_signature = other.org_signature
    assert not verify_org_signature(grafted)
    assert not verify_participant_signature(grafted)


def test_generate_consent_proof_checks_preconditions():
    org, participant, completed = consent_pair(seed=3)
    org_doc = document_for(org.public_did.text, kind="public")

    dossier = participant.generate_consent_proof(completed, org_doc)
    assert dossier.status == "pending"
    assert dossier.proof == digest(serialize_envelope(dossier.envelope)).hex
    assert participant.dossiers[-1] is dossier

    blank = org.build_consent_form("proj-a", completed.participant_did)
    with pytest.raises(WalletError) as err:
        participant.generate_consent_proof(blank, org_doc)
    assert err.value.code == "participant-signature-invalid"

    other_doc = document_for(create_did("public", 44).text, kind="public")
    with pytest.raises(WalletError) as err:
        participant.generate_consent_proof(completed, other_doc)
    assert err.value.code == "wrong-recipient"

    with pytest.raises(WalletError) as err:
        org.generate_consent_proof(completed, org_doc)
    assert err.value.code == "wrong-role"


def test_hundred_random_forms_have_distinct_proofs():
    clock = TickClock()
    rng = random.Random(99)
    org = Wallet(ROLE_ORGANIZATION, rng=50, clock=clock)
    participant = Wallet(ROLE_PARTICIPANT, rng=51, clock=clock)
    org_doc = document_for(org.public_did.text, kind="public")
    proofs = set()
    for i in range(100):
        project = f"proj-{i}"
        org.sponsor_project(project, TERMS_TX, ["data_sharing", "recontact"])
        private = participant.create_project_identity(project)
        form = org.build_consent_form(project, private.text)
        completed = participant.complete_and_sign_form(
            form,
            {
                "data_sharing": rng.choice(["yes", "no"]),
                "recontact": rng.choice(["yes", "no"]),
            },
        )
        proofs.add(participant.generate_consent_proof(completed, org_doc).proof)
    assert len(proofs) == 100


def _ledger_with_portal():
    ledger = ConsentLedger(batch_size=1)
    portal_did = create_did("public", 600)
    ledger.admit(LedgerIdentity(portal_did.text, ROLE_PORTAL, portal_did.keys.verification_key))
    return ledger, LedgerClient(ledger, portal_did)


def test_verify_consent_package_accepts_and_rejects():
    org, participant, completed = consent_pair(seed=4)
    org_doc = document_for(org.public_did.text, kind="public")
    dossier = participant.generate_consent_proof(completed, org_doc)
    ledger, portal_client = _ledger_with_portal()
    try:
        ref = portal_client.publish_consent_proof(dossier.proof)
        participant.attach_consent_tx(dossier, ref.to_dict())
        expected = completed.participant_did

        result = verify_consent_package(
            org, dossier.envelope, dossier.proof, ref.to_dict(), portal_client, expected
        )
        assert result.accepted and result.reason is None

        reasons = set()

        wrong_proof = digest(b"not the envelope").hex
        reasons.add(
            verify_consent_package(
                org, dossier.envelope, wrong_proof, ref.to_dict(), portal_client, expected
            ).reason
        )

        foreign = seal_envelope(b"junk", document_for(create_did("public", 601).text))
        reasons.add(
            verify_consent_package(
                org,
                foreign,
                digest(serialize_envelope(foreign)).hex,
                ref.to_dict(),
                portal_client,
                expected,
            ).reason
        )

        reasons.add(
            verify_consent_package(
                org,
                dossier.envelope,
                dossier.proof,
                ref.to_dict(),
                portal_client,
                create_did("private", 602).text,
            ).reason
        )

        unpublished = participant.generate_consent_proof(completed, org_doc)
        reasons.add(
            verify_consent_package(
                org,
                unpublished.envelope,
                unpublished.proof,
                ref.to_dict(),
                portal_client,
                expected,
            ).reason
        )

        portal_client.revoke_consent(dossier.proof)
        reasons.add(
            verify_consent_package(
                org, dossier.envelope, dossier.proof, ref.to_dict(), portal_client, expected
            ).reason
        )

        assert None not in reasons
        assert len(reasons) == 5  # every failure mode names itself distinctly
    finally:
        ledger.close()


def test_bad_signatures_inside_package_are_named():
    org, participant, completed = consent_pair(seed=5)
    org_doc = document_for(org.public_did.text, kind="public")
    ledger, portal_client = _ledger_with_portal()
    try:
        private = participant.project_identity("proj-a")

        broken_org = PrivateConsentForm.from_dict(completed.to_dict())
        broken_org.project_id = "proj-rewritten"
        env1 = seal_envelope(
            canonical_bytes(broken_org.to_dict()), org_doc, sender=private, rng=7
        )
        proof1 = digest(serialize_envelope(env1)).hex
        ref1 = portal_client.publish_consent_proof(proof1)
        result = verify_consent_package(
            org, env1, proof1, ref1.to_dict(), portal_client, completed.participant_did
        )
        assert (result.accepted, result.reason) == (False, "org-signature-invalid")

        broken_part = PrivateConsentForm.from_dict(completed.to_dict())
        broken_part.fields = [["data_sharing", "no"], ["recontact", "no"]]
        env2 = seal_envelope(
            canonical_bytes(broken_part.to_dict()), org_doc, sender=private, rng=8
        )
        proof2 = digest(serialize_envelope(env2)).hex
        ref2 = portal_client.publish_consent_proof(proof2)
        result = verify_consent_package(
            org, env2, proof2, ref2.to_dict(), portal_client, completed.participant_did
        )
        assert (result.accepted, result.reason) == (False, "participant-signature-invalid")
    finally:
        ledger.close()


def test_local_consent_history_join():
    org, participant, completed = consent_pair(seed=6)
    org_doc = document_for(org.public_did.text, kind="public")
    dossier = participant.generate_consent_proof(completed, org_doc)
    ref = {"height": 2, "index": 0, "tx_id": "cd" * 32}
    participant.attach_consent_tx(dossier, ref)
    portal_view = [{"proof": dossier.proof, "consent_tx": ref, "status": "valid"}]
    history = participant.local_consent_history(portal_view)
    assert history == [
        {
            "project_id": "proj-a",
            "proof": dossier.proof,
            "consent_tx": ref,
            "wallet_status": "valid",
            "portal_status": "valid",
            "in_sync": True,
        }
    ]
    stale_view = [{"proof": dossier.proof, "consent_tx": ref, "status": "revoked"}]
    assert participant.local_consent_history(stale_view)[0]["in_sync"] is False


def test_did_auth_response_round_trip():
    wallet = Wallet(ROLE_PARTICIPANT, rng=60, clock=TickClock())
    challenge = make_challenge(wallet.public_did.text, random.Random(61), now=5.0, ttl=120.0)
    token = wallet.did_auth_response(challenge)
    ok, reason = check_token(token, challenge, now=6.0)
    assert (ok, reason) == (True, None)
    ok, reason = check_token(token, challenge, now=5.0 + 121.0)
    assert (ok, reason) == (False, "expired")


def test_transport_handles():
    wallet = Wallet(ROLE_PARTICIPANT, rng=62)
    fresh = {wallet.transport_handle(True) for _ in range(10)}
    assert len(fresh) == 10
    stable = {wallet.transport_handle(False) for _ in range(10)}
    assert len(stable) == 1
    assert wallet.public_did.text not in next(iter(stable))


def _contains_secret(blob: bytes, secrets) -> bool:
    for secret in secrets:
        if (
            secret in blob
            or b64u_encode(secret).encode() in blob
            or secret.hex().encode() in blob
        ):
            return True
    return False


def test_no_secret_material_leaves_the_wallet():
    org, participant, completed = consent_pair(seed=7)
    org_doc = document_for(org.public_did.text, kind="public")
    dossier = participant.generate_consent_proof(completed, org_doc)
    challenge = make_challenge(participant.public_did.text, random.Random(1), 1.0, 120.0)
    token = participant.did_auth_response(challenge)
    outbound = [
        serialize_envelope(dossier.envelope),
        canonical_bytes(completed.to_dict()),
        canonical_bytes(token.to_dict()),
        dossier.proof.encode(),
    ]
    secrets = participant.secret_material() + org.secret_material()
    assert secrets  # the oracle has teeth
    for blob in outbound:
        assert not _contains_secret(blob, secrets)


def test_wallet_file_round_trip(tmp_path):
    org, participant, completed = consent_pair(seed=8)
    org_doc = document_for(org.public_did.text, kind="public")
    participant.generate_consent_proof(completed, org_doc)
    path = tmp_path / "participant.wallet"
    save_wallet(participant, path, "hunter2 but stronger")

    loaded = load_wallet(path, "hunter2 but stronger")
    assert loaded.public_did.text == participant.public_did.text
    assert set(loaded.project_identities) == {"proj-a"}
    assert loaded.dossiers[0].proof == participant.dossiers[0].proof
    assert verify_participant_signature(loaded.dossiers[0].form)
    # restored keys still work
    refreshed = loaded.complete_and_sign_form(
        org.build_consent_form("proj-a", loaded.project_identity("proj-a").text),
        {"data_sharing": "no"},
    )
    assert verify_participant_signature(refreshed)

    with pytest.raises(WalletError) as err:
        load_wallet(path, "wrong passphrase")
    assert err.value.code == "bad-passphrase"


def test_wallet_file_is_opaque_at_rest(tmp_path):
    _, participant, completed = consent_pair(seed=9)
    path = tmp_path / "p.wallet"
    save_wallet(participant, path, "s3cret")
    blob = path.read_bytes()
    assert not _contains_secret(blob, participant.secret_material())
    assert b"data_sharing" not in blob  # field names stay inside the ciphertext
    assert participant.public_did.text.encode() not in blob
