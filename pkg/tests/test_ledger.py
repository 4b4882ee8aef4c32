"""Consent ledger: roles, state machine, MVCC commits, journal replay."""

import random

import pytest

from ccn.identity import Signature, create_did, digest, sign
from ccn.ledger import (
    ConsentLedger,
    LedgerClient,
    LedgerError,
    LedgerIdentity,
    ROLE_AUDITOR,
    ROLE_ORGANIZATION,
    ROLE_PORTAL,
    TxCode,
    tx_signing_bytes,
)


def proof_hex(tag) -> str:
    return digest(f"consent-form-{tag}".encode()).hex


def make_members(ledger, seed_base=100):
    org = create_did("public", seed_base)
    portal = create_did("public", seed_base + 1)
    auditor = create_did("public", seed_base + 2)
    for did, role in (
        (org, ROLE_ORGANIZATION),
        (portal, ROLE_PORTAL),
        (auditor, ROLE_AUDITOR),
    ):
        ledger.admit(LedgerIdentity(did.text, role, did.keys.verification_key))
    return (
        LedgerClient(ledger, org),
        LedgerClient(ledger, portal),
        LedgerClient(ledger, auditor),
    )


@pytest.fixture
def ledger():
    instance = ConsentLedger(batch_size=1)
    yield instance
    instance.close()


def test_publish_terms_roundtrip(ledger):
    org, _, _ = make_members(ledger)
    ref = org.publish_consent_terms("proj-a", 1, proof_hex("terms-a"))
    record = ledger.get_terms(org.identity_id, "proj-a", 1)
    assert record.terms_digest == proof_hex("terms-a")
    assert record.published_at == (ref.height, ref.index)
    assert ledger.terms_by_ref(ref).project_id == "proj-a"


def test_terms_are_append_only(ledger):
    org, _, _ = make_members(ledger)
    org.publish_consent_terms("proj-a", 1, proof_hex("v1"))
    with pytest.raises(LedgerError) as err:
        org.publish_consent_terms("proj-a", 1, proof_hex("v1b"))
    assert err.value.code == TxCode.DUPLICATE_TERMS
    org.publish_consent_terms("proj-a", 2, proof_hex("v2"))
    assert ledger.get_terms(org.identity_id, "proj-a", 1).terms_digest == proof_hex("v1")
    assert ledger.get_terms(org.identity_id, "proj-a", 2).terms_digest == proof_hex("v2")


def test_terms_role_and_ownership(ledger):
    org, portal, _ = make_members(ledger)
    with pytest.raises(LedgerError) as err:
        portal.publish_consent_terms("proj-a", 1, proof_hex("t"))
    assert err.value.code == TxCode.FORBIDDEN
    # an org cannot publish terms in another org's name
    stranger = create_did("public", 300)
    ledger.admit(
        LedgerIdentity(stranger.text, ROLE_ORGANIZATION, stranger.keys.verification_key)
    )
    impostor = LedgerClient(ledger, stranger)
    with pytest.raises(LedgerError) as err:
        impostor.ledger.submit(
            "publish_consent_terms",
            {
                "org_did": org.identity_id,
                "project_id": "proj-a",
                "version": 1,
                "terms_digest": proof_hex("t"),
            },
            stranger.text,
            "n0",
            sign(
                tx_signing_bytes(
                    "publish_consent_terms",
                    {
                        "org_did": org.identity_id,
                        "project_id": "proj-a",
                        "version": 1,
                        "terms_digest": proof_hex("t"),
                    },
                    stranger.text,
                    "n0",
                ),
                stranger,
            ),
        )
    assert err.value.code == TxCode.FORBIDDEN


def test_publish_proof_and_duplicate(ledger):
    _, portal, _ = make_members(ledger)
    ref = portal.publish_consent_proof(proof_hex(1))
    record, located = portal.query_consent_proof(proof_hex(1))
    assert record.state == "valid"
    assert record.publisher == portal.identity_id
    assert located == ref
    with pytest.raises(LedgerError) as err:
        portal.publish_consent_proof(proof_hex(1))
    assert err.value.code == TxCode.DUPLICATE_KEY


def test_proof_role_enforcement(ledger):
    org, portal, auditor = make_members(ledger)
    with pytest.raises(LedgerError) as err:
        org.publish_consent_proof(proof_hex(2))
    assert err.value.code == TxCode.FORBIDDEN
    portal.publish_consent_proof(proof_hex(2))
    with pytest.raises(LedgerError) as err:
        auditor.revoke_consent(proof_hex(2))
    assert err.value.code == TxCode.FORBIDDEN
    # auditors still read everything
    record, _ = auditor.query_consent_proof(proof_hex(2))
    assert record.state == "valid"


def test_unadmitted_submitter_rejected_before_ordering(ledger):
    make_members(ledger)
    ghost = create_did("public", 400)
    client = LedgerClient(ledger, ghost)
    before = ledger.height()
    with pytest.raises(LedgerError) as err:
        client.publish_consent_proof(proof_hex(3))
    assert err.value.code == TxCode.UNKNOWN_IDENTITY
    assert ledger.height() == before


def test_bad_signature_rejected(ledger):
    _, portal, _ = make_members(ledger)
    args = {"proof": proof_hex(4)}
    imposter_key = create_did("public", 401)
    bad = sign(
        tx_signing_bytes("publish_consent_proof", args, portal.identity_id, "n1"),
        imposter_key,
    )
    with pytest.raises(LedgerError) as err:
        ledger.submit(
            "publish_consent_proof",
            args,
            portal.identity_id,
            "n1",
            Signature(portal.identity_id, bad.value),
        )
    assert err.value.code == TxCode.BAD_SIGNATURE


def test_malformed_args_rejected(ledger):
    _, portal, _ = make_members(ledger)
    for args in (
        {"proof": "zz"},
        {"proof": proof_hex(5), "extra": 1},
        {},
    ):
        nonce, signature = portal._sign("publish_consent_proof", args)
        with pytest.raises(LedgerError) as err:
            ledger.submit("publish_consent_proof", args, portal.identity_id, nonce, signature)
        assert err.value.code == TxCode.BAD_REQUEST


def test_duplicate_transaction_rejected(ledger):
    _, portal, _ = make_members(ledger)
    args = {"proof": proof_hex(6)}
    nonce = "fixed-nonce"
    signature = sign(
        tx_signing_bytes("publish_consent_proof", args, portal.identity_id, nonce),
        portal.signer,
    )
    ledger.submit("publish_consent_proof", args, portal.identity_id, nonce, signature)
    with pytest.raises(LedgerError) as err:
        ledger.submit("publish_consent_proof", args, portal.identity_id, nonce, signature)
    assert err.value.code == TxCode.DUPLICATE_TX


def test_query_not_found_and_read_only(tmp_path):
    ledger = ConsentLedger(journal_path=tmp_path / "journal.bin", batch_size=1)
    try:
        _, portal, _ = make_members(ledger)
        portal.publish_consent_proof(proof_hex(7))
        journal_before = (tmp_path / "journal.bin").read_bytes()
        portal.query_consent_proof(proof_hex(7))
        with pytest.raises(LedgerError) as err:
            portal.query_consent_proof(proof_hex(8))
        assert err.value.code == TxCode.NOT_FOUND
        assert (tmp_path / "journal.bin").read_bytes() == journal_before
    finally:
        ledger.close()


def test_revoke_once_then_typed_error(ledger):
    _, portal, _ = make_members(ledger)
    portal.publish_consent_proof(proof_hex(9))
    portal.revoke_consent(proof_hex(9))
    record, _ = portal.query_consent_proof(proof_hex(9))
    assert record.state == "revoked"
    assert record.revoked_at is not None
    with pytest.raises(LedgerError) as err:
        portal.revoke_consent(proof_hex(9))
    assert err.value.code == TxCode.ALREADY_REVOKED
    with pytest.raises(LedgerError) as err:
        portal.revoke_consent(proof_hex(10))
    assert err.value.code == TxCode.UNKNOWN_KEY


def test_concurrent_revokes_one_commit():
    ledger = ConsentLedger(batch_size=64, batch_timeout=30.0)
    try:
        _, portal, _ = make_members(ledger)
        portal.publish_consent_proof_async(proof_hex(11))
        ledger.flush()
        futures = [portal.revoke_consent_async(proof_hex(11)) for _ in range(8)]
        ledger.flush()
        successes, conflicts = 0, 0
        for future in futures:
            try:
                future.result()
                successes += 1
            except LedgerError as err:
                assert err.code == TxCode.VERSION_CONFLICT
                conflicts += 1
        assert successes == 1
        assert conflicts == 7
    finally:
        ledger.close()


def test_update_supersedes_atomically(ledger):
    _, portal, _ = make_members(ledger)
    old, new = proof_hex("old"), proof_hex("new")
    portal.publish_consent_proof(old)
    revoke_ref, publish_ref = portal.update_consent(old, new)
    assert revoke_ref == publish_ref  # one transaction, two records
    old_record, _ = portal.query_consent_proof(old)
    new_record, _ = portal.query_consent_proof(new)
    assert old_record.state == "revoked"
    assert old_record.superseded_by == new
    assert new_record.state == "valid"
    assert new_record.superseded_by is None
    tx = ledger.get_tx(publish_ref)
    assert tx["op"] == "update_consent"
    assert len(tx["write_set"]) == 2


def test_update_failure_changes_nothing(tmp_path):
    ledger = ConsentLedger(journal_path=tmp_path / "journal.bin", batch_size=1)
    try:
        _, portal, _ = make_members(ledger)
        a, b, c = proof_hex("a"), proof_hex("b"), proof_hex("c")
        portal.publish_consent_proof(a)
        portal.publish_consent_proof(b)
        before = ledger.world_state_digest()
        # replacement proof collides with an existing record
        with pytest.raises(LedgerError) as err:
            portal.update_consent(a, b)
        assert err.value.code == TxCode.DUPLICATE_KEY
        # source proof is already revoked
        portal.revoke_consent(a)
        after_revoke = ledger.world_state_digest()
        with pytest.raises(LedgerError) as err:
            portal.update_consent(a, c)
        assert err.value.code == TxCode.ALREADY_REVOKED
        ledger.flush()
        assert ledger.world_state_digest() == after_revoke
        assert before != after_revoke
        # the journal agrees: a replayed replica lands on the same state
        replica = ConsentLedger.replay(tmp_path / "journal.bin")
        assert replica.world_state_digest() == ledger.world_state_digest()
    finally:
        ledger.close()


def _workload(ledger, seed=0):
    org, portal, _ = make_members(ledger, seed_base=500)
    rng = random.Random(seed)
    org.publish_consent_terms("proj-a", 1, proof_hex("terms"))
    published = []
    for i in range(40):
        tag = f"{seed}-{i}"
        portal.publish_consent_proof(proof_hex(tag))
        published.append(proof_hex(tag))
    for tag in rng.sample(published, 15):
        portal.revoke_consent(tag)
    survivors = [p for p in published if p not in set()]
    old = next(p for p in survivors if portal.query_consent_proof(p)[0].state == "valid")
    portal.update_consent(old, proof_hex(f"{seed}-replacement"))
    ledger.flush()


def test_replay_rebuilds_identical_state(tmp_path):
    ledger = ConsentLedger(journal_path=tmp_path / "journal.bin", batch_size=4, batch_timeout=0.002)
    try:
        _workload(ledger, seed=7)
        state_digest = ledger.world_state_digest()
        chain = ledger.block_digests()
    finally:
        ledger.close()
    replica = ConsentLedger.replay(tmp_path / "journal.bin")
    assert replica.world_state_digest() == state_digest
    assert replica.block_digests() == chain
    # reopening appends to the same chain instead of restarting it
    reopened = ConsentLedger(journal_path=tmp_path / "journal.bin", batch_size=1)
    try:
        assert reopened.block_digests() == chain
        _, portal, _ = make_members(reopened, seed_base=600)
        portal.publish_consent_proof(proof_hex("post-reopen"))
        assert reopened.height() == len(chain) - 1 + 1
    finally:
        reopened.close()


def test_journal_tamper_detected(tmp_path):
    path = tmp_path / "journal.bin"
    ledger = ConsentLedger(journal_path=path, batch_size=2, batch_timeout=0.002)
    try:
        _workload(ledger, seed=3)
    finally:
        ledger.close()
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0x40
    path.write_bytes(bytes(blob))
    with pytest.raises(LedgerError) as err:
        ConsentLedger.replay(path)
    assert err.value.code == TxCode.JOURNAL_CORRUPT


def test_verify_chain_reports_tamper(ledger):
    _, portal, _ = make_members(ledger)
    portal.publish_consent_proof(proof_hex(12))
    assert ledger.verify_chain()["ok"] is True
    ledger._blocks[1]["txs"][0]["args"]["proof"] = proof_hex(13)
    report = ledger.verify_chain()
    assert report["ok"] is False
    assert report["height"] == 1


def test_per_key_histories_follow_state_machine(tmp_path):
    ledger = ConsentLedger(journal_path=tmp_path / "journal.bin", batch_size=4, batch_timeout=0.002)
    try:
        _workload(ledger, seed=11)
        histories = ledger.proof_histories()
        assert histories  # non-trivial workload
        for sequence in histories.values():
            assert sequence in (["publish"], ["publish", "revoke"])
    finally:
        ledger.close()


def test_batch_timeout_cuts_without_flush():
    ledger = ConsentLedger(batch_size=50, batch_timeout=0.05)
    try:
        _, portal, _ = make_members(ledger)
        future = portal.publish_consent_proof_async(proof_hex(14))
        ref = future.result(timeout=2.0)
        assert ref.height == 1
    finally:
        ledger.close()


def test_randomized_concurrent_schedules_commit_exactly_once():
    rng = random.Random(2024)
    ledger = ConsentLedger(batch_size=512, batch_timeout=30.0)
    try:
        _, portal, _ = make_members(ledger)
        keys = [proof_hex(f"mvcc-{i}") for i in range(30)]
        for key in keys:
            portal.publish_consent_proof_async(key)
        ledger.flush()
        committed = {key: 0 for key in keys}
        for _ in range(4):
            round_futures = []
            for key in rng.sample(keys, rng.randrange(5, 20)):
                for _ in range(rng.randrange(1, 5)):
                    round_futures.append((key, portal.revoke_consent_async(key)))
            ledger.flush()
            for key, future in round_futures:
                try:
                    future.result()
                    committed[key] += 1
                except LedgerError as err:
                    assert err.code in (TxCode.VERSION_CONFLICT, TxCode.ALREADY_REVOKED)
        assert all(count <= 1 for count in committed.values())
        for key, count in committed.items():
            record, _ = portal.query_consent_proof(key)
            assert (record.state == "revoked") == (count == 1)
    finally:
        ledger.close()
