"""Socket surfaces: framing, typed error passthrough, ledger parity."""

import pytest

from ccn.identity import create_did, digest
from ccn.ledger import (
    ConsentLedger,
    LedgerClient,
    LedgerError,
    LedgerIdentity,
    ROLE_ORGANIZATION,
    ROLE_PORTAL,
    TxCode,
)
from ccn.service import ApiClient, ApiServer, RemoteLedger, ServiceError, ledger_api


@pytest.fixture
def stack():
    ledger = ConsentLedger(batch_size=1)
    org = create_did("public", 700)
    portal = create_did("public", 701)
    ledger.admit(LedgerIdentity(org.text, ROLE_ORGANIZATION, org.keys.verification_key))
    ledger.admit(LedgerIdentity(portal.text, ROLE_PORTAL, portal.keys.verification_key))
    server = ApiServer(ledger_api(ledger))
    host, port = server.start()
    remote = RemoteLedger(host, port)
    yield ledger, org, portal, remote, (host, port)
    remote.close()
    server.stop()
    ledger.close()


def test_ledger_over_socket_matches_in_process(stack):
    ledger, org, portal, remote, _ = stack
    remote_portal = LedgerClient(remote, portal)
    remote_org = LedgerClient(remote, org)

    terms_ref = remote_org.publish_consent_terms("proj-x", 1, digest(b"terms").hex)
    assert ledger.terms_by_ref(terms_ref).project_id == "proj-x"

    proof = digest(b"sealed form").hex
    ref = remote_portal.publish_consent_proof(proof)
    assert remote.height() == ledger.height()
    record, located = remote_portal.query_consent_proof(proof)
    assert located == ref
    in_process_record, _ = ledger.get_consent_record(proof)
    assert record == in_process_record
    assert remote.verify_chain()["ok"] is True


def test_typed_errors_cross_the_wire(stack):
    _, _, portal, remote, _ = stack
    remote_portal = LedgerClient(remote, portal)
    proof = digest(b"dup").hex
    remote_portal.publish_consent_proof(proof)
    with pytest.raises(LedgerError) as err:
        remote_portal.publish_consent_proof(proof)
    assert err.value.code == TxCode.DUPLICATE_KEY
    with pytest.raises(LedgerError) as err:
        remote_portal.query_consent_proof(digest(b"missing").hex)
    assert err.value.code == TxCode.NOT_FOUND


def test_unknown_endpoint_and_bad_frames(stack):
    *_, address = stack
    client = ApiClient(*address)
    with pytest.raises(ServiceError) as err:
        client.request("no-such-endpoint", {})
    assert err.value.code == "unknown-endpoint"
    # a second request on the same connection still works
    assert isinstance(client.request("height"), int)
    client.close()
