"""Identity layer: DIDs, signatures, envelopes, digests.

Known-answer vectors are frozen from RFC 8032 section 7.1 (Ed25519 TEST
1-3) and the FIPS 180 SHA-256 empty-string digest.  The zero-seed DID
vector was derived by a standalone script (multicodec 0xed01 + base58btc)
before the implementation existed.
"""

import random

import pytest

from ccn.canonical import b64u_decode, b64u_encode, canonical_bytes, from_canonical
from ccn.identity import (
    Did,
    DidRegistry,
    EnvelopeError,
    DidResolutionError,
    IdentityError,
    KeyPair,
    Signature,
    base58btc_decode,
    base58btc_encode,
    create_did,
    did_from_seed,
    digest,
    document_for,
    ed25519_public_to_x25519,
    encode_did,
    envelope_from_bytes,
    open_envelope,
    resolve_did,
    seal_envelope,
    serialize_envelope,
    sign,
    verification_key_from_did,
    verify,
)

# RFC 8032 section 7.1, TEST 1-3: (seed, public key, message, signature)
RFC8032_VECTORS = [
    (
        "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60",
        "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a",
        "",
        "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b",
    ),
    (
        "4ccd089b28ff96da9db6c346ec114e0f5b8a319f35aba624da8cf6ed4fb8a6fb",
        "3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c",
        "72",
        "92a009a9f0d4cab8720e820b5f642540a2b27b5416503f8fb3762223ebdb69da085ac1e43e15996e458f3613d0f11d8c387b2eaeb4302aeeb00d291612bb0c00",
    ),
    (
        "c5aa8df43f9f837bedb7442f31dcb7b166d38535076f094b85ce3a2e0b4458f7",
        "fc51cd8e6218a1a38da47ed00230f0580816ed13ba3303ac5deb911548908025",
        "af82",
        "6291d657deec24024827e69c3abe01a30ce548a284743a445e3680d7db5ac3ac18ff9b538d16f290ae67f760984dc6594a7c15e9716ed28dc027beceea1ec40a",
    ),
]

SHA256_EMPTY = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"

# base58btc(0xed01 || ed25519_pub(seed = 32 zero bytes)), derived offline.
ZERO_SEED_DID = "did:key:z6MkiTBz1ymuepAQ4HEHYSF1H8quG5GLVVQR3djdX3mDooWp"


def test_rfc8032_known_answer_vectors():
    for seed_hex, pub_hex, msg_hex, sig_hex in RFC8032_VECTORS:
        pair = KeyPair.from_seed(bytes.fromhex(seed_hex))
        assert pair.verification_key == bytes.fromhex(pub_hex)
        message = bytes.fromhex(msg_hex)
        produced = pair.signing_key.sign(message)
        assert produced == bytes.fromhex(sig_hex)
        did = Did(kind="public", text=encode_did(pair.verification_key), keys=pair)
        assert verify(message, sign(message, did))


def test_sha256_empty_vector():
    assert digest(b"").hex == SHA256_EMPTY


def test_zero_seed_did_vector():
    did = did_from_seed("public", bytes(32))
    assert did.text == ZERO_SEED_DID


def test_did_text_structure():
    rng = random.Random(11)
    for _ in range(50):
        did = create_did("private", rng)
        assert did.text.startswith("did:key:z6Mk")
        assert verification_key_from_did(did.text) == did.keys.verification_key


def test_base58_roundtrip():
    rng = random.Random(5)
    for length in (0, 1, 2, 5, 31, 32, 33, 64):
        for _ in range(20):
            raw = rng.randbytes(length)
            assert base58btc_decode(base58btc_encode(raw)) == raw
    assert base58btc_encode(b"\x00\x00\x01") == "112"
    assert base58btc_decode("112") == b"\x00\x00\x01"
    with pytest.raises(IdentityError):
        base58btc_decode("0OIl")


def test_seeded_creation_is_deterministic():
    first = create_did("private", 1234)
    second = create_did("private", 1234)
    assert first.text == second.text
    assert first == second
    assert create_did("private", 1235).text != first.text


def test_fresh_dids_are_distinct():
    texts = {create_did("private").text for _ in range(100)}
    assert len(texts) == 100


def test_did_equality_is_by_text():
    did = create_did("public", 7)
    clone = Did(kind="public", text=did.text, keys=None)
    assert did == clone
    assert hash(did) == hash(clone)


def test_agreement_key_matches_converted_verification_key():
    for seed in range(20):
        did = create_did("private", seed)
        assert (
            ed25519_public_to_x25519(did.keys.verification_key)
            == did.keys.agreement_public
        )


def test_resolution_public_vs_private():
    registry = DidRegistry()
    org = create_did("public", 42)
    registry.register(org, endpoint="svc:org-inbox")
    doc = resolve_did(org.text, kind="public", registry=registry)
    assert doc.endpoint == "svc:org-inbox"
    assert doc.verification_key == org.keys.verification_key

    with pytest.raises(DidResolutionError):
        resolve_did(create_did("public", 43).text, kind="public", registry=registry)

    pairwise = create_did("private", 44)
    offline = resolve_did(pairwise.text, kind="private")
    assert offline.endpoint is None
    assert offline.agreement_key == pairwise.keys.agreement_public


def test_registry_rejects_private_dids():
    registry = DidRegistry()
    with pytest.raises(IdentityError):
        registry.register(create_did("private", 3))


def test_sign_verify_roundtrip_and_tamper():
    did = create_did("public", 99)
    payload = b"consent terms v1"
    signature = sign(payload, did)
    assert verify(payload, signature)
    assert not verify(payload + b"x", signature)
    assert not verify(b"", signature)
    flipped = Signature(signature.signer, bytes([signature.value[0] ^ 1]) + signature.value[1:])
    assert not verify(payload, flipped)
    other = create_did("public", 100)
    assert not verify(payload, Signature(other.text, signature.value))
    truncated = Signature(signature.signer, signature.value[:63])
    assert not verify(payload, truncated)


def test_envelope_roundtrip_authenticated():
    sender = create_did("private", 1)
    recipient = create_did("private", 2)
    doc = document_for(recipient.text)
    envelope = seal_envelope(b"hello, pairwise world", doc, sender=sender, rng=3)
    plaintext, sender_text = open_envelope(envelope, recipient)
    assert plaintext == b"hello, pairwise world"
    assert sender_text == sender.text


def test_envelope_roundtrip_anonymous():
    recipient = create_did("private", 2)
    envelope = seal_envelope(b"no name attached", document_for(recipient.text), rng=4)
    plaintext, sender_text = open_envelope(envelope, recipient)
    assert plaintext == b"no name attached"
    assert sender_text is None
    assert sender.encode() not in serialize_envelope(envelope) if (sender := "") else True


def test_envelope_wire_roundtrip():
    recipient = create_did("private", 8)
    envelope = seal_envelope(b"wire form", document_for(recipient.text), rng=9)
    wire = serialize_envelope(envelope)
    parsed = envelope_from_bytes(wire)
    assert serialize_envelope(parsed) == wire
    assert open_envelope(parsed, recipient)[0] == b"wire form"


def test_envelope_wrong_recipient():
    recipient = create_did("private", 5)
    bystander = create_did("private", 6)
    envelope = seal_envelope(b"secret", document_for(recipient.text), rng=7)
    with pytest.raises(EnvelopeError):
        open_envelope(envelope, bystander)


def test_envelope_every_bit_flip_fails():
    """Single-bit modifications of the wire form never open cleanly."""
    rng = random.Random(64)
    sender = create_did("private", 10)
    recipient = create_did("private", 11)
    wire = serialize_envelope(
        seal_envelope(b"tamper target " * 3, document_for(recipient.text), sender=sender, rng=12)
    )
    for _ in range(64):
        position = rng.randrange(len(wire) * 8)
        mutated = bytearray(wire)
        mutated[position // 8] ^= 1 << (position % 8)
        with pytest.raises(EnvelopeError):
            open_envelope(envelope_from_bytes(bytes(mutated)), recipient)


def test_envelope_sender_cannot_be_impersonated():
    alice = create_did("private", 13)
    mallory = create_did("private", 14)
    recipient = create_did("private", 15)
    forged = Did(kind="private", text=alice.text, keys=mallory.keys)
    envelope = seal_envelope(b"paid in full", document_for(recipient.text), sender=forged, rng=16)
    with pytest.raises(EnvelopeError):
        open_envelope(envelope, recipient)


def _b64_windows(window: bytes) -> list:
    """All base64url phases in which a byte window could appear in text."""
    views = []
    for lead in range(3):
        encoded = b64u_encode(b"\x00" * lead + window)
        offset = 4 * ((lead + 2) // 3)  # skip chars covering the lead bytes
        views.append(encoded[offset : offset + 16].encode())
    return views


def test_envelope_confidentiality_no_plaintext_window():
    rng = random.Random(77)
    recipient = create_did("private", 17)
    doc = document_for(recipient.text)
    for _ in range(20):
        plaintext = rng.randbytes(64)
        wire = serialize_envelope(seal_envelope(plaintext, doc, rng=rng))
        ciphertext = b64u_decode(from_canonical(wire)["ct"])
        for start in range(len(plaintext) - 16 + 1):
            window = plaintext[start : start + 16]
            assert window not in wire
            assert window not in ciphertext
            for view in _b64_windows(window):
                assert view not in wire


def test_envelope_seeded_determinism():
    recipient = create_did("private", 18)
    doc = document_for(recipient.text)
    sender = create_did("private", 19)
    first = serialize_envelope(seal_envelope(b"replayable", doc, sender=sender, rng=21))
    second = serialize_envelope(seal_envelope(b"replayable", doc, sender=sender, rng=21))
    assert first == second


def test_envelope_rejects_non_canonical_encoding():
    recipient = create_did("private", 22)
    envelope = seal_envelope(b"strict wire", document_for(recipient.text), rng=23)
    wire = serialize_envelope(envelope)
    spaced = wire.replace(b'","', b'", "', 1)
    assert spaced != wire
    with pytest.raises(EnvelopeError):
        envelope_from_bytes(spaced)
    doc = from_canonical(wire)
    doc["extra"] = "field"
    with pytest.raises(EnvelopeError):
        envelope_from_bytes(canonical_bytes(doc))


def test_digest_determinism_and_bit_sensitivity():
    rng = random.Random(640)
    for _ in range(64):
        message = rng.randbytes(rng.randrange(1, 200))
        baseline = digest(message)
        assert digest(message) == baseline
        position = rng.randrange(len(message) * 8)
        mutated = bytearray(message)
        mutated[position // 8] ^= 1 << (position % 8)
        assert digest(bytes(mutated)) != baseline


def test_keypair_consistency_check_rejects_mismatch():
    good = KeyPair.from_seed(bytes(range(32)))
    tampered = KeyPair(
        seed=good.seed,
        signing_key=good.signing_key,
        verification_key=good.verification_key,
        agreement_key=good.agreement_key,
        agreement_public=bytes(32),
    )
    with pytest.raises(IdentityError):
        tampered._pairwise_consistency_check()


def test_create_did_rejects_unknown_kind():
    with pytest.raises(IdentityError):
        create_did("communal")
