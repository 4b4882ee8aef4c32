"""Decentralized identifiers, signatures, sealed envelopes, and digests.

One Ed25519 seed is the root of every identity.  The signing key is the
seed itself; the X25519 agreement key is derived from it the same way the
Ed25519 secret scalar is (SHA-512, clamp), which means the agreement
public key equals the Edwards-to-Montgomery conversion of the
verification key.  A DID therefore carries everything needed to verify
signatures *and* to seal envelopes to its controller: resolution of a
pairwise (private) DID never touches a registry.

DID text form: ``did:key:z`` + base58btc(0xed 0x01 || verification_key).

Envelopes are sealed with an ephemeral X25519 key agreement, HKDF-SHA256,
and ChaCha20Poly1305.  The header (recipient, ephemeral key, nonce) is
authenticated as AAD, so flipping any bit of a serialized envelope breaks
decryption.  Sender authentication, when requested, is an Ed25519
signature carried *inside* the ciphertext — the wire form never reveals
who sealed it.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Union

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .canonical import b64u_decode, b64u_encode, canonical_bytes


class IdentityError(Exception):
    """Key material or DID handling failure."""


class EnvelopeError(IdentityError):
    """Envelope failed to open: tampered, misaddressed, or malformed."""


class DidResolutionError(IdentityError):
    """DID could not be resolved to a document."""


# ---------------------------------------------------------------------------
# base58btc (the pip mirror has no base58 package; the codec is ~20 lines)
# ---------------------------------------------------------------------------

_B58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
_B58_INDEX = {c: i for i, c in enumerate(_B58_ALPHABET)}


def base58btc_encode(data: bytes) -> str:
    num = int.from_bytes(data, "big")
    out = []
    while num:
        num, rem = divmod(num, 58)
        out.append(_B58_ALPHABET[rem])
    pad = 0
    for byte in data:
        if byte:
            break
        pad += 1
    return "1" * pad + "".join(reversed(out))


def base58btc_decode(text: str) -> bytes:
    num = 0
    for char in text:
        try:
            num = num * 58 + _B58_INDEX[char]
        except KeyError:
            raise IdentityError(f"invalid base58 character {char!r}") from None
    raw = num.to_bytes((num.bit_length() + 7) // 8, "big")
    pad = 0
    for char in text:
        if char != "1":
            break
        pad += 1
    return b"\x00" * pad + raw


# ---------------------------------------------------------------------------
# Curve arithmetic for offline resolution
# ---------------------------------------------------------------------------

_P = 2**255 - 19


def ed25519_public_to_x25519(verification_key: bytes) -> bytes:
    """Map an Ed25519 public key to the matching X25519 public key.

    Birational map u = (1 + y) / (1 - y) on the Montgomery u-coordinate.
    Because the agreement secret is derived from the same seed as the
    signing scalar, this conversion yields exactly the controller's
    agreement public key — the basis of offline DID resolution.
    """
    if len(verification_key) != 32:
        raise IdentityError("verification key must be 32 bytes")
    y = int.from_bytes(verification_key, "little") & ((1 << 255) - 1)
    if y >= _P or y == 1:
        raise IdentityError("verification key has no Montgomery image")
    u = (1 + y) * pow(1 - y, _P - 2, _P) % _P
    return u.to_bytes(32, "little")


def _clamp_scalar(raw: bytes) -> bytes:
    scalar = bytearray(raw)
    scalar[0] &= 248
    scalar[31] &= 127
    scalar[31] |= 64
    return bytes(scalar)


# ---------------------------------------------------------------------------
# Entropy plumbing — injectable so the harness can replay runs bit-for-bit
# ---------------------------------------------------------------------------


class SystemEntropy:
    """Default entropy source (os.urandom)."""

    def randbytes(self, n: int) -> bytes:
        return os.urandom(n)


def as_entropy(rng_or_seed: Union[None, int, Any]) -> Any:
    """Normalize ``None`` | int seed | randbytes-provider to a provider."""
    if rng_or_seed is None:
        return SystemEntropy()
    if isinstance(rng_or_seed, int):
        import random

        return random.Random(rng_or_seed)
    if hasattr(rng_or_seed, "randbytes"):
        return rng_or_seed
    raise IdentityError("rng must be None, an int seed, or provide randbytes()")


# ---------------------------------------------------------------------------
# Key material
# ---------------------------------------------------------------------------

_PCT_MESSAGE = b"pairwise-consistency-self-test"


@dataclass
class KeyPair:
    """Ed25519 signing pair plus the seed-derived X25519 agreement pair."""

    seed: bytes = field(repr=False)
    signing_key: Ed25519PrivateKey = field(repr=False)
    verification_key: bytes
    agreement_key: X25519PrivateKey = field(repr=False)
    agreement_public: bytes

    @classmethod
    def generate(cls, rng: Any = None) -> "KeyPair":
        return cls.from_seed(as_entropy(rng).randbytes(32))

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        if len(seed) != 32:
            raise IdentityError("seed must be 32 bytes")
        signing_key = Ed25519PrivateKey.from_private_bytes(seed)
        verification_key = signing_key.public_key().public_bytes_raw()
        agreement_secret = _clamp_scalar(hashlib.sha512(seed).digest()[:32])
        agreement_key = X25519PrivateKey.from_private_bytes(agreement_secret)
        agreement_public = agreement_key.public_key().public_bytes_raw()
        pair = cls(
            seed=seed,
            signing_key=signing_key,
            verification_key=verification_key,
            agreement_key=agreement_key,
            agreement_public=agreement_public,
        )
        pair._pairwise_consistency_check()
        return pair

    def _pairwise_consistency_check(self) -> None:
        """Reject defective key material at generation time.

        Standard generate-time hygiene: a sign/verify round trip, a two-way
        key-agreement check against a fresh ephemeral, and a cross-check
        that the agreement public key matches the Edwards-to-Montgomery
        image of the verification key (offline resolution depends on it).
        """
        probe = self.signing_key.sign(_PCT_MESSAGE)
        try:
            Ed25519PublicKey.from_public_bytes(self.verification_key).verify(
                probe, _PCT_MESSAGE
            )
        except InvalidSignature as exc:  # pragma: no cover - defensive
            raise IdentityError("signing pair failed consistency check") from exc
        ephemeral = X25519PrivateKey.generate()
        ours = self.agreement_key.exchange(ephemeral.public_key())
        try:
            theirs = ephemeral.exchange(
                X25519PublicKey.from_public_bytes(self.agreement_public)
            )
        except ValueError as exc:
            raise IdentityError("agreement pair failed consistency check") from exc
        if ours != theirs:  # pragma: no cover - defensive
            raise IdentityError("agreement pair failed consistency check")
        if ed25519_public_to_x25519(self.verification_key) != self.agreement_public:
            raise IdentityError("agreement key does not match verification key")


# ---------------------------------------------------------------------------
# DIDs and documents
# ---------------------------------------------------------------------------

_MULTICODEC_ED25519 = b"\xed\x01"
_DID_PREFIX = "did:key:z"

PUBLIC = "public"
PRIVATE = "private"


@dataclass(eq=False)
class Did:
    """A DID with (optionally) its controlling key material.

    ``kind`` records how the holder uses the identifier — ``public`` DIDs
    are registered and discoverable, ``private`` ones exist only inside a
    pairwise relationship.  The text encoding is identical for both; the
    distinction is an access property, not a format.
    """

    kind: str
    text: str
    keys: Optional[KeyPair] = field(default=None, repr=False)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Did) and other.text == self.text

    def __hash__(self) -> int:
        return hash(self.text)

    @property
    def verification_key(self) -> bytes:
        return verification_key_from_did(self.text)


@dataclass
class DidDocument:
    did: str
    kind: str
    verification_key: bytes
    agreement_key: bytes
    endpoint: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "did": self.did,
            "kind": self.kind,
            "verification_key": b64u_encode(self.verification_key),
            "agreement_key": b64u_encode(self.agreement_key),
            "endpoint": self.endpoint,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DidDocument":
        return cls(
            did=data["did"],
            kind=data["kind"],
            verification_key=b64u_decode(data["verification_key"]),
            agreement_key=b64u_decode(data["agreement_key"]),
            endpoint=data.get("endpoint"),
        )


def encode_did(verification_key: bytes) -> str:
    return _DID_PREFIX + base58btc_encode(_MULTICODEC_ED25519 + verification_key)


def verification_key_from_did(did_text: str) -> bytes:
    """Extract the Ed25519 key a DID certifies.  Pure parsing, no lookup."""
    if not did_text.startswith(_DID_PREFIX):
        raise DidResolutionError(f"not a did:key identifier: {did_text!r}")
    raw = base58btc_decode(did_text[len(_DID_PREFIX) :])
    if raw[:2] != _MULTICODEC_ED25519 or len(raw) != 34:
        raise DidResolutionError("unsupported multicodec or key length")
    return raw[2:]


def create_did(kind: str, rng: Any = None) -> Did:
    """Mint a fresh DID of the given kind with new key material.

    Creation is deliberately the heaviest identity operation: after the
    keypair's own consistency checks, the encoded text must round-trip
    back to the verification key, and the resolution self-test proves
    the new identity can open an envelope sealed against nothing but
    that text (see :func:`_resolution_self_test`).
    """
    if kind not in (PUBLIC, PRIVATE):
        raise IdentityError(f"unknown DID kind {kind!r}")
    entropy = as_entropy(rng)
    keys = KeyPair.generate(entropy)
    did = Did(kind=kind, text=encode_did(keys.verification_key), keys=keys)
    if verification_key_from_did(did.text) != keys.verification_key:
        raise IdentityError("encoded DID failed self-certification round trip")
    _resolution_self_test(did, entropy)
    return did


def did_from_seed(kind: str, seed: bytes) -> Did:
    keys = KeyPair.from_seed(seed)
    return Did(kind=kind, text=encode_did(keys.verification_key), keys=keys)


def document_for(did_text: str, kind: str = PRIVATE, endpoint: Optional[str] = None) -> DidDocument:
    """Synthesize the document a DID certifies about itself."""
    verification_key = verification_key_from_did(did_text)
    return DidDocument(
        did=did_text,
        kind=kind,
        verification_key=verification_key,
        agreement_key=ed25519_public_to_x25519(verification_key),
        endpoint=endpoint,
    )


class DidRegistry:
    """Shared directory of *public* DID documents (orgs, portal, authority).

    Private DIDs never appear here: they resolve offline via
    :func:`resolve_did`, which synthesizes their documents from the DID
    text itself.
    """

    def __init__(self) -> None:
        self._documents: Dict[str, DidDocument] = {}
        import threading

        self._lock = threading.Lock()

    def register(self, did: Did, endpoint: Optional[str] = None) -> DidDocument:
        if did.kind != PUBLIC:
            raise IdentityError("only public DIDs are registered")
        doc = document_for(did.text, kind=PUBLIC, endpoint=endpoint)
        with self._lock:
            self._documents[did.text] = doc
        return doc

    def set_endpoint(self, did_text: str, endpoint: str) -> None:
        with self._lock:
            if did_text not in self._documents:
                raise DidResolutionError(f"unregistered DID: {did_text}")
            self._documents[did_text].endpoint = endpoint

    def get(self, did_text: str) -> Optional[DidDocument]:
        with self._lock:
            return self._documents.get(did_text)

    def __contains__(self, did_text: str) -> bool:
        with self._lock:
            return did_text in self._documents


def resolve_did(
    did_text: str,
    kind: str = PUBLIC,
    registry: Optional[DidRegistry] = None,
) -> DidDocument:
    """Resolve a DID to its document.

    Public DIDs must be present in the registry (their endpoint lives
    there); private DIDs resolve offline — the document is synthesized
    from the identifier and carries no endpoint.
    """
    if kind == PUBLIC:
        if registry is None:
            raise DidResolutionError("public resolution requires a registry")
        doc = registry.get(did_text)
        if doc is None:
            raise DidResolutionError(f"unknown public DID: {did_text}")
        return doc
    if kind == PRIVATE:
        return document_for(did_text, kind=PRIVATE, endpoint=None)
    raise DidResolutionError(f"unknown DID kind {kind!r}")


# ---------------------------------------------------------------------------
# Signatures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Signature:
    signer: str  # DID text
    value: bytes

    def to_dict(self) -> Dict[str, str]:
        return {"signer": self.signer, "value": b64u_encode(self.value)}

    @classmethod
    def from_dict(cls, data: Dict[str, str]) -> "Signature":
        return cls(signer=data["signer"], value=b64u_decode(data["value"]))


def sign(payload: bytes, did: Did) -> Signature:
    if did.keys is None:
        raise IdentityError("cannot sign without key material")
    return Signature(signer=did.text, value=did.keys.signing_key.sign(payload))


def verify(payload: bytes, signature: Signature, verification_key: Optional[bytes] = None) -> bool:
    """Check a signature; the key defaults to the one the signer DID certifies."""
    if verification_key is None:
        try:
            verification_key = verification_key_from_did(signature.signer)
        except IdentityError:
            return False
    if len(signature.value) != 64:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(verification_key).verify(
            signature.value, payload
        )
        return True
    except (InvalidSignature, ValueError):
        return False


# ---------------------------------------------------------------------------
# Digests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Digest:
    raw: bytes

    def __post_init__(self) -> None:
        if len(self.raw) != 32:
            raise IdentityError("digest must be 32 bytes")

    @property
    def hex(self) -> str:
        return self.raw.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        try:
            raw = bytes.fromhex(text)
        except ValueError:
            raise IdentityError(f"not a hex digest: {text!r}") from None
        return cls(raw)


def digest(data: bytes) -> Digest:
    return Digest(hashlib.sha256(data).digest())


# ---------------------------------------------------------------------------
# Sealed envelopes
# ---------------------------------------------------------------------------

_HKDF_INFO = b"ccn-envelope-v1"


@dataclass
class Envelope:
    recipient: str  # DID text
    ephemeral_key: bytes
    nonce: bytes
    ciphertext: bytes

    def to_dict(self) -> Dict[str, str]:
        return {
            "recipient": self.recipient,
            "epk": b64u_encode(self.ephemeral_key),
            "nonce": b64u_encode(self.nonce),
            "ct": b64u_encode(self.ciphertext),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, str]) -> "Envelope":
        return cls(
            recipient=data["recipient"],
            ephemeral_key=b64u_decode(data["epk"]),
            nonce=b64u_decode(data["nonce"]),
            ciphertext=b64u_decode(data["ct"]),
        )


def serialize_envelope(envelope: Envelope) -> bytes:
    return canonical_bytes(envelope.to_dict())


def envelope_from_bytes(data: bytes) -> Envelope:
    from .canonical import from_canonical

    try:
        envelope = Envelope.from_dict(from_canonical(data))
    except (KeyError, ValueError, TypeError) as exc:
        raise EnvelopeError("malformed envelope") from exc
    # Only the canonical wire form is admissible: anything else (reordered
    # keys, whitespace, base64 aliases) would alias a different digest for
    # the same ciphertext, and consent proofs hash this exact byte string.
    if serialize_envelope(envelope) != data:
        raise EnvelopeError("non-canonical envelope encoding")
    return envelope


def _derive_key(shared: bytes, ephemeral_public: bytes, recipient_agreement: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=_HKDF_INFO + ephemeral_public + recipient_agreement,
    ).derive(shared)


def _header_aad(recipient: str, ephemeral_public: bytes, nonce: bytes) -> bytes:
    return canonical_bytes(
        {
            "epk": b64u_encode(ephemeral_public),
            "nonce": b64u_encode(nonce),
            "recipient": recipient,
        }
    )


def _sender_binding(message: bytes, recipient: str) -> bytes:
    return canonical_bytes(
        {"msg": b64u_encode(message), "recipient": recipient}
    )


def seal_envelope(
    plaintext: bytes,
    recipient: DidDocument,
    sender: Optional[Did] = None,
    rng: Any = None,
) -> Envelope:
    """Seal ``plaintext`` for the recipient's agreement key.

    With ``sender`` given, an inner signature binding the message to the
    recipient rides inside the ciphertext; an eavesdropper learns nothing
    about the sender from the wire form either way.
    """
    entropy = as_entropy(rng)
    ephemeral = X25519PrivateKey.from_private_bytes(
        _clamp_scalar(entropy.randbytes(32))
    )
    ephemeral_public = ephemeral.public_key().public_bytes_raw()
    shared = ephemeral.exchange(
        X25519PublicKey.from_public_bytes(recipient.agreement_key)
    )
    key = _derive_key(shared, ephemeral_public, recipient.agreement_key)
    nonce = entropy.randbytes(12)
    inner: Dict[str, Any] = {"msg": b64u_encode(plaintext), "sender": None, "sig": None}
    if sender is not None:
        binding = sign(_sender_binding(plaintext, recipient.did), sender)
        inner["sender"] = sender.text
        inner["sig"] = b64u_encode(binding.value)
    aad = _header_aad(recipient.did, ephemeral_public, nonce)
    ciphertext = ChaCha20Poly1305(key).encrypt(nonce, canonical_bytes(inner), aad)
    return Envelope(
        recipient=recipient.did,
        ephemeral_key=ephemeral_public,
        nonce=nonce,
        ciphertext=ciphertext,
    )


def open_envelope(envelope: Envelope, recipient: Did) -> Tuple[bytes, Optional[str]]:
    """Open an envelope addressed to ``recipient``.

    Returns ``(plaintext, sender_did_text_or_None)``.  Raises
    :class:`EnvelopeError` on misaddressing, tampering, or a failed inner
    sender signature.
    """
    if recipient.keys is None:
        raise EnvelopeError("recipient has no key material")
    if envelope.recipient != recipient.text:
        raise EnvelopeError("envelope addressed to a different DID")
    try:
        shared = recipient.keys.agreement_key.exchange(
            X25519PublicKey.from_public_bytes(envelope.ephemeral_key)
        )
    except ValueError as exc:
        raise EnvelopeError("invalid ephemeral key") from exc
    key = _derive_key(shared, envelope.ephemeral_key, recipient.keys.agreement_public)
    aad = _header_aad(envelope.recipient, envelope.ephemeral_key, envelope.nonce)
    try:
        inner_bytes = ChaCha20Poly1305(key).decrypt(
            envelope.nonce, envelope.ciphertext, aad
        )
    except InvalidTag as exc:
        raise EnvelopeError("envelope authentication failed") from exc
    from .canonical import from_canonical

    try:
        inner = from_canonical(inner_bytes)
        plaintext = b64u_decode(inner["msg"])
        sender_text = inner.get("sender")
        sig_text = inner.get("sig")
    except (KeyError, ValueError, TypeError) as exc:
        raise EnvelopeError("malformed envelope interior") from exc
    if sender_text is not None:
        signature = Signature(signer=sender_text, value=b64u_decode(sig_text or ""))
        if not verify(_sender_binding(plaintext, recipient.text), signature):
            raise EnvelopeError("sender signature failed")
    return plaintext, sender_text


_RESOLUTION_PROBE = b"did-resolution-self-test"


def _resolution_self_test(did: Did, rng: Any) -> None:
    """Prove a newly minted DID works from its text alone.

    Counterparties seal envelopes to a pairwise DID straight from the
    identifier, with no directory lookup.  An identity that cannot open
    mail addressed to its self-resolved document is defective, so one
    seal/open round trip — resolution, key agreement, AEAD — gates every
    creation.
    """
    doc = document_for(did.text, kind=did.kind)
    try:
        plaintext, sender = open_envelope(
            seal_envelope(_RESOLUTION_PROBE, doc, rng=rng), did
        )
    except EnvelopeError as exc:
        raise IdentityError("new DID failed resolution self-test") from exc
    if plaintext != _RESOLUTION_PROBE or sender is not None:
        raise IdentityError("new DID failed resolution self-test")
