"""Edge agents: participant and organization wallets.

The wallet owns all key material an actor ever uses.  A participant
wallet holds one public DID (portal-facing) and mints a fresh pairwise
DID per research project — never reused, optionally drawn from a
pre-generated pool.  Consent runs over a private form that is signed
twice:

* the organization signs the form it issues — attributes plus the field
  *names* (the template carries empty values by construction);
* the participant signs the digest of that org-signed payload, the org
  signature itself, the completed field values, and the completion time.

Either party tampering with anything afterwards breaks at least one of
the two signatures, which is what the non-repudiation suite exercises.

The consent proof is encrypt-then-hash: the completed form is sealed for
the organization, and the proof is the SHA-256 digest of the sealed
envelope's canonical wire form.  The ledger only ever sees that digest.

Wallet files are canonical JSON encrypted under a passphrase-derived key
(scrypt + ChaCha20Poly1305); nothing secret touches disk in the clear.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from .canonical import b64u_decode, b64u_encode, canonical_bytes, from_canonical
from .didauth import AuthToken, Challenge, answer_challenge
from .identity import (
    Did,
    DidDocument,
    Envelope,
    IdentityError,
    PRIVATE,
    PUBLIC,
    as_entropy,
    create_did,
    did_from_seed,
    digest,
    open_envelope,
    seal_envelope,
    serialize_envelope,
    sign,
    verify,
)

ROLE_PARTICIPANT = "participant"
ROLE_ORGANIZATION = "organization"

PENDING = "pending"
VALID = "valid"
REVOKED = "revoked"


class WalletError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class WallClock:
    def now(self) -> float:
        return time.time()


# ---------------------------------------------------------------------------
# Private consent form
# ---------------------------------------------------------------------------


@dataclass
class PrivateConsentForm:
    form_id: str
    project_id: str
    terms_tx: Dict[str, Any]  # TxRef dict of the governing consent terms
    org_did: str
    participant_did: str  # pairwise DID, the only identity the org learns
    fields: List[List[str]]  # ordered [name, value] pairs
    created_at: float
    completed_at: Optional[float] = None
    org_signature: Optional[Dict[str, str]] = None
    participant_signature: Optional[Dict[str, str]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "form_id": self.form_id,
            "project_id": self.project_id,
            "terms_tx": self.terms_tx,
            "org_did": self.org_did,
            "participant_did": self.participant_did,
            "fields": [list(pair) for pair in self.fields],
            "created_at": self.created_at,
            "completed_at": self.completed_at,
            "org_signature": self.org_signature,
            "participant_signature": self.participant_signature,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PrivateConsentForm":
        known = {
            "form_id",
            "project_id",
            "terms_tx",
            "org_did",
            "participant_did",
            "fields",
            "created_at",
            "completed_at",
            "org_signature",
            "participant_signature",
        }
        if set(data) != known:
            raise WalletError("form-malformed", "unexpected consent form shape")
        return cls(**data)

    # -- signature scopes ------------------------------------------------

    def org_payload(self) -> bytes:
        """What the organization signed: the issued template.

        Covers every attribute and the field *names*; values are blank at
        issuance, so blanking them reconstructs the signed bytes after
        the participant has filled the form in.
        """
        return canonical_bytes(
            {
                "created_at": self.created_at,
                "fields": [[name, ""] for name, _ in self.fields],
                "form_id": self.form_id,
                "org_did": self.org_did,
                "participant_did": self.participant_did,
                "project_id": self.project_id,
                "terms_tx": self.terms_tx,
            }
        )

    def participant_payload(self) -> bytes:
        """What the participant signs: org-signed content plus choices."""
        if self.org_signature is None:
            raise WalletError("form-unsigned", "form lacks the organization signature")
        return canonical_bytes(
            {
                "completed_at": self.completed_at,
                "fields": [list(pair) for pair in self.fields],
                "org_payload_digest": digest(self.org_payload()).hex,
                "org_signature": self.org_signature,
            }
        )


def as_issued_template(form: PrivateConsentForm) -> PrivateConsentForm:
    """Strip completion back off a form, recovering the org-signed template.

    Lets a participant re-complete the same issued form with new choices
    (consent update) without another round trip to the organization.
    """
    template = PrivateConsentForm.from_dict(form.to_dict())
    template.fields = [[name, ""] for name, _ in form.fields]
    template.completed_at = None
    template.participant_signature = None
    return template


def verify_org_signature(form: PrivateConsentForm) -> bool:
    if form.org_signature is None:
        return False
    signature = _sig_from_dict(form.org_signature)
    if signature is None or signature.signer != form.org_did:
        return False
    return verify(form.org_payload(), signature)


def verify_participant_signature(form: PrivateConsentForm) -> bool:
    if form.participant_signature is None or form.org_signature is None:
        return False
    signature = _sig_from_dict(form.participant_signature)
    if signature is None or signature.signer != form.participant_did:
        return False
    try:
        payload = form.participant_payload()
    except WalletError:
        return False
    return verify(payload, signature)


def _sig_from_dict(data: Dict[str, str]):
    from .identity import Signature

    try:
        return Signature.from_dict(data)
    except (KeyError, TypeError, ValueError):
        return None


# ---------------------------------------------------------------------------
# Dossier: everything the wallet keeps about one consent
# ---------------------------------------------------------------------------


@dataclass
class ConsentDossier:
    form: PrivateConsentForm
    envelope: Envelope
    proof: str  # hex digest of the sealed envelope, the on-ledger key
    consent_tx: Optional[Dict[str, Any]] = None
    status: str = PENDING

    @property
    def project_id(self) -> str:
        return self.form.project_id

    def to_dict(self) -> Dict[str, Any]:
        return {
            "form": self.form.to_dict(),
            "envelope": self.envelope.to_dict(),
            "proof": self.proof,
            "consent_tx": self.consent_tx,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ConsentDossier":
        return cls(
            form=PrivateConsentForm.from_dict(data["form"]),
            envelope=Envelope.from_dict(data["envelope"]),
            proof=data["proof"],
            consent_tx=data.get("consent_tx"),
            status=data.get("status", PENDING),
        )


@dataclass
class VerificationResult:
    accepted: bool
    reason: Optional[str] = None
    form: Optional[PrivateConsentForm] = None


# ---------------------------------------------------------------------------
# Wallet
# ---------------------------------------------------------------------------


class Wallet:
    def __init__(
        self,
        role: str,
        rng: Any = None,
        clock: Any = None,
        preseed: int = 0,
        herd_threshold: int = 10,
    ):
        if role not in (ROLE_PARTICIPANT, ROLE_ORGANIZATION):
            raise WalletError("bad-role", f"unknown wallet role {role!r}")
        self.role = role
        self.rng = as_entropy(rng)
        self.clock = clock or WallClock()
        self.herd_threshold = herd_threshold
        self.public_did: Did = create_did(PUBLIC, self.rng)
        self.project_identities: Dict[str, Did] = {}
        self.did_pool: List[Did] = [create_did(PRIVATE, self.rng) for _ in range(preseed)]
        self.dossiers: List[ConsentDossier] = []
        self.form_copies: List[PrivateConsentForm] = []
        self.accepted_packages: List[ConsentDossier] = []
        self._sponsored: Dict[str, Dict[str, Any]] = {}

    # ------------------------------------------------------------------
    # Identity management
    # ------------------------------------------------------------------

    def create_project_identity(self, project_id: str) -> Did:
        """Pairwise DID for one project: pool-first, never reused."""
        if project_id in self.project_identities:
            raise WalletError(
                "project-identity-exists", f"already joined {project_id!r}"
            )
        did = self.did_pool.pop(0) if self.did_pool else create_did(PRIVATE, self.rng)
        if any(existing.text == did.text for existing in self.project_identities.values()):
            raise WalletError("identity-reuse", "pairwise DID already bound to a project")
        self.project_identities[project_id] = did
        return did

    def project_identity(self, project_id: str) -> Did:
        try:
            return self.project_identities[project_id]
        except KeyError:
            raise WalletError("no-project-identity", f"not joined: {project_id!r}") from None

    def check_catalog_privacy(self, catalog_size: int) -> None:
        """Refuse to engage when the project catalog is too small to hide in."""
        if catalog_size < self.herd_threshold:
            raise WalletError(
                "herd-privacy",
                f"catalog lists {catalog_size} projects; need >= {self.herd_threshold}",
            )

    def did_auth_response(self, challenge: Challenge, did: Optional[Did] = None) -> AuthToken:
        return answer_challenge(challenge, did or self.public_did, self.clock.now())

    def transport_handle(self, pseudonymous: bool) -> str:
        """Source handle the transport layer shows the mediator."""
        if pseudonymous:
            return "sess-" + self.rng.randbytes(8).hex()
        return "ip-" + digest(self.public_did.text.encode()).hex[:8]

    def secret_material(self) -> List[bytes]:
        """Every secret byte string this wallet holds (egress-scan oracle)."""
        dids = [self.public_did, *self.did_pool, *self.project_identities.values()]
        secrets: List[bytes] = []
        for did in dids:
            if did.keys is not None:
                secrets.append(did.keys.seed)
                secrets.append(
                    did.keys.agreement_key.private_bytes_raw()
                )
        return secrets

    # ------------------------------------------------------------------
    # Organization side
    # ------------------------------------------------------------------

    def _require_role(self, role: str, action: str) -> None:
        if self.role != role:
            raise WalletError("wrong-role", f"{action} requires a {role} wallet")

    def sponsor_project(
        self, project_id: str, terms_tx: Dict[str, Any], field_names: List[str]
    ) -> None:
        self._require_role(ROLE_ORGANIZATION, "sponsoring a project")
        if len(set(field_names)) != len(field_names) or not field_names:
            raise WalletError("bad-template", "field names must be unique and non-empty")
        self._sponsored[project_id] = {"terms_tx": terms_tx, "field_names": list(field_names)}

    def build_consent_form(self, project_id: str, participant_did: str) -> PrivateConsentForm:
        self._require_role(ROLE_ORGANIZATION, "building a consent form")
        try:
            sponsored = self._sponsored[project_id]
        except KeyError:
            raise WalletError("unknown-project", f"not sponsoring {project_id!r}") from None
        form = PrivateConsentForm(
            form_id=self.rng.randbytes(16).hex(),
            project_id=project_id,
            terms_tx=sponsored["terms_tx"],
            org_did=self.public_did.text,
            participant_did=participant_did,
            fields=[[name, ""] for name in sponsored["field_names"]],
            created_at=self.clock.now(),
        )
        form.org_signature = sign(form.org_payload(), self.public_did).to_dict()
        return form

    def seal_for(self, plaintext: bytes, recipient: DidDocument, sender: Optional[Did] = None) -> Envelope:
        return seal_envelope(plaintext, recipient, sender=sender or self.public_did, rng=self.rng)

    def open_addressed(self, envelope: Envelope, did: Optional[Did] = None) -> Tuple[bytes, Optional[str]]:
        return open_envelope(envelope, did or self.public_did)

    # ------------------------------------------------------------------
    # Participant side
    # ------------------------------------------------------------------

    def complete_and_sign_form(
        self, form: PrivateConsentForm, choices: Dict[str, str]
    ) -> PrivateConsentForm:
        self._require_role(ROLE_PARTICIPANT, "completing a consent form")
        if not verify_org_signature(form):
            raise WalletError("org-signature-invalid", "refusing to sign an unsigned form")
        private = None
        for did in self.project_identities.values():
            if did.text == form.participant_did:
                private = did
                break
        if private is None:
            raise WalletError(
                "wrong-participant", "form addressed to a DID this wallet does not control"
            )
        known = {name for name, _ in form.fields}
        unknown = set(choices) - known
        if unknown:
            raise WalletError("unknown-field", f"choices for absent fields: {sorted(unknown)}")
        if not all(isinstance(v, str) for v in choices.values()):
            raise WalletError("bad-choice", "field values must be strings")
        completed = PrivateConsentForm.from_dict(form.to_dict())
        completed.fields = [[name, choices.get(name, "")] for name, _ in form.fields]
        completed.completed_at = self.clock.now()
        completed.participant_signature = sign(
            completed.participant_payload(), private
        ).to_dict()
        self.form_copies.append(completed)
        return completed

    def generate_consent_proof(
        self, form: PrivateConsentForm, org_doc: DidDocument
    ) -> ConsentDossier:
        """Seal the dual-signed form for the org; hash the sealed bytes.

        Both signatures are re-verified first — the wallet never mints a
        proof over a form it would itself reject.
        """
        self._require_role(ROLE_PARTICIPANT, "generating a consent proof")
        if not verify_org_signature(form):
            raise WalletError("org-signature-invalid", "form fails org signature check")
        if not verify_participant_signature(form):
            raise WalletError(
                "participant-signature-invalid", "form fails participant signature check"
            )
        if org_doc.did != form.org_did:
            raise WalletError("wrong-recipient", "sealing for a different org than the form names")
        private = self.project_identity(form.project_id)
        envelope = seal_envelope(
            canonical_bytes(form.to_dict()), org_doc, sender=private, rng=self.rng
        )
        dossier = ConsentDossier(
            form=form,
            envelope=envelope,
            proof=digest(serialize_envelope(envelope)).hex,
            status=PENDING,
        )
        self.dossiers.append(dossier)
        return dossier

    def attach_consent_tx(self, dossier: ConsentDossier, tx_ref: Dict[str, Any]) -> None:
        dossier.consent_tx = dict(tx_ref)
        dossier.status = VALID

    def local_consent_history(
        self, portal_items: List[Dict[str, Any]]
    ) -> List[Dict[str, Any]]:
        """Join wallet dossiers with the portal's view, keyed by consent tx."""
        by_tx = {
            item["consent_tx"]["tx_id"]: item
            for item in portal_items
            if item.get("consent_tx")
        }
        merged = []
        for dossier in self.dossiers:
            tx_id = (dossier.consent_tx or {}).get("tx_id")
            portal_item = by_tx.get(tx_id) if tx_id else None
            portal_status = portal_item["status"] if portal_item else None
            merged.append(
                {
                    "project_id": dossier.project_id,
                    "proof": dossier.proof,
                    "consent_tx": dossier.consent_tx,
                    "wallet_status": dossier.status,
                    "portal_status": portal_status,
                    "in_sync": portal_status == dossier.status
                    if portal_status is not None
                    else dossier.status == PENDING,
                }
            )
        return merged

    def dossier_for(self, project_id: str) -> ConsentDossier:
        for dossier in reversed(self.dossiers):
            if dossier.project_id == project_id:
                return dossier
        raise WalletError("no-dossier", f"no consent on file for {project_id!r}")


# ---------------------------------------------------------------------------
# Organization-side package verification
# ---------------------------------------------------------------------------


def verify_consent_package(
    org_wallet: Wallet,
    envelope: Envelope,
    proof_hex: str,
    consent_tx: Dict[str, Any],
    ledger: Any,
    expected_participant_did: str,
) -> VerificationResult:
    """The five acceptance checks an org runs before honoring consent.

    a. the proof is the digest of the sealed envelope exactly as received;
    b. the envelope opens with the org's keys;
    c. both form signatures verify;
    d. the form binds the pairwise DID this session belongs to;
    e. the ledger holds a *valid* record under that proof.

    Each failure carries its own reason so disputes name the broken link.
    """
    if digest(serialize_envelope(envelope)).hex != proof_hex:
        return VerificationResult(False, "proof-mismatch")
    try:
        plaintext, sender = org_wallet.open_addressed(envelope)
    except IdentityError:
        return VerificationResult(False, "envelope-unopenable")
    try:
        form = PrivateConsentForm.from_dict(from_canonical(plaintext))
    except (WalletError, ValueError, TypeError):
        return VerificationResult(False, "form-malformed")
    if not verify_org_signature(form):
        return VerificationResult(False, "org-signature-invalid", form)
    if not verify_participant_signature(form):
        return VerificationResult(False, "participant-signature-invalid", form)
    if form.participant_did != expected_participant_did:
        return VerificationResult(False, "participant-did-mismatch", form)
    if sender is not None and sender != form.participant_did:
        return VerificationResult(False, "sender-mismatch", form)
    try:
        record, ref = ledger.query_consent_proof(proof_hex)
    except Exception:
        return VerificationResult(False, "ledger-not-found", form)
    if record.state != "valid":
        return VerificationResult(False, "ledger-state-invalid", form)
    if consent_tx.get("tx_id") != ref.tx_id:
        return VerificationResult(False, "consent-tx-mismatch", form)
    return VerificationResult(True, None, form)


# ---------------------------------------------------------------------------
# Encrypted wallet files
# ---------------------------------------------------------------------------

_WALLET_FORMAT = "ccn-wallet"
_WALLET_VERSION = 1


def _wallet_state(wallet: Wallet) -> Dict[str, Any]:
    return {
        "role": wallet.role,
        "herd_threshold": wallet.herd_threshold,
        "public_seed": b64u_encode(wallet.public_did.keys.seed),
        "pool_seeds": [b64u_encode(d.keys.seed) for d in wallet.did_pool],
        "project_identities": {
            pid: b64u_encode(d.keys.seed) for pid, d in wallet.project_identities.items()
        },
        "dossiers": [d.to_dict() for d in wallet.dossiers],
        "form_copies": [f.to_dict() for f in wallet.form_copies],
        "sponsored": wallet._sponsored,
    }


def save_wallet(wallet: Wallet, path: Union[str, Path], passphrase: str) -> None:
    salt = wallet.rng.randbytes(16)
    nonce = wallet.rng.randbytes(12)
    kdf_params = {"n": 2**14, "r": 8, "p": 1}
    key = Scrypt(salt=salt, length=32, **kdf_params).derive(passphrase.encode())
    body = canonical_bytes(_wallet_state(wallet))
    header = {
        "format": _WALLET_FORMAT,
        "version": _WALLET_VERSION,
        "kdf": "scrypt",
        "salt": b64u_encode(salt),
        "nonce": b64u_encode(nonce),
        **kdf_params,
    }
    sealed = ChaCha20Poly1305(key).encrypt(nonce, body, canonical_bytes(header))
    Path(path).write_bytes(
        canonical_bytes({"header": header, "ct": b64u_encode(sealed)})
    )


def load_wallet(
    path: Union[str, Path],
    passphrase: str,
    rng: Any = None,
    clock: Any = None,
) -> Wallet:
    try:
        document = from_canonical(Path(path).read_bytes())
        header = document["header"]
        sealed = b64u_decode(document["ct"])
    except (KeyError, ValueError, TypeError):
        raise WalletError("file-malformed", f"not a wallet file: {path}") from None
    if header.get("format") != _WALLET_FORMAT or header.get("version") != _WALLET_VERSION:
        raise WalletError("file-version", "unsupported wallet file version")
    key = Scrypt(
        salt=b64u_decode(header["salt"]),
        length=32,
        n=header["n"],
        r=header["r"],
        p=header["p"],
    ).derive(passphrase.encode())
    try:
        body = ChaCha20Poly1305(key).decrypt(
            b64u_decode(header["nonce"]), sealed, canonical_bytes(header)
        )
    except InvalidTag:
        raise WalletError("bad-passphrase", "wallet decryption failed") from None
    state = from_canonical(body)

    wallet = Wallet.__new__(Wallet)
    wallet.role = state["role"]
    wallet.rng = as_entropy(rng)
    wallet.clock = clock or WallClock()
    wallet.herd_threshold = state["herd_threshold"]
    wallet.public_did = did_from_seed(PUBLIC, b64u_decode(state["public_seed"]))
    wallet.did_pool = [
        did_from_seed(PRIVATE, b64u_decode(seed)) for seed in state["pool_seeds"]
    ]
    wallet.project_identities = {
        pid: did_from_seed(PRIVATE, b64u_decode(seed))
        for pid, seed in state["project_identities"].items()
    }
    wallet.dossiers = [ConsentDossier.from_dict(d) for d in state["dossiers"]]
    wallet.form_copies = [PrivateConsentForm.from_dict(f) for f in state["form_copies"]]
    wallet.accepted_packages = []
    wallet._sponsored = state["sponsored"]
    return wallet
