"""Web portal: the participants' proxy onto the consent ledger.

Participants never hold ledger identities.  They authenticate to the
portal with their *public* DID (challenge-response, single-use nonces,
TTL-bounded), browse the project catalog, and hand over nothing but a
32-byte consent proof; the portal publishes, revokes, and updates on the
ledger under its own member identity.

The portal's match store — public DID ↔ (proof, consent tx, status) —
is by design the only place in the whole deployment where that pairing
exists.  That makes it the natural right-to-be-forgotten target:
``forget_me`` optionally revokes live proofs first, deletes the match
items, redacts its own request log, and physically rewrites the store
(snapshot + truncated WAL) so the association survives in no byte of
persisted state.  The ledger keeps its orphaned digests; they name
no one.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .canonical import canonical_bytes, from_canonical
from .didauth import AuthToken, Challenge, check_token, make_challenge
from .enrollment import VerifiableCredential, verify_credential
from .identity import as_entropy
from .ledger import LedgerClient, LedgerError, TxRef


class PortalError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass
class PortalConfig:
    challenge_ttl: float = 120.0
    nonce_bytes: int = 32
    enrollment_required: bool = False
    forget_revoke_first: bool = True

    @classmethod
    def from_toml(cls, path: Union[str, Path]) -> "PortalConfig":
        try:
            import tomllib  # Python >= 3.11
        except ModuleNotFoundError:  # pragma: no cover - version shim
            import tomli as tomllib
        with Path(path).open("rb") as stream:
            data = tomllib.load(stream)
        portal = data.get("portal", {})
        forget = data.get("forget", {})
        return cls(
            challenge_ttl=float(portal.get("challenge_ttl", 120.0)),
            nonce_bytes=int(portal.get("nonce_bytes", 32)),
            enrollment_required=bool(portal.get("enrollment_required", False)),
            forget_revoke_first=bool(forget.get("revoke_first", True)),
        )


class _WallClock:
    def now(self) -> float:
        return time.time()


# Endpoint -> (required keys, optional keys).  Anything else is rejected:
# the request schema is closed, so a client cannot "helpfully" attach
# side-channel fields (project hints, telemetry) to a publication.
_SCHEMAS: Dict[str, tuple] = {
    "challenge": ({"did"}, set()),
    "register": ({"did", "token"}, {"credential"}),
    "login": ({"did"}, set()),
    "authenticate": ({"token"}, set()),
    "projects": ({"session"}, {"org"}),
    "publish": ({"session", "proof"}, set()),
    "history": ({"session"}, set()),
    "revoke": ({"session", "consent_tx"}, set()),
    "update": ({"session", "consent_tx", "new_proof"}, set()),
    "forget": ({"session", "scope"}, set()),
}


class Portal:
    def __init__(
        self,
        ledger_client: LedgerClient,
        config: Optional[PortalConfig] = None,
        rng: Any = None,
        clock: Any = None,
        store_dir: Optional[Union[str, Path]] = None,
        authority_key: Optional[bytes] = None,
    ):
        self.ledger = ledger_client
        self.config = config or PortalConfig()
        self.rng = as_entropy(rng)
        self.clock = clock or _WallClock()
        self.authority_key = authority_key

        self.profiles: Dict[str, Dict[str, Any]] = {}
        self.matches: Dict[str, List[Dict[str, Any]]] = {}
        self.catalog: List[Dict[str, Any]] = []
        self.request_log: List[Dict[str, Any]] = []

        self._challenges: Dict[str, Challenge] = {}
        self._sessions: Dict[str, str] = {}
        self._lock = threading.RLock()

        self._store_dir = Path(store_dir) if store_dir else None
        self._wal = None
        if self._store_dir is not None:
            self._store_dir.mkdir(parents=True, exist_ok=True)
            self._load_store()
            self._wal = self._wal_path.open("ab")

    # ------------------------------------------------------------------
    # Persistence: snapshot + write-ahead log, physical rewrite on forget
    # ------------------------------------------------------------------

    @property
    def _snapshot_path(self) -> Path:
        return self._store_dir / "store.json"

    @property
    def _wal_path(self) -> Path:
        return self._store_dir / "wal.jsonl"

    def _state(self) -> Dict[str, Any]:
        return {
            "profiles": self.profiles,
            "matches": self.matches,
            "catalog": self.catalog,
            "request_log": self.request_log,
        }

    def _load_store(self) -> None:
        if self._snapshot_path.exists():
            state = from_canonical(self._snapshot_path.read_bytes())
            self.profiles = state["profiles"]
            self.matches = state["matches"]
            self.catalog = state["catalog"]
            self.request_log = state["request_log"]
        if self._wal_path.exists():
            with self._wal_path.open("rb") as stream:
                for line in stream:
                    line = line.strip()
                    if line:
                        self._apply_wal(from_canonical(line))

    def _apply_wal(self, entry: Dict[str, Any]) -> None:
        op, data = entry["op"], entry["data"]
        if op == "profile":
            self.profiles[data["did"]] = data["profile"]
        elif op == "catalog":
            self.catalog.append(data)
        elif op == "match-append":
            self.matches.setdefault(data["did"], []).append(data["item"])
        elif op == "match-set":
            self.matches[data["did"]] = data["items"]
        elif op == "log":
            self.request_log.append(data)

    def _journal(self, op: str, data: Dict[str, Any]) -> None:
        if self._wal is not None:
            self._wal.write(canonical_bytes({"op": op, "data": data}) + b"\n")
            self._wal.flush()

    def _compact(self) -> None:
        """Rewrite persisted state from scratch; no dead bytes survive."""
        if self._store_dir is None:
            return
        snapshot = canonical_bytes(self._state())
        temp = self._snapshot_path.with_suffix(".tmp")
        temp.write_bytes(snapshot)
        temp.replace(self._snapshot_path)
        if self._wal is not None:
            self._wal.close()
        self._wal = self._wal_path.open("wb")
        self._wal.truncate(0)
        self._wal.flush()

    def close(self) -> None:
        with self._lock:
            self._compact()
            if self._wal is not None:
                self._wal.close()
                self._wal = None

    def store_bytes(self) -> bytes:
        """Everything this portal persists, as one blob (scan oracle)."""
        with self._lock:
            blobs = [canonical_bytes(self._state())]
            if self._store_dir is not None:
                if self._snapshot_path.exists():
                    blobs.append(self._snapshot_path.read_bytes())
                if self._wal_path.exists():
                    if self._wal is not None:
                        self._wal.flush()
                    blobs.append(self._wal_path.read_bytes())
        return b"\n".join(blobs)

    # ------------------------------------------------------------------
    # Catalog administration (consortium wiring, not a participant API)
    # ------------------------------------------------------------------

    def add_project(
        self,
        project_id: str,
        org_did: str,
        version: int,
        terms_tx: Dict[str, Any],
        enrollment_required: bool = False,
    ) -> None:
        with self._lock:
            entry = {
                "project_id": project_id,
                "org_did": org_did,
                "version": version,
                "terms_tx": terms_tx,
                "enrollment_required": enrollment_required,
            }
            self.catalog.append(entry)
            self._journal("catalog", entry)

    # ------------------------------------------------------------------
    # Authentication
    # ------------------------------------------------------------------

    def _log_request(self, endpoint: str, did: Optional[str], data: Dict[str, Any]) -> None:
        entry = {"ts": self.clock.now(), "endpoint": endpoint, "did": did, "data": data}
        self.request_log.append(entry)
        self._journal("log", entry)

    def challenge(self, did_text: str) -> Challenge:
        with self._lock:
            challenge = make_challenge(
                did_text,
                self.rng,
                now=self.clock.now(),
                ttl=self.config.challenge_ttl,
                nonce_bytes=self.config.nonce_bytes,
            )
            self._challenges[challenge.nonce] = challenge
            self._log_request("challenge", did_text, {})
            return challenge

    def login(self, did_text: str) -> Challenge:
        with self._lock:
            if did_text not in self.profiles:
                raise PortalError("unknown-user", "no profile for that DID")
            return self.challenge(did_text)

    def _consume_challenge(self, token: AuthToken) -> None:
        challenge = self._challenges.pop(token.nonce, None)  # replay -> gone
        if challenge is None:
            raise PortalError("challenge-unknown", "unknown or already-used challenge")
        ok, reason = check_token(token, challenge, now=self.clock.now())
        if not ok:
            code = "challenge-expired" if reason == "expired" else "auth-failed"
            raise PortalError(code, f"DID authentication failed: {reason}")

    def register(
        self,
        did_text: str,
        token: AuthToken,
        credential: Optional[VerifiableCredential] = None,
    ) -> Dict[str, Any]:
        with self._lock:
            if token.holder != did_text:
                raise PortalError("auth-failed", "token holder mismatch")
            self._consume_challenge(token)
            if did_text in self.profiles:
                raise PortalError("already-registered", "profile exists for that DID")
            if self.config.enrollment_required:
                if credential is None:
                    raise PortalError("enrollment-required", "registration needs a credential")
                if self.authority_key is None or not verify_credential(
                    credential, self.authority_key, now=self.clock.now()
                ) or credential.subject != did_text:
                    raise PortalError("credential-invalid", "enrollment credential rejected")
            profile = {
                "did": did_text,
                "registered_at": self.clock.now(),
                "credential": credential.to_dict() if credential else None,
            }
            self.profiles[did_text] = profile
            self.matches.setdefault(did_text, [])
            self._journal("profile", {"did": did_text, "profile": profile})
            self._log_request("register", did_text, {})
            return dict(profile)

    def authenticate(self, token: AuthToken) -> str:
        """Trade a signed challenge for a bearer session token."""
        with self._lock:
            self._consume_challenge(token)
            if token.holder not in self.profiles:
                raise PortalError("unknown-user", "authenticate after registering")
            session = self.rng.randbytes(16).hex()
            self._sessions[session] = token.holder
            self._log_request("authenticate", token.holder, {})
            return session

    def _session_did(self, session: str) -> str:
        did = self._sessions.get(session)
        if did is None:
            raise PortalError("session-invalid", "unknown session token")
        return did

    # ------------------------------------------------------------------
    # Participant API
    # ------------------------------------------------------------------

    def list_projects(self, session: str, org: Optional[str] = None) -> Dict[str, Any]:
        with self._lock:
            did = self._session_did(session)
            entries = [dict(e) for e in self.catalog if org is None or e["org_did"] == org]
            self._log_request("projects", did, {})
            return {"catalog": entries, "size": len(self.catalog)}

    def proxy_publish(self, session: str, proof_hex: str) -> Dict[str, Any]:
        """Publish an opaque proof under the portal's ledger identity."""
        with self._lock:
            did = self._session_did(session)
            self._require_proof(proof_hex)
            ref = self.ledger.publish_consent_proof(proof_hex)  # LedgerError propagates
            item = {"proof": proof_hex, "consent_tx": ref.to_dict(), "status": "valid"}
            self.matches.setdefault(did, []).append(item)
            self._journal("match-append", {"did": did, "item": item})
            self._log_request("publish", did, {"proof": proof_hex})
            return dict(item)

    @staticmethod
    def _require_proof(proof_hex: str) -> None:
        if not isinstance(proof_hex, str) or len(proof_hex) != 64:
            raise PortalError("bad-proof", "proof must be 32 bytes hex")
        try:
            bytes.fromhex(proof_hex)
        except ValueError:
            raise PortalError("bad-proof", "proof must be 32 bytes hex") from None

    def consent_history(self, session: str) -> List[Dict[str, Any]]:
        """The participant's items, statuses refreshed from the ledger."""
        with self._lock:
            did = self._session_did(session)
            items = self.matches.get(did, [])
            changed = False
            for item in items:
                try:
                    record, _ = self.ledger.query_consent_proof(item["proof"])
                    if item["status"] != record.state:
                        item["status"] = record.state
                        changed = True
                except LedgerError:
                    pass  # pending or pruned records keep their cached status
            if changed:
                self._journal("match-set", {"did": did, "items": items})
            self._log_request("history", did, {})
            return [dict(item) for item in items]

    def _owned_item(self, did: str, consent_tx: Dict[str, Any]) -> Dict[str, Any]:
        # one error shape for "someone else's" and "never existed": the
        # response must not reveal which it was
        denial = PortalError("authorization", "no such consent under this account")
        tx_id = (consent_tx or {}).get("tx_id")
        if tx_id is None:
            raise denial
        for item in self.matches.get(did, []):
            if item["consent_tx"]["tx_id"] == tx_id:
                return item
        raise denial

    def request_revoke(self, session: str, consent_tx: Dict[str, Any]) -> Dict[str, Any]:
        with self._lock:
            did = self._session_did(session)
            item = self._owned_item(did, consent_tx)
            self.ledger.revoke_consent(item["proof"])
            item["status"] = "revoked"
            self._journal("match-set", {"did": did, "items": self.matches[did]})
            self._log_request("revoke", did, {"proof": item["proof"]})
            return dict(item)

    def request_update(
        self, session: str, consent_tx: Dict[str, Any], new_proof: str
    ) -> Dict[str, Any]:
        """Atomic supersede-and-replace on the ledger, mirrored locally."""
        with self._lock:
            did = self._session_did(session)
            old_item = self._owned_item(did, consent_tx)
            self._require_proof(new_proof)
            _, publish_ref = self.ledger.update_consent(old_item["proof"], new_proof)
            old_item["status"] = "revoked"
            new_item = {
                "proof": new_proof,
                "consent_tx": publish_ref.to_dict(),
                "status": "valid",
            }
            self.matches[did].append(new_item)
            self._journal("match-set", {"did": did, "items": self.matches[did]})
            self._log_request(
                "update", did, {"proof": old_item["proof"], "new_proof": new_proof}
            )
            return dict(new_item)

    def forget_me(self, session: str, scope: str = "all") -> Dict[str, Any]:
        """Erase (public DID <-> proof) associations, then rewrite the store.

        ``scope`` is ``"all"`` or one consent tx id.  With
        ``forget.revoke_first`` set (default), live proofs are revoked on
        the ledger before the local association is destroyed, so no
        orphaned-but-valid consent outlives the account.
        """
        with self._lock:
            did = self._session_did(session)
            items = self.matches.get(did, [])
            if scope == "all":
                targets = list(items)
            else:
                targets = [self._owned_item(did, {"tx_id": scope})]
            revoked = 0
            if self.config.forget_revoke_first:
                for item in targets:
                    if item["status"] == "valid":
                        try:
                            self.ledger.revoke_consent(item["proof"])
                            revoked += 1
                        except LedgerError:
                            pass  # already revoked on-chain: erasure proceeds
            forgotten_proofs = {item["proof"] for item in targets}
            remaining = [item for item in items if item["proof"] not in forgotten_proofs]
            if scope == "all":
                self.matches.pop(did, None)
                self.profiles.pop(did, None)
                self._sessions = {
                    tok: holder for tok, holder in self._sessions.items() if holder != did
                }
            else:
                self.matches[did] = remaining
            self.request_log = [
                entry
                for entry in self.request_log
                if not (
                    set(entry["data"].values()) & forgotten_proofs
                    or (scope == "all" and entry["did"] == did)
                )
            ]
            self._compact()
            return {"forgotten": len(targets), "revoked": revoked}

    # ------------------------------------------------------------------
    # Socket surface with a closed request schema
    # ------------------------------------------------------------------

    def api_handle(self, endpoint: str, body: Dict[str, Any]) -> Any:
        schema = _SCHEMAS.get(endpoint)
        if schema is None:
            raise PortalError("unknown-endpoint", endpoint)
        required, optional = schema
        missing = required - set(body)
        unknown = set(body) - required - optional
        if missing or unknown:
            raise PortalError(
                "schema",
                f"endpoint {endpoint}: missing={sorted(missing)} unknown={sorted(unknown)}",
            )
        if endpoint == "challenge":
            c = self.challenge(body["did"])
            return {"nonce": c.nonce, "audience": c.audience, "issued_at": c.issued_at, "ttl": c.ttl}
        if endpoint == "register":
            credential = (
                VerifiableCredential.from_dict(body["credential"])
                if body.get("credential")
                else None
            )
            return self.register(body["did"], AuthToken.from_dict(body["token"]), credential)
        if endpoint == "login":
            c = self.login(body["did"])
            return {"nonce": c.nonce, "audience": c.audience, "issued_at": c.issued_at, "ttl": c.ttl}
        if endpoint == "authenticate":
            return {"session": self.authenticate(AuthToken.from_dict(body["token"]))}
        if endpoint == "projects":
            return self.list_projects(body["session"], body.get("org"))
        if endpoint == "publish":
            return self.proxy_publish(body["session"], body["proof"])
        if endpoint == "history":
            return self.consent_history(body["session"])
        if endpoint == "revoke":
            return self.request_revoke(body["session"], body["consent_tx"])
        if endpoint == "update":
            return self.request_update(body["session"], body["consent_tx"], body["new_proof"])
        if endpoint == "forget":
            return self.forget_me(body["session"], body["scope"])
        raise PortalError("unknown-endpoint", endpoint)  # pragma: no cover
