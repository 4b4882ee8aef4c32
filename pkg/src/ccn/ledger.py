"""Permissioned consent ledger with deterministic commit semantics.

Execution model (one process, many submitters):

1. *Simulate* at submit: the operation runs against committed state only,
   producing a read set (key -> committed version) and a write set.
   Logical failures (wrong role, duplicate key, revoking a revoked
   record) are rejected here, before ordering — they never reach a block.
2. *Order*: surviving transactions queue up and are cut into a block when
   the batch fills or the batch timeout expires.
3. *Validate and commit*: inside the block, each transaction re-checks its
   read set against current versions.  Stale reads mark the transaction
   invalid with a version-conflict code; valid ones apply their writes.
   Invalid transactions stay in the block — the journal records both
   outcomes.

Two concurrent revocations of one record therefore both simulate
successfully, land in the same or adjacent blocks, and exactly one
commits; the loser fails with a *conflict*, not a business error.  The
same race replayed sequentially fails at simulation with the business
error instead.

Blocks are hash-chained and appended to a journal of length-prefixed
canonical-JSON frames.  Replaying the journal rebuilds world state
bit-identically: records carry logical timestamps (block height, tx
index) assigned at commit, never wall-clock values.
"""

from __future__ import annotations

import hashlib
import itertools
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .canonical import canonical_bytes, iter_framed, write_framed
from .identity import Did, Signature, sign, verify

ROLE_ORGANIZATION = "organization"
ROLE_PORTAL = "portal"
ROLE_AUDITOR = "auditor"

_ROLES = {ROLE_ORGANIZATION, ROLE_PORTAL, ROLE_AUDITOR}

_AT_COMMIT = "@commit"  # placeholder filled with [height, index] when the tx lands

VALID = "valid"
REVOKED = "revoked"


class TxCode(str, Enum):
    UNKNOWN_IDENTITY = "unknown-identity"
    BAD_SIGNATURE = "bad-signature"
    FORBIDDEN = "forbidden"
    DUPLICATE_TERMS = "duplicate-terms"
    DUPLICATE_KEY = "duplicate-key"
    UNKNOWN_KEY = "unknown-key"
    ALREADY_REVOKED = "already-revoked"
    VERSION_CONFLICT = "version-conflict"
    DUPLICATE_TX = "duplicate-tx"
    NOT_FOUND = "not-found"
    BAD_REQUEST = "bad-request"
    JOURNAL_CORRUPT = "journal-corrupt"
    CLOSED = "closed"


#: Failure codes that stem from concurrent in-flight writes rather than a
#: malformed or unauthorized request.
CONFLICT_CODES = {TxCode.VERSION_CONFLICT}


class LedgerError(Exception):
    def __init__(self, code: TxCode, message: str):
        super().__init__(f"{code.value}: {message}")
        self.code = code


@dataclass(frozen=True)
class TxRef:
    """Logical coordinates of a committed transaction."""

    height: int
    index: int
    tx_id: str

    def to_dict(self) -> Dict[str, Any]:
        return {"height": self.height, "index": self.index, "tx_id": self.tx_id}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TxRef":
        return cls(height=int(data["height"]), index=int(data["index"]), tx_id=data["tx_id"])


@dataclass(frozen=True)
class LedgerIdentity:
    identity_id: str  # public DID text of the member
    role: str
    verification_key: bytes

    def __post_init__(self) -> None:
        if self.role not in _ROLES:
            raise LedgerError(TxCode.BAD_REQUEST, f"unknown role {self.role!r}")


@dataclass
class ConsentTermsRecord:
    org_did: str
    project_id: str
    version: int
    terms_digest: str
    published_at: Tuple[int, int]

    @classmethod
    def from_state(cls, record: Dict[str, Any]) -> "ConsentTermsRecord":
        return cls(
            org_did=record["org_did"],
            project_id=record["project_id"],
            version=record["version"],
            terms_digest=record["terms_digest"],
            published_at=tuple(record["published_at"]),
        )


@dataclass
class ConsentRecord:
    key: str  # hex digest of the sealed consent form
    publisher: str
    state: str
    published_at: Tuple[int, int]
    revoked_at: Optional[Tuple[int, int]] = None
    superseded_by: Optional[str] = None

    @classmethod
    def from_state(cls, record: Dict[str, Any]) -> "ConsentRecord":
        return cls(
            key=record["key"],
            publisher=record["publisher"],
            state=record["state"],
            published_at=tuple(record["published_at"]),
            revoked_at=tuple(record["revoked_at"]) if record.get("revoked_at") else None,
            superseded_by=record.get("superseded_by"),
        )


@dataclass
class Block:
    height: int
    previous: str
    txs: List[Dict[str, Any]]
    digest: str

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Block":
        return cls(
            height=data["height"],
            previous=data["previous"],
            txs=data["txs"],
            digest=data["digest"],
        )


def _terms_key(org_did: str, project_id: str, version: int) -> str:
    return canonical_bytes(["terms", org_did, project_id, version]).decode()


def _proof_key(proof_hex: str) -> str:
    return canonical_bytes(["proof", proof_hex]).decode()


def tx_signing_bytes(op: str, args: Dict[str, Any], submitter: str, nonce: str) -> bytes:
    return canonical_bytes({"args": args, "nonce": nonce, "op": op, "submitter": submitter})


def _tx_id(op: str, args: Dict[str, Any], submitter: str, nonce: str) -> str:
    return hashlib.sha256(tx_signing_bytes(op, args, submitter, nonce)).hexdigest()


def _block_digest(height: int, previous: str, txs: List[Dict[str, Any]]) -> str:
    return hashlib.sha256(
        canonical_bytes({"height": height, "previous": previous, "txs": txs})
    ).hexdigest()


@dataclass
class _Pending:
    record: Dict[str, Any]  # journal form minus valid/code
    read_set: Dict[str, Optional[str]]
    writes: Dict[str, Dict[str, Any]]
    future: Future


class ConsentLedger:
    """In-process ordering service + world state + journal."""

    def __init__(
        self,
        journal_path: Optional[Union[str, Path]] = None,
        batch_size: int = 50,
        batch_timeout: float = 0.1,
    ) -> None:
        if batch_size < 1:
            raise LedgerError(TxCode.BAD_REQUEST, "batch_size must be >= 1")
        self.batch_size = batch_size
        self.batch_timeout = batch_timeout
        self._identities: Dict[str, LedgerIdentity] = {}
        self._state: Dict[str, Dict[str, Any]] = {}
        self._versions: Dict[str, str] = {}
        self._blocks: List[Dict[str, Any]] = []
        self._tx_locations: Dict[str, Tuple[int, int]] = {}
        self._pending: List[_Pending] = []
        self._pending_since: Optional[float] = None
        self._closed = False
        self._lock = threading.RLock()
        self._wake = threading.Condition(self._lock)

        self._journal_path = Path(journal_path) if journal_path else None
        self._journal_file = None
        if self._journal_path is not None and self._journal_path.exists():
            with self._journal_path.open("rb") as stream:
                for frame in iter_framed(stream):
                    self._load_block(canonical_bytes_to_block(frame))
        if not self._blocks:
            genesis = {
                "height": 0,
                "previous": "0" * 64,
                "txs": [],
                "digest": _block_digest(0, "0" * 64, []),
            }
            self._blocks.append(genesis)
            if self._journal_path is not None:
                with self._journal_path.open("ab") as stream:
                    write_framed(stream, canonical_bytes(genesis))
        if self._journal_path is not None:
            self._journal_file = self._journal_path.open("ab")

        self._cutter = threading.Thread(target=self._timeout_loop, daemon=True)
        self._cutter.start()

    # ------------------------------------------------------------------
    # Membership
    # ------------------------------------------------------------------

    def admit(self, identity: LedgerIdentity) -> None:
        """Consortium-level admission (configuration, not a chain tx)."""
        with self._lock:
            self._identities[identity.identity_id] = identity

    def identity(self, identity_id: str) -> Optional[LedgerIdentity]:
        with self._lock:
            return self._identities.get(identity_id)

    # ------------------------------------------------------------------
    # Submission
    # ------------------------------------------------------------------

    def submit(
        self,
        op: str,
        args: Dict[str, Any],
        submitter: str,
        nonce: str,
        signature: Signature,
    ) -> TxRef:
        return self.submit_async(op, args, submitter, nonce, signature).result()

    def submit_async(
        self,
        op: str,
        args: Dict[str, Any],
        submitter: str,
        nonce: str,
        signature: Signature,
    ) -> "Future[TxRef]":
        future: "Future[TxRef]" = Future()
        try:
            self._admit_tx(op, args, submitter, nonce, signature, future)
        except LedgerError as exc:
            future.set_exception(exc)
        return future

    def _admit_tx(
        self,
        op: str,
        args: Dict[str, Any],
        submitter: str,
        nonce: str,
        signature: Signature,
        future: Future,
    ) -> None:
        identity = self.identity(submitter)
        if identity is None:
            raise LedgerError(TxCode.UNKNOWN_IDENTITY, f"unadmitted submitter {submitter}")
        if not verify(tx_signing_bytes(op, args, submitter, nonce), signature, identity.verification_key):
            raise LedgerError(TxCode.BAD_SIGNATURE, "transaction signature does not verify")
        tx_id = _tx_id(op, args, submitter, nonce)
        with self._lock:
            if self._closed:
                raise LedgerError(TxCode.CLOSED, "ledger is closed")
            if tx_id in self._tx_locations or any(
                p.record["tx_id"] == tx_id for p in self._pending
            ):
                raise LedgerError(TxCode.DUPLICATE_TX, "transaction already submitted")
            read_set, writes = self._simulate(op, args, identity)
            record = {
                "tx_id": tx_id,
                "op": op,
                "args": args,
                "submitter": submitter,
                "nonce": nonce,
                "signature": signature.to_dict(),
                "read_set": read_set,
            }
            self._pending.append(_Pending(record, read_set, writes, future))
            if self._pending_since is None:
                self._pending_since = time.monotonic()
            if len(self._pending) >= self.batch_size:
                self._cut_locked()
            else:
                self._wake.notify()

    # ------------------------------------------------------------------
    # Simulation (committed state only; logical failures stop here)
    # ------------------------------------------------------------------

    def _simulate(
        self, op: str, args: Dict[str, Any], identity: LedgerIdentity
    ) -> Tuple[Dict[str, Optional[str]], Dict[str, Dict[str, Any]]]:
        if op == "publish_consent_terms":
            return self._sim_publish_terms(args, identity)
        if op == "publish_consent_proof":
            return self._sim_publish_proof(args, identity)
        if op == "revoke_consent":
            return self._sim_revoke(args, identity)
        if op == "update_consent":
            return self._sim_update(args, identity)
        raise LedgerError(TxCode.BAD_REQUEST, f"unknown operation {op!r}")

    @staticmethod
    def _require_fields(args: Dict[str, Any], *names: str) -> None:
        missing = [n for n in names if n not in args]
        extra = set(args) - set(names)
        if missing or extra:
            raise LedgerError(
                TxCode.BAD_REQUEST, f"missing={missing} unexpected={sorted(extra)}"
            )

    @staticmethod
    def _require_proof_hex(value: Any) -> str:
        if not isinstance(value, str) or len(value) != 64:
            raise LedgerError(TxCode.BAD_REQUEST, "proof must be a 64-char hex digest")
        try:
            bytes.fromhex(value)
        except ValueError:
            raise LedgerError(TxCode.BAD_REQUEST, "proof must be hex") from None
        return value

    def _sim_publish_terms(self, args, identity):
        self._require_fields(args, "org_did", "project_id", "version", "terms_digest")
        if identity.role != ROLE_ORGANIZATION:
            raise LedgerError(TxCode.FORBIDDEN, "only organizations publish terms")
        if args["org_did"] != identity.identity_id:
            raise LedgerError(TxCode.FORBIDDEN, "terms must be published by their org")
        if not isinstance(args["version"], int) or args["version"] < 1:
            raise LedgerError(TxCode.BAD_REQUEST, "version must be a positive integer")
        self._require_proof_hex(args["terms_digest"])
        key = _terms_key(args["org_did"], args["project_id"], args["version"])
        if key in self._state:
            raise LedgerError(
                TxCode.DUPLICATE_TERMS,
                f"terms already published for {args['project_id']} v{args['version']}",
            )
        record = {
            "type": "terms",
            "org_did": args["org_did"],
            "project_id": args["project_id"],
            "version": args["version"],
            "terms_digest": args["terms_digest"],
            "published_at": _AT_COMMIT,
        }
        return {key: None}, {key: record}

    def _sim_publish_proof(self, args, identity):
        self._require_fields(args, "proof")
        if identity.role != ROLE_PORTAL:
            raise LedgerError(TxCode.FORBIDDEN, "only the portal publishes consent proofs")
        proof = self._require_proof_hex(args["proof"])
        key = _proof_key(proof)
        if key in self._state:
            raise LedgerError(TxCode.DUPLICATE_KEY, "consent proof already on the ledger")
        record = {
            "type": "proof",
            "key": proof,
            "publisher": identity.identity_id,
            "state": VALID,
            "published_at": _AT_COMMIT,
            "revoked_at": None,
            "superseded_by": None,
        }
        return {key: None}, {key: record}

    def _revocation_target(self, proof: str) -> Tuple[str, Dict[str, Any]]:
        key = _proof_key(proof)
        existing = self._state.get(key)
        if existing is None:
            raise LedgerError(TxCode.UNKNOWN_KEY, "no such consent proof")
        if existing["state"] != VALID:
            raise LedgerError(TxCode.ALREADY_REVOKED, "consent proof already revoked")
        return key, existing

    def _sim_revoke(self, args, identity):
        self._require_fields(args, "proof")
        if identity.role != ROLE_PORTAL:
            raise LedgerError(TxCode.FORBIDDEN, "only the portal revokes consent proofs")
        proof = self._require_proof_hex(args["proof"])
        key, existing = self._revocation_target(proof)
        record = dict(existing)
        record["state"] = REVOKED
        record["revoked_at"] = _AT_COMMIT
        return {key: self._versions[key]}, {key: record}

    def _sim_update(self, args, identity):
        self._require_fields(args, "old_proof", "new_proof")
        if identity.role != ROLE_PORTAL:
            raise LedgerError(TxCode.FORBIDDEN, "only the portal updates consent proofs")
        old = self._require_proof_hex(args["old_proof"])
        new = self._require_proof_hex(args["new_proof"])
        if old == new:
            raise LedgerError(TxCode.BAD_REQUEST, "update must supersede with a new proof")
        old_key, existing = self._revocation_target(old)
        new_key = _proof_key(new)
        if new_key in self._state:
            raise LedgerError(TxCode.DUPLICATE_KEY, "replacement proof already on the ledger")
        revoked = dict(existing)
        revoked["state"] = REVOKED
        revoked["revoked_at"] = _AT_COMMIT
        revoked["superseded_by"] = new
        published = {
            "type": "proof",
            "key": new,
            "publisher": identity.identity_id,
            "state": VALID,
            "published_at": _AT_COMMIT,
            "revoked_at": None,
            "superseded_by": None,
        }
        return (
            {old_key: self._versions[old_key], new_key: None},
            {old_key: revoked, new_key: published},
        )

    # ------------------------------------------------------------------
    # Ordering / validation / commit
    # ------------------------------------------------------------------

    def _timeout_loop(self) -> None:
        while True:
            with self._wake:
                if self._closed:
                    return
                if not self._pending:
                    self._wake.wait(timeout=0.5)
                    continue
                deadline = (self._pending_since or time.monotonic()) + self.batch_timeout
                remaining = deadline - time.monotonic()
                if remaining > 0:
                    self._wake.wait(timeout=remaining)
                    continue
                self._cut_locked()

    def _cut_locked(self) -> None:
        batch = self._pending[: self.batch_size]
        del self._pending[: self.batch_size]
        self._pending_since = time.monotonic() if self._pending else None
        if not batch:
            return
        height = len(self._blocks)
        txs: List[Dict[str, Any]] = []
        outcomes: List[Tuple[Future, Optional[TxRef], Optional[LedgerError]]] = []
        for index, pending in enumerate(batch):
            record = dict(pending.record)
            stale = [
                key
                for key, expected in pending.read_set.items()
                if self._versions.get(key) != expected
            ]
            if stale:
                record["valid"] = False
                record["code"] = TxCode.VERSION_CONFLICT.value
                record["write_set"] = {}
                error = LedgerError(
                    TxCode.VERSION_CONFLICT,
                    f"read set stale for {len(stale)} key(s)",
                )
                outcomes.append((pending.future, None, error))
            else:
                version = f"{height}:{index}"
                write_set = {}
                for key, proto in pending.writes.items():
                    committed = {
                        name: ([height, index] if value == _AT_COMMIT else value)
                        for name, value in proto.items()
                    }
                    write_set[key] = committed
                    self._state[key] = committed
                    self._versions[key] = version
                record["valid"] = True
                record["code"] = None
                record["write_set"] = write_set
                ref = TxRef(height=height, index=index, tx_id=record["tx_id"])
                outcomes.append((pending.future, ref, None))
            txs.append(record)
            self._tx_locations[record["tx_id"]] = (height, index)
        previous = self._blocks[-1]["digest"]
        block = {
            "height": height,
            "previous": previous,
            "txs": txs,
            "digest": _block_digest(height, previous, txs),
        }
        self._blocks.append(block)
        if self._journal_file is not None:
            write_framed(self._journal_file, canonical_bytes(block))
            self._journal_file.flush()
        for future, ref, error in outcomes:
            if error is not None:
                future.set_exception(error)
            else:
                future.set_result(ref)

    def flush(self) -> None:
        """Cut blocks until nothing is pending (test/benchmark hook)."""
        with self._lock:
            while self._pending:
                self._cut_locked()

    def close(self) -> None:
        with self._wake:
            if self._closed:
                return
            while self._pending:
                self._cut_locked()
            self._closed = True
            self._wake.notify_all()
        self._cutter.join(timeout=2)
        if self._journal_file is not None:
            self._journal_file.close()
            self._journal_file = None

    # ------------------------------------------------------------------
    # Journal replay
    # ------------------------------------------------------------------

    def _load_block(self, block: Dict[str, Any]) -> None:
        expected_previous = self._blocks[-1]["digest"] if self._blocks else "0" * 64
        if block["previous"] != expected_previous or block[
            "digest"
        ] != _block_digest(block["height"], block["previous"], block["txs"]):
            raise LedgerError(
                TxCode.JOURNAL_CORRUPT, f"chain break at height {block['height']}"
            )
        if block["height"] != len(self._blocks):
            raise LedgerError(
                TxCode.JOURNAL_CORRUPT, f"unexpected height {block['height']}"
            )
        for index, record in enumerate(block["txs"]):
            self._tx_locations[record["tx_id"]] = (block["height"], index)
            if record["valid"]:
                for key, committed in record["write_set"].items():
                    self._state[key] = committed
                    self._versions[key] = f"{block['height']}:{index}"
        self._blocks.append(block)

    @classmethod
    def replay(cls, journal_path: Union[str, Path]) -> "ConsentLedger":
        """Rebuild a read-only ledger purely from a journal file."""
        replica = cls.__new__(cls)
        replica.batch_size = 1
        replica.batch_timeout = 0.0
        replica._identities = {}
        replica._state = {}
        replica._versions = {}
        replica._blocks = []
        replica._tx_locations = {}
        replica._pending = []
        replica._pending_since = None
        replica._closed = True
        replica._lock = threading.RLock()
        replica._wake = threading.Condition(replica._lock)
        replica._journal_path = Path(journal_path)
        replica._journal_file = None
        with replica._journal_path.open("rb") as stream:
            for frame in iter_framed(stream):
                replica._load_block(canonical_bytes_to_block(frame))
        if not replica._blocks:
            raise LedgerError(TxCode.JOURNAL_CORRUPT, "journal is empty")
        return replica

    # ------------------------------------------------------------------
    # Queries (read-only; no journal traffic)
    # ------------------------------------------------------------------

    def height(self) -> int:
        with self._lock:
            return len(self._blocks) - 1

    def get_block(self, height: int) -> Block:
        with self._lock:
            try:
                return Block.from_dict(self._blocks[height])
            except IndexError:
                raise LedgerError(TxCode.NOT_FOUND, f"no block at height {height}") from None

    def get_consent_record(self, proof_hex: str) -> Tuple[ConsentRecord, TxRef]:
        key = _proof_key(proof_hex)
        with self._lock:
            record = self._state.get(key)
            if record is None:
                raise LedgerError(TxCode.NOT_FOUND, "no such consent proof")
            height, index = map(int, self._versions[key].split(":"))
            tx_id = self._blocks[height]["txs"][index]["tx_id"]
            return ConsentRecord.from_state(record), TxRef(height, index, tx_id)

    def get_tx(self, ref: Union[TxRef, str]) -> Dict[str, Any]:
        """Fetch a committed transaction record by TxRef or tx id."""
        with self._lock:
            if isinstance(ref, TxRef):
                location = self._tx_locations.get(ref.tx_id)
                if location is None or location != (ref.height, ref.index):
                    raise LedgerError(TxCode.NOT_FOUND, "no such transaction")
            else:
                location = self._tx_locations.get(ref)
                if location is None:
                    raise LedgerError(TxCode.NOT_FOUND, "no such transaction")
            height, index = location
            return self._blocks[height]["txs"][index]

    def get_terms(self, org_did: str, project_id: str, version: int) -> ConsentTermsRecord:
        key = _terms_key(org_did, project_id, version)
        with self._lock:
            record = self._state.get(key)
            if record is None:
                raise LedgerError(TxCode.NOT_FOUND, "no such consent terms")
            return ConsentTermsRecord.from_state(record)

    def terms_by_ref(self, ref: TxRef) -> ConsentTermsRecord:
        tx = self.get_tx(ref)
        for record in tx["write_set"].values():
            if record.get("type") == "terms":
                return ConsentTermsRecord.from_state(record)
        raise LedgerError(TxCode.NOT_FOUND, "transaction wrote no consent terms")

    def list_state(self) -> Dict[str, Dict[str, Any]]:
        with self._lock:
            return {key: dict(value) for key, value in self._state.items()}

    def world_state_digest(self) -> str:
        with self._lock:
            snapshot = {
                key: {"record": record, "version": self._versions[key]}
                for key, record in self._state.items()
            }
        return hashlib.sha256(canonical_bytes(snapshot)).hexdigest()

    def block_digests(self) -> List[str]:
        with self._lock:
            return [block["digest"] for block in self._blocks]

    def verify_chain(self) -> Dict[str, Any]:
        """Recompute every block digest and link; report the first break."""
        with self._lock:
            blocks = list(self._blocks)
        previous = "0" * 64
        for block in blocks:
            if block["previous"] != previous:
                return {"ok": False, "height": block["height"], "error": "broken link"}
            expected = _block_digest(block["height"], block["previous"], block["txs"])
            if block["digest"] != expected:
                return {"ok": False, "height": block["height"], "error": "digest mismatch"}
            previous = block["digest"]
        return {"ok": True, "height": len(blocks) - 1, "error": None}

    def proof_histories(self) -> Dict[str, List[str]]:
        """Committed operation sequence (publish/revoke) per consent key."""
        histories: Dict[str, List[str]] = {}
        with self._lock:
            blocks = list(self._blocks)
        for block in blocks:
            for record in block["txs"]:
                if not record["valid"]:
                    continue
                op = record["op"]
                for key, written in record["write_set"].items():
                    if written.get("type") != "proof":
                        continue
                    proof = written["key"]
                    if op == "publish_consent_proof":
                        histories.setdefault(proof, []).append("publish")
                    elif op == "revoke_consent":
                        histories.setdefault(proof, []).append("revoke")
                    elif op == "update_consent":
                        if written["state"] == REVOKED:
                            histories.setdefault(proof, []).append("revoke")
                        else:
                            histories.setdefault(proof, []).append("publish")
        return histories


def canonical_bytes_to_block(frame: bytes) -> Dict[str, Any]:
    from .canonical import from_canonical

    block = from_canonical(frame)
    if canonical_bytes(block) != frame:
        raise LedgerError(TxCode.JOURNAL_CORRUPT, "non-canonical journal frame")
    return block


class LedgerClient:
    """Binds a member identity + signing key to a ledger surface.

    ``ledger`` may be an in-process :class:`ConsentLedger` or any object
    with the same ``submit``/``submit_async``/query methods (the socket
    client in :mod:`ccn.service` mirrors them).
    """

    def __init__(self, ledger: Any, signer: Did):
        self.ledger = ledger
        self.signer = signer
        self.identity_id = signer.text
        self._nonces = itertools.count()

    def _sign(self, op: str, args: Dict[str, Any]) -> Tuple[str, Signature]:
        nonce = f"{self.identity_id}#{next(self._nonces)}"
        return nonce, sign(tx_signing_bytes(op, args, self.identity_id, nonce), self.signer)

    def _submit(self, op: str, args: Dict[str, Any]) -> TxRef:
        nonce, signature = self._sign(op, args)
        return self.ledger.submit(op, args, self.identity_id, nonce, signature)

    def _submit_async(self, op: str, args: Dict[str, Any]) -> "Future[TxRef]":
        nonce, signature = self._sign(op, args)
        return self.ledger.submit_async(op, args, self.identity_id, nonce, signature)

    # -- writes ---------------------------------------------------------

    def publish_consent_terms(self, project_id: str, version: int, terms_digest: str) -> TxRef:
        return self._submit(
            "publish_consent_terms",
            {
                "org_did": self.identity_id,
                "project_id": project_id,
                "version": version,
                "terms_digest": terms_digest,
            },
        )

    def publish_consent_proof(self, proof_hex: str) -> TxRef:
        return self._submit("publish_consent_proof", {"proof": proof_hex})

    def publish_consent_proof_async(self, proof_hex: str) -> "Future[TxRef]":
        return self._submit_async("publish_consent_proof", {"proof": proof_hex})

    def revoke_consent(self, proof_hex: str) -> TxRef:
        return self._submit("revoke_consent", {"proof": proof_hex})

    def revoke_consent_async(self, proof_hex: str) -> "Future[TxRef]":
        return self._submit_async("revoke_consent", {"proof": proof_hex})

    def update_consent(self, old_proof: str, new_proof: str) -> Tuple[TxRef, TxRef]:
        ref = self._submit(
            "update_consent", {"old_proof": old_proof, "new_proof": new_proof}
        )
        # one atomic transaction carries both legs; both records share its slot
        return ref, ref

    # -- reads ----------------------------------------------------------

    def query_consent_proof(self, proof_hex: str) -> Tuple[ConsentRecord, TxRef]:
        return self.ledger.get_consent_record(proof_hex)

    def height(self) -> int:
        return self.ledger.height()
