"""Store-and-forward mediator (cloud agent).

Every actor parks an inbox here, keyed by DID.  Registration demands a
challenge-response proof of DID control; a *public* DID's registration
also writes the inbox address into the shared registry so others can
find it, while a private (pairwise) DID's inbox stays undiscoverable —
only the holder of its access token can drain it.

The mediator relays ciphertext byte-for-byte and never sees plaintext.
What it *does* see — and what the metadata view exposes to the
adversarial harness — is the routing log: arrival time, the transport
handle the sender's session presented, destination DID, payload size.
With pseudonymous transport the handles are fresh per session and the
log supports no cross-session joins; with it off, stable handles make
the same log immediately linkable (the harness's negative control).
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Deque, Dict, List, Optional, Union

from .canonical import canonical_bytes
from .didauth import AuthToken, Challenge, check_token, make_challenge
from .identity import (
    DidRegistry,
    Envelope,
    as_entropy,
    envelope_from_bytes,
    serialize_envelope,
)


class MediatorError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass
class RoutingLogEntry:
    ts: float
    source: str  # transport handle, never a wallet identity
    destination: str  # DID text of the inbox
    size: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ts": self.ts,
            "source": self.source,
            "destination": self.destination,
            "size": self.size,
        }


class _Inbox:
    def __init__(self, owner: str, access_token: str):
        self.owner = owner
        self.access_token = access_token
        self.queue: Deque[bytes] = deque()


class _WallClock:
    def now(self) -> float:
        return time.time()


class Mediator:
    def __init__(
        self,
        registry: Optional[DidRegistry] = None,
        rng: Any = None,
        clock: Any = None,
        harness_mode: bool = False,
        challenge_ttl: float = 120.0,
        log_path: Optional[Union[str, Path]] = None,
    ):
        self.registry = registry
        self.rng = as_entropy(rng)
        self.clock = clock or _WallClock()
        self.harness_mode = harness_mode
        self.challenge_ttl = challenge_ttl
        self._inboxes: Dict[str, _Inbox] = {}
        self._challenges: Dict[str, Challenge] = {}
        self._log: List[RoutingLogEntry] = []
        self._log_path = Path(log_path) if log_path else None
        self._lock = threading.RLock()

    # ------------------------------------------------------------------
    # Inbox lifecycle
    # ------------------------------------------------------------------

    def challenge(self, did_text: str) -> Challenge:
        with self._lock:
            challenge = make_challenge(
                did_text, self.rng, now=self.clock.now(), ttl=self.challenge_ttl
            )
            self._challenges[challenge.nonce] = challenge
            return challenge

    def register_inbox(self, did_text: str, token: AuthToken) -> str:
        """Create (or re-key) the inbox for a DID after proof of control."""
        with self._lock:
            challenge = self._challenges.pop(token.nonce, None)  # single use
            if challenge is None or challenge.audience != did_text:
                raise MediatorError("bad-challenge", "unknown or consumed challenge")
            ok, reason = check_token(token, challenge, now=self.clock.now())
            if not ok:
                raise MediatorError("auth-failed", f"DID control proof failed: {reason}")
            access_token = self.rng.randbytes(16).hex()
            self._inboxes[did_text] = _Inbox(did_text, access_token)
            if self.registry is not None and did_text in self.registry:
                # discoverable endpoint for public DIDs only; private inboxes
                # leave no trace outside this mediator
                self.registry.set_endpoint(did_text, f"ccn:mediator/{did_text}")
            return access_token

    def has_inbox(self, did_text: str) -> bool:
        with self._lock:
            return did_text in self._inboxes

    # ------------------------------------------------------------------
    # Relay
    # ------------------------------------------------------------------

    def route(
        self,
        envelope: Envelope,
        source_handle: str,
        destination: Optional[str] = None,
    ) -> Dict[str, Any]:
        destination = destination or envelope.recipient
        if destination != envelope.recipient:
            raise MediatorError("misrouted", "destination does not match the envelope")
        wire = serialize_envelope(envelope)
        with self._lock:
            inbox = self._inboxes.get(destination)
            if inbox is None:
                raise MediatorError("unknown-destination", "no inbox for that DID")
            inbox.queue.append(wire)
            entry = RoutingLogEntry(
                ts=self.clock.now(),
                source=source_handle,
                destination=destination,
                size=len(wire),
            )
            self._log.append(entry)
            if self._log_path is not None:
                with self._log_path.open("ab") as stream:
                    stream.write(canonical_bytes(entry.to_dict()) + b"\n")
            return {"queued": len(inbox.queue), "size": entry.size}

    def fetch(self, did_text: str, access_token: str) -> List[Envelope]:
        """Drain the inbox in arrival order.  Bytes come back verbatim."""
        with self._lock:
            inbox = self._inboxes.get(did_text)
            if inbox is None:
                raise MediatorError("unknown-destination", "no inbox for that DID")
            if access_token != inbox.access_token:
                raise MediatorError("auth-failed", "wrong inbox access token")
            frames = list(inbox.queue)
            inbox.queue.clear()
        return [envelope_from_bytes(frame) for frame in frames]

    # ------------------------------------------------------------------
    # Observation surfaces
    # ------------------------------------------------------------------

    def metadata_view(self) -> List[Dict[str, Any]]:
        """The honest-but-curious view.  Harness builds only."""
        if not self.harness_mode:
            raise MediatorError("forbidden", "metadata view is a harness-only surface")
        with self._lock:
            return [entry.to_dict() for entry in self._log]

    def log_bytes(self) -> bytes:
        with self._lock:
            return b"".join(
                canonical_bytes(entry.to_dict()) + b"\n" for entry in self._log
            )

    # ------------------------------------------------------------------
    # Socket surface
    # ------------------------------------------------------------------

    def api_handle(self, endpoint: str, body: Dict[str, Any]) -> Any:
        if endpoint == "challenge":
            challenge = self.challenge(body["did"])
            return {
                "nonce": challenge.nonce,
                "audience": challenge.audience,
                "issued_at": challenge.issued_at,
                "ttl": challenge.ttl,
            }
        if endpoint == "register":
            return {"access_token": self.register_inbox(body["did"], AuthToken.from_dict(body["token"]))}
        if endpoint == "route":
            return self.route(
                Envelope.from_dict(body["envelope"]),
                body["source"],
                body.get("destination"),
            )
        if endpoint == "fetch":
            envelopes = self.fetch(body["did"], body["access_token"])
            return [envelope.to_dict() for envelope in envelopes]
        if endpoint == "metadata":
            return self.metadata_view()
        raise MediatorError("unknown-endpoint", endpoint)
