"""Socket transport for the stack's service surfaces.

Wire protocol: one TCP connection carries a sequence of length-prefixed
canonical-JSON frames.  A request is ``{"endpoint": ..., "body": {...}}``;
a response is ``{"ok": true, "result": ...}`` or ``{"ok": false, "error":
{"code": ..., "message": ...}}``.  Components plug in by providing
``api_handle(endpoint, body)``; typed component errors (anything with a
``code`` attribute) cross the wire and are re-raised client-side.

The in-process objects remain the primary interface — the socket layer
adds no semantics, it only frames the same calls.
"""

from __future__ import annotations

import socket
import socketserver
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Any, Callable, Dict, Optional, Tuple

from .canonical import canonical_bytes, from_canonical, read_framed, write_framed
from .identity import Signature
from .ledger import ConsentLedger, ConsentRecord, LedgerError, TxCode, TxRef


class ServiceError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class ApiServer:
    """Threaded TCP server around an ``api_handle(endpoint, body)`` callable."""

    def __init__(self, handler: Callable[[str, Dict[str, Any]], Any], host: str = "127.0.0.1"):
        self._handler = handler

        class _Connection(socketserver.BaseRequestHandler):
            def handle(conn_self) -> None:  # noqa: N805 - socketserver idiom
                stream = conn_self.request.makefile("rwb")
                try:
                    while True:
                        frame = read_framed(stream)
                        if frame is None:
                            return
                        response = self._dispatch(frame)
                        write_framed(stream, canonical_bytes(response))
                        stream.flush()
                except (ConnectionError, ValueError):
                    return
                finally:
                    stream.close()

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = _Server((host, 0), _Connection)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    def _dispatch(self, frame: bytes) -> Dict[str, Any]:
        try:
            request = from_canonical(frame)
            endpoint = request["endpoint"]
            body = request.get("body", {})
        except (KeyError, ValueError, TypeError):
            return {"ok": False, "error": {"code": "bad-frame", "message": "unparseable request"}}
        try:
            return {"ok": True, "result": self._handler(endpoint, body)}
        except Exception as exc:  # typed component errors cross the wire
            code = getattr(exc, "code", None)
            code_text = getattr(code, "value", code) or "internal"
            return {"ok": False, "error": {"code": str(code_text), "message": str(exc)}}

    def start(self) -> Tuple[str, int]:
        self._thread.start()
        return self._server.server_address

    @property
    def address(self) -> Tuple[str, int]:
        return self._server.server_address

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


class ApiClient:
    """Persistent-connection client for :class:`ApiServer`."""

    def __init__(self, host: str, port: int):
        self._sock = socket.create_connection((host, port))
        self._stream = self._sock.makefile("rwb")
        self._lock = threading.Lock()

    def request(self, endpoint: str, body: Optional[Dict[str, Any]] = None) -> Any:
        frame = canonical_bytes({"endpoint": endpoint, "body": body or {}})
        with self._lock:
            write_framed(self._stream, frame)
            self._stream.flush()
            raw = read_framed(self._stream)
        if raw is None:
            raise ServiceError("connection-closed", "server closed the connection")
        response = from_canonical(raw)
        if response.get("ok"):
            return response["result"]
        error = response.get("error", {})
        raise ServiceError(error.get("code", "internal"), error.get("message", ""))

    def close(self) -> None:
        try:
            self._stream.close()
        finally:
            self._sock.close()


# ---------------------------------------------------------------------------
# Ledger service surface
# ---------------------------------------------------------------------------


def ledger_api(ledger: ConsentLedger) -> Callable[[str, Dict[str, Any]], Any]:
    def handle(endpoint: str, body: Dict[str, Any]) -> Any:
        if endpoint == "submit":
            ref = ledger.submit(
                op=body["op"],
                args=body["args"],
                submitter=body["submitter"],
                nonce=body["nonce"],
                signature=Signature.from_dict(body["signature"]),
            )
            return ref.to_dict()
        if endpoint == "query_consent_proof":
            record, ref = ledger.get_consent_record(body["proof"])
            return {"record": record.__dict__ | {}, "ref": ref.to_dict()}
        if endpoint == "get_terms":
            record = ledger.get_terms(body["org_did"], body["project_id"], body["version"])
            return record.__dict__ | {}
        if endpoint == "terms_by_ref":
            record = ledger.terms_by_ref(TxRef.from_dict(body["ref"]))
            return record.__dict__ | {}
        if endpoint == "height":
            return ledger.height()
        if endpoint == "verify_chain":
            return ledger.verify_chain()
        raise ServiceError("unknown-endpoint", endpoint)

    return handle


class RemoteLedger:
    """Client-side ledger mirror usable by :class:`ccn.ledger.LedgerClient`."""

    def __init__(self, host: str, port: int):
        self._client = ApiClient(host, port)
        self._pool = ThreadPoolExecutor(max_workers=4)

    @staticmethod
    def _raise_typed(exc: ServiceError) -> None:
        try:
            code = TxCode(exc.code)
        except ValueError:
            raise exc from None
        raise LedgerError(code, str(exc)) from None

    def submit(self, op, args, submitter, nonce, signature: Signature) -> TxRef:
        try:
            result = self._client.request(
                "submit",
                {
                    "op": op,
                    "args": args,
                    "submitter": submitter,
                    "nonce": nonce,
                    "signature": signature.to_dict(),
                },
            )
        except ServiceError as exc:
            self._raise_typed(exc)
        return TxRef.from_dict(result)

    def submit_async(self, op, args, submitter, nonce, signature) -> "Future[TxRef]":
        return self._pool.submit(self.submit, op, args, submitter, nonce, signature)

    def get_consent_record(self, proof_hex: str) -> Tuple[ConsentRecord, TxRef]:
        try:
            result = self._client.request("query_consent_proof", {"proof": proof_hex})
        except ServiceError as exc:
            self._raise_typed(exc)
        record = result["record"]
        record["published_at"] = tuple(record["published_at"])
        if record.get("revoked_at"):
            record["revoked_at"] = tuple(record["revoked_at"])
        return ConsentRecord(**record), TxRef.from_dict(result["ref"])

    def height(self) -> int:
        return self._client.request("height")

    def verify_chain(self) -> Dict[str, Any]:
        return self._client.request("verify_chain")

    def close(self) -> None:
        self._pool.shutdown(wait=False)
        self._client.close()
