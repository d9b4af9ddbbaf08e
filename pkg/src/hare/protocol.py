"""Newline-delimited JSON client for an external scoring / expansion model.

Requests are ``{"id": n, "op": "score" | "expand", "input": str}``.  A model
answers each with ``{"id": n, "score": float}`` (score), ``{"id": n, "output":
str}`` (expand) or ``{"id": n, "error": str}``.  The transport is either the
stdio of a spawned process or a TCP connection.
"""

from __future__ import annotations

import json
import logging
import shlex
import socket
import subprocess
import threading
from typing import Optional, Sequence

logger = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    """The model sent something that does not follow the protocol."""


class TransportError(RuntimeError):
    """The connection to the model failed."""


class ModelError(RuntimeError):
    """The model answered a request with an error."""


class _ProcessTransport:
    def __init__(self, argv: Sequence[str]):
        self.proc = subprocess.Popen(
            list(argv), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, encoding="utf-8", bufsize=1,
        )

    def send(self, lines: list[str]) -> None:
        self.proc.stdin.write("".join(line + "\n" for line in lines))
        self.proc.stdin.flush()

    def readline(self) -> str:
        return self.proc.stdout.readline()

    def close(self) -> None:
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class _SocketTransport:
    def __init__(self, host: str, port: int, timeout: Optional[float]):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.reader = self.sock.makefile("r", encoding="utf-8", newline="\n")

    def send(self, lines: list[str]) -> None:
        self.sock.sendall("".join(line + "\n" for line in lines).encode("utf-8"))

    def readline(self) -> str:
        return self.reader.readline()

    def close(self) -> None:
        self.reader.close()
        self.sock.close()


class ModelClient:
    """Talks to one model connection; requests on a connection are serialized.

    Parameters
    ----------
    command : str or list of str, optional
        Process to spawn; the protocol runs over its stdin/stdout.
    address : str, optional
        ``host:port`` of a TCP server speaking the same protocol.
    retries : int
        Reconnect-and-resend attempts after a transport failure.
    """

    def __init__(self, command=None, address: Optional[str] = None, retries: int = 2,
                 timeout: Optional[float] = 60.0):
        if (command is None) == (address is None):
            raise ValueError("give exactly one of command or address")
        self.command = shlex.split(command) if isinstance(command, str) else command
        self.address = address
        self.retries = retries
        self.timeout = timeout
        self._transport = None
        self._next_id = 0
        self._lock = threading.Lock()

    def _connect(self):
        if self._transport is None:
            if self.command is not None:
                self._transport = _ProcessTransport(self.command)
            else:
                host, _, port = self.address.rpartition(":")
                self._transport = _SocketTransport(host or "localhost", int(port), self.timeout)
        return self._transport

    def close(self) -> None:
        if self._transport is not None:
            self._transport.close()
            self._transport = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def request(self, op: str, inputs: Sequence[str]) -> list[dict]:
        """Send one request per input and return the responses in input order."""
        if not inputs:
            return []
        with self._lock:
            for attempt in range(self.retries + 1):
                try:
                    return self._roundtrip(op, inputs)
                except ProtocolError:
                    self.close()  # stream is out of sync
                    raise
                except (OSError, TransportError) as exc:
                    logger.warning("model transport failed (attempt %d): %s", attempt + 1, exc)
                    self.close()
                    last = exc
            raise TransportError(f"model unreachable after {self.retries + 1} attempts: {last}")

    def _roundtrip(self, op: str, inputs: Sequence[str]) -> list[dict]:
        transport = self._connect()
        ids = list(range(self._next_id, self._next_id + len(inputs)))
        self._next_id += len(inputs)
        transport.send([
            json.dumps({"id": i, "op": op, "input": text}, ensure_ascii=False)
            for i, text in zip(ids, inputs)
        ])
        pending = set(ids)
        responses: dict[int, dict] = {}
        while pending:
            line = transport.readline()
            if not line:
                raise TransportError("connection closed with responses outstanding")
            try:
                msg = json.loads(line)
                rid = msg["id"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise ProtocolError(f"malformed response line: {line.rstrip()!r}") from None
            if rid not in pending:
                raise ProtocolError(f"unexpected response id {rid!r}: {line.rstrip()!r}")
            pending.discard(rid)
            responses[rid] = msg
        return [responses[i] for i in ids]

    def score(self, inputs: Sequence[str]) -> list[float]:
        out = []
        for msg in self.request("score", inputs):
            if "error" in msg:
                raise ModelError(f"request {msg['id']}: {msg['error']}")
            try:
                value = float(msg["score"])
            except (KeyError, TypeError, ValueError):
                raise ProtocolError(f"score response without a numeric score: {json.dumps(msg)}") from None
            if value != value or value in (float("inf"), float("-inf")):
                raise ProtocolError(f"non-finite score: {json.dumps(msg)}")
            out.append(value)
        return out

    def expand(self, text: str) -> str:
        (msg,) = self.request("expand", [text])
        if "error" in msg:
            raise ModelError(f"request {msg['id']}: {msg['error']}")
        output = msg.get("output")
        if not isinstance(output, str):
            raise ProtocolError(f"expand response without a string output: {json.dumps(msg)}")
        return output


def format_score_input(query: str, document: str) -> str:
    return f"query: {query} document: {document}"
