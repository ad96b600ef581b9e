"""Binary request/response protocol for remote label-only oracles.

Little-endian framing, one request and one response per round trip::

    request:  b"SFA1" | u32 channels | u32 n | channels*n*n float64 (C-order)
    response: b"SFA1" | u32 label

A connection may carry any number of round trips. Works over TCP sockets or
any pair of binary streams (e.g. stdin/stdout).
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading

import numpy as np

from .errors import (
    MalformedResponseError,
    OracleConnectionError,
    OracleError,
    OracleQueryError,
    OracleTimeoutError,
)
from .oracle import Oracle

log = logging.getLogger(__name__)

MAGIC = b"SFA1"
_HEADER = struct.Struct("<4sII")
_RESPONSE = struct.Struct("<4sI")
MAX_VALUES = 1 << 26


class FrameError(ValueError):
    pass


def encode_request(x) -> bytes:
    x = np.ascontiguousarray(x, dtype="<f8")
    if x.ndim != 3 or x.shape[1] != x.shape[2]:
        raise ValueError(f"expected (C, N, N) image, got shape {x.shape}")
    c, n, _ = x.shape
    return _HEADER.pack(MAGIC, c, n) + x.tobytes()


def encode_response(label: int) -> bytes:
    return _RESPONSE.pack(MAGIC, int(label))


def _read_exact(stream, size: int) -> bytes:
    """Read ``size`` bytes from a file-like object or socket; may return short."""
    chunks = []
    remaining = size
    recv = getattr(stream, "recv", None)
    while remaining:
        chunk = recv(remaining) if recv else stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_request(stream):
    """Next image from the stream, ``None`` on clean EOF, FrameError otherwise."""
    head = _read_exact(stream, _HEADER.size)
    if not head:
        return None
    if len(head) < _HEADER.size:
        raise FrameError("truncated request header")
    magic, c, n = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FrameError(f"bad magic {magic!r}")
    if c == 0 or n == 0 or c * n * n > MAX_VALUES:
        raise FrameError(f"unsupported dimensions channels={c} n={n}")
    size = 8 * c * n * n
    body = _read_exact(stream, size)
    if len(body) < size:
        raise FrameError("truncated request payload")
    return np.frombuffer(body, dtype="<f8").reshape(c, n, n).astype(float)


def decode_response(data: bytes) -> int:
    if len(data) != _RESPONSE.size:
        raise MalformedResponseError(f"expected {_RESPONSE.size} response bytes, got {len(data)}")
    magic, label = _RESPONSE.unpack(data)
    if magic != MAGIC:
        raise MalformedResponseError(f"bad response magic {magic!r}")
    return int(label)


def serve_stream(oracle: Oracle, rfile, wfile) -> int:
    """Answer requests until EOF or a malformed frame; returns frames served."""
    served = 0
    while True:
        try:
            x = read_request(rfile)
        except FrameError as exc:
            log.warning("dropping connection: %s", exc)
            return served
        if x is None:
            return served
        wfile.write(encode_response(oracle.query(x)))
        wfile.flush()
        served += 1


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        serve_stream(self.server.oracle, self.rfile, self.wfile)


class OracleServer(socketserver.ThreadingTCPServer):
    """Threaded TCP server exposing an in-process oracle."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, oracle: Oracle):
        super().__init__(address, _Handler)
        self.oracle = oracle

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"tcp://{host}:{port}"


def start_server(oracle: Oracle, host="127.0.0.1", port=0) -> OracleServer:
    """Serve ``oracle`` on a background thread; call ``shutdown()`` when done."""
    server = OracleServer((host, port), oracle)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    addr = endpoint[len("tcp://"):] if endpoint.startswith("tcp://") else endpoint
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must look like tcp://host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


class RemoteOracle(Oracle):
    """Client side of the protocol; one in-flight request per connection."""

    kind = "remote"

    def __init__(self, endpoint: str, timeout: float = 30.0):
        super().__init__()
        self.endpoint = endpoint
        self.timeout = timeout
        self._address = parse_endpoint(endpoint)
        self._sock = None
        self._io_lock = threading.Lock()

    @property
    def descriptor(self) -> str:
        return f"remote:{self.endpoint}"

    def _connect(self):
        try:
            self._sock = socket.create_connection(self._address, timeout=self.timeout)
        except ConnectionRefusedError as exc:
            raise OracleConnectionError(f"connection refused by {self.endpoint}") from exc
        except socket.timeout as exc:
            raise OracleTimeoutError(f"timed out connecting to {self.endpoint}") from exc
        except OSError as exc:
            raise OracleConnectionError(f"cannot connect to {self.endpoint}: {exc}") from exc

    def close(self):
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _round_trip(self, x) -> int:
        payload = encode_request(x)
        with self._io_lock:
            if self._sock is None:
                self._connect()
            try:
                self._sock.sendall(payload)
                data = _read_exact(self._sock, _RESPONSE.size)
            except socket.timeout as exc:
                self.close()
                raise OracleTimeoutError(f"no response from {self.endpoint}") from exc
            except OSError as exc:
                self.close()
                raise OracleConnectionError(f"connection to {self.endpoint} failed: {exc}") from exc
            try:
                return decode_response(data)
            except MalformedResponseError:
                self.close()
                raise

    def _labels(self, xs):
        out = np.empty(len(xs), dtype=np.int64)
        for k, x in enumerate(xs):
            try:
                out[k] = self._round_trip(x)
            except OracleError as exc:
                raise OracleQueryError(f"image {k}: {exc}", index=k) from exc
        return out

    def query(self, x) -> int:
        self._bump()
        return self._round_trip(np.asarray(x, dtype=float))


def connect_remote_oracle(endpoint: str, timeout: float = 30.0) -> RemoteOracle:
    return RemoteOracle(endpoint, timeout=timeout)
