"""One-shot gradient federation: partitioning, wire format, and transports.

A round is: the hub (site 1) broadcasts the init matrix theta0, every other
site computes its local pseudo-likelihood gradient at theta0 and uploads it
once, and the hub aggregates the sample-weighted mean and forms the
correction ``aggregate - hub_gradient``. Only p x p gradient matrices ever
cross the boundary; raw samples stay on their site.

Wire layout (little-endian throughout)::

    magic   "DNL1"                      4 bytes
    u8      version = 1
    u8      msg_type  (1 broadcast, 2 gradient)
    u32     round_id
    u32     p
    u32     site_id   (0 for broadcast)
    u64     n_i       (0 for broadcast)
    f64[p*p] payload, row-major
    u32     CRC-32 (IEEE) over everything after the magic

Three interchangeable transports carry those bytes: in-process, a shared
exchange directory (files ``round_<r>_theta0.dnl`` / ``round_<r>_site_<i>.dnl``),
and TCP with u32-length-prefixed frames (hub listens, sites dial). All three
yield bit-identical corrections. The round deadline defaults to 60 s and can
be overridden with the DANIEL_ROUND_DEADLINE_SECS environment variable.
"""

from __future__ import annotations

import math
import os
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import BinaryDataset, ParameterMatrix, pseudo_nll_grad

__all__ = [
    "ProtocolError",
    "WireError",
    "RoundError",
    "Partition",
    "make_partition",
    "partition_into",
    "BroadcastMessage",
    "GradientMessage",
    "encode_message",
    "decode_message",
    "site_gradient",
    "aggregate",
    "make_correction",
    "InProcessTransport",
    "DirectoryTransport",
    "TcpTransport",
    "RoundStats",
    "RoundResult",
    "run_round",
    "default_deadline",
    "hub_collect",
    "site_respond",
]

MAGIC = b"DNL1"
VERSION = 1
TYPE_BROADCAST = 1
TYPE_GRADIENT = 2
_HEADER = struct.Struct("<BBIIIQ")
_FRAME = struct.Struct("<I")
DEADLINE_ENV = "DANIEL_ROUND_DEADLINE_SECS"
DEFAULT_DEADLINE_SECS = 60.0


class ProtocolError(Exception):
    """Base for federation failures; ``code`` is a short machine-readable tag."""

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"[{code}] {message}")


class WireError(ProtocolError):
    """Malformed bytes: bad-magic, bad-version, bad-type, truncated, bad-checksum."""


class RoundError(ProtocolError):
    """Round-level failure: timeout, round-mismatch, missing or duplicate sites."""


def default_deadline() -> float:
    raw = os.environ.get(DEADLINE_ENV)
    if raw is None:
        return DEFAULT_DEADLINE_SECS
    value = float(raw)
    if value <= 0:
        raise ValueError(f"{DEADLINE_ENV} must be positive")
    return value


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    """Disjoint contiguous index blocks covering range(n); site 1 is the hub."""

    assignments: tuple
    n: int

    @property
    def m(self) -> int:
        return len(self.assignments)

    @property
    def hub(self) -> int:
        return 1

    def block(self, site_id: int) -> np.ndarray:
        """Sample indices for a 1-based site id."""
        return self.assignments[site_id - 1]


def partition_into(n: int, m: int) -> Partition:
    """Split range(n) into m contiguous blocks, remainder to the lowest sites."""
    if n < 1 or m < 1 or m > n:
        raise ValueError(f"cannot split n={n} samples across m={m} sites")
    base, extra = divmod(n, m)
    blocks, start = [], 0
    for i in range(m):
        size = base + (1 if i < extra else 0)
        idx = np.arange(start, start + size)
        idx.setflags(write=False)
        blocks.append(idx)
        start += size
    return Partition(assignments=tuple(blocks), n=n)


def make_partition(n: int, x: float) -> Partition:
    """m = max(1, floor(n**x)) sites for distributedness level x in [0, 1]."""
    if n < 1:
        raise ValueError("need n >= 1")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"distributedness x={x} must lie in [0, 1]")
    m = max(1, math.floor(n**x))
    return partition_into(n, m)


# ---------------------------------------------------------------------------
# Messages and wire format
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BroadcastMessage:
    round_id: int
    theta0: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.theta0, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError("theta0 must be square")
        if not np.all(np.isfinite(t)):
            raise ValueError("theta0 must be finite")
        if np.max(np.abs(t - t.T)) > 1e-12:
            raise ValueError("theta0 must be symmetric within 1e-12")
        t.setflags(write=False)
        object.__setattr__(self, "theta0", t)

    @property
    def p(self) -> int:
        return self.theta0.shape[0]

    @property
    def checksum(self) -> int:
        return zlib.crc32(_body(self))


@dataclass(frozen=True)
class GradientMessage:
    site_id: int
    round_id: int
    n_i: int
    gradient: np.ndarray

    def __post_init__(self):
        g = np.ascontiguousarray(self.gradient, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("gradient must be square")
        if not np.all(np.isfinite(g)):
            raise ValueError("gradient must be finite")
        if self.site_id < 1:
            raise ValueError("site_id is 1-based")
        g.setflags(write=False)
        object.__setattr__(self, "gradient", g)

    @property
    def p(self) -> int:
        return self.gradient.shape[0]

    @property
    def checksum(self) -> int:
        return zlib.crc32(_body(self))


def _body(msg) -> bytes:
    """Everything after the magic and before the CRC."""
    if isinstance(msg, BroadcastMessage):
        head = _HEADER.pack(VERSION, TYPE_BROADCAST, msg.round_id, msg.p, 0, 0)
        payload = msg.theta0
    elif isinstance(msg, GradientMessage):
        head = _HEADER.pack(
            VERSION, TYPE_GRADIENT, msg.round_id, msg.p, msg.site_id, msg.n_i
        )
        payload = msg.gradient
    else:
        raise TypeError(f"cannot encode {type(msg).__name__}; only round messages cross the wire")
    return head + payload.astype("<f8", copy=False).tobytes(order="C")


def encode_message(msg) -> bytes:
    body = _body(msg)
    return MAGIC + body + struct.pack("<I", zlib.crc32(body))


def decode_message(buf: bytes):
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise WireError("bad-magic", "message does not start with DNL1")
    if len(buf) < 4 + _HEADER.size + 4:
        raise WireError("truncated", f"message of {len(buf)} bytes is too short")
    body, (crc,) = buf[4:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise WireError("bad-checksum", "CRC-32 mismatch")
    version, msg_type, round_id, p, site_id, n_i = _HEADER.unpack_from(body)
    if version != VERSION:
        raise WireError("bad-version", f"unsupported version {version}")
    expected = _HEADER.size + 8 * p * p
    if len(body) != expected:
        raise WireError("truncated", f"payload length {len(body)} != {expected}")
    payload = np.frombuffer(body, dtype="<f8", offset=_HEADER.size).reshape(p, p)
    if msg_type == TYPE_BROADCAST:
        return BroadcastMessage(round_id=round_id, theta0=payload)
    if msg_type == TYPE_GRADIENT:
        return GradientMessage(
            site_id=site_id, round_id=round_id, n_i=n_i, gradient=payload
        )
    raise WireError("bad-type", f"unknown message type {msg_type}")


# ---------------------------------------------------------------------------
# Round arithmetic
# ---------------------------------------------------------------------------


def site_gradient(
    local_data: BinaryDataset,
    theta0: ParameterMatrix,
    site_id: int = 1,
    round_id: int = 1,
) -> GradientMessage:
    """Local gradient at theta0, stamped with provenance."""
    grad = pseudo_nll_grad(theta0, local_data)
    return GradientMessage(
        site_id=site_id, round_id=round_id, n_i=local_data.n, gradient=grad
    )


def aggregate(messages) -> np.ndarray:
    """Sample-weighted mean gradient: sum(n_i * g_i) / sum(n_i).

    Reduces to the plain mean for equal site sizes. Requires a consistent
    round and dimension, at most one message per site, and the hub's own
    message (site 1) to be present.
    """
    msgs = sorted(messages, key=lambda m: m.site_id)
    if not msgs:
        raise RoundError("missing-hub", "no gradient messages to aggregate")
    round_id, p = msgs[0].round_id, msgs[0].p
    seen = set()
    for m in msgs:
        if m.round_id != round_id:
            raise RoundError(
                "round-mismatch", f"site {m.site_id} answered round {m.round_id}, expected {round_id}"
            )
        if m.p != p:
            raise RoundError("dimension-mismatch", f"site {m.site_id} sent p={m.p}, expected {p}")
        if m.site_id in seen:
            raise RoundError("duplicate-site", f"two messages from site {m.site_id}")
        seen.add(m.site_id)
    if 1 not in seen:
        raise RoundError("missing-hub", "hub gradient (site 1) absent from aggregation")
    total = sum(m.n_i for m in msgs)
    acc = np.zeros((p, p))
    for m in msgs:
        acc += (m.n_i / total) * m.gradient  # weight 1.0 keeps m=1 bit-exact
    return acc


def make_correction(global_grad: np.ndarray, hub_grad: np.ndarray) -> np.ndarray:
    if global_grad.shape != hub_grad.shape:
        raise ValueError("gradient shapes must match")
    return global_grad - hub_grad


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InProcessTransport:
    """Messages still pass through encode/decode, just without leaving memory."""


@dataclass(frozen=True)
class DirectoryTransport:
    """File exchange in a shared directory; hub and sites poll until deadline."""

    directory: str
    deadline: float | None = None
    poll_interval: float = 0.02


@dataclass(frozen=True)
class TcpTransport:
    """Hub listens on host:port (port 0 picks an ephemeral port); sites dial."""

    host: str = "127.0.0.1"
    port: int = 0
    deadline: float | None = None


@dataclass
class RoundStats:
    """Instrumented message counters for the one-shot property."""

    broadcasts_sent: int = 0
    gradients_received: int = 0
    site_sends: dict = field(default_factory=dict)


@dataclass
class RoundResult:
    correction: np.ndarray
    global_grad: np.ndarray
    hub_grad: np.ndarray
    stats: RoundStats


def _deadline_of(transport) -> float:
    configured = getattr(transport, "deadline", None)
    return configured if configured is not None else default_deadline()


def _send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(_FRAME.pack(len(payload)) + payload)


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    buf = b""
    while len(buf) < count:
        chunk = sock.recv(count - len(buf))
        if not chunk:
            raise WireError("truncated", "connection closed mid-frame")
        buf += chunk
    return buf


def _recv_frame(sock: socket.socket) -> bytes:
    (length,) = _FRAME.unpack(_recv_exact(sock, _FRAME.size))
    return _recv_exact(sock, length)


def _broadcast_path(directory: Path, round_id: int) -> Path:
    return directory / f"round_{round_id}_theta0.dnl"


def _site_path(directory: Path, round_id: int, site_id: int) -> Path:
    return directory / f"round_{round_id}_site_{site_id}.dnl"


def _write_atomic(path: Path, payload: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def _poll_file(path: Path, deadline_at: float, poll: float) -> bytes:
    while True:
        if path.exists():
            return path.read_bytes()
        if time.monotonic() > deadline_at:
            raise RoundError("timeout", f"gave up waiting for {path.name}")
        time.sleep(poll)


# ---- site side --------------------------------------------------------------


def site_respond(transport, local_data: BinaryDataset, site_id: int, round_id: int = 1) -> None:
    """Run one site's half of a round: receive theta0, upload one gradient."""
    if isinstance(transport, DirectoryTransport):
        directory = Path(transport.directory)
        deadline_at = time.monotonic() + _deadline_of(transport)
        raw = _poll_file(_broadcast_path(directory, round_id), deadline_at, transport.poll_interval)
        broadcast = decode_message(raw)
        _require_broadcast(broadcast, round_id)
        reply = site_gradient(
            local_data, ParameterMatrix(broadcast.theta0), site_id=site_id, round_id=round_id
        )
        _write_atomic(_site_path(directory, round_id, site_id), encode_message(reply))
    elif isinstance(transport, TcpTransport):
        deadline_at = time.monotonic() + _deadline_of(transport)
        while True:  # the hub may not be listening yet; retry until the deadline
            try:
                sock = socket.create_connection(
                    (transport.host, transport.port),
                    timeout=max(deadline_at - time.monotonic(), 1e-3),
                )
                break
            except OSError:
                if time.monotonic() > deadline_at:
                    raise RoundError("timeout", "could not reach the hub before the deadline")
                time.sleep(0.02)
        with sock:
            sock.settimeout(max(deadline_at - time.monotonic(), 1e-3))
            broadcast = decode_message(_recv_frame(sock))
            _require_broadcast(broadcast, round_id)
            reply = site_gradient(
                local_data, ParameterMatrix(broadcast.theta0), site_id=site_id, round_id=round_id
            )
            _send_frame(sock, encode_message(reply))
    else:
        raise TypeError(f"site_respond does not support {type(transport).__name__}")


def _require_broadcast(msg, round_id: int) -> None:
    if not isinstance(msg, BroadcastMessage):
        raise RoundError("round-mismatch", "expected a broadcast message")
    if msg.round_id != round_id:
        raise RoundError(
            "round-mismatch", f"broadcast is for round {msg.round_id}, expected {round_id}"
        )


# ---- hub side ---------------------------------------------------------------


def hub_collect(transport, broadcast: BroadcastMessage, site_ids, stats: RoundStats):
    """Broadcast theta0 and collect exactly one gradient message per site."""
    site_ids = sorted(site_ids)
    payload = encode_message(broadcast)
    replies = []
    if not site_ids:
        stats.broadcasts_sent = 1
        return replies

    if isinstance(transport, InProcessTransport):
        raise TypeError("in-process rounds are driven by run_round directly")

    if isinstance(transport, DirectoryTransport):
        directory = Path(transport.directory)
        directory.mkdir(parents=True, exist_ok=True)
        deadline_at = time.monotonic() + _deadline_of(transport)
        _write_atomic(_broadcast_path(directory, broadcast.round_id), payload)
        stats.broadcasts_sent = 1
        for site_id in site_ids:
            raw = _poll_file(
                _site_path(directory, broadcast.round_id, site_id),
                deadline_at,
                transport.poll_interval,
            )
            replies.append(decode_message(raw))
    elif isinstance(transport, TcpTransport):
        deadline = _deadline_of(transport)
        deadline_at = time.monotonic() + deadline
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
            server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            server.bind((transport.host, transport.port))
            server.listen(len(site_ids))
            bound_port = server.getsockname()[1]
            _publish_port(transport, bound_port)
            stats.broadcasts_sent = 1
            for _ in site_ids:
                remaining = deadline_at - time.monotonic()
                if remaining <= 0:
                    raise RoundError("timeout", "round deadline expired before all sites connected")
                server.settimeout(remaining)
                try:
                    conn, _addr = server.accept()
                except socket.timeout:
                    raise RoundError("timeout", "round deadline expired before all sites connected")
                with conn:
                    conn.settimeout(max(deadline_at - time.monotonic(), 1e-3))
                    _send_frame(conn, payload)
                    replies.append(decode_message(_recv_frame(conn)))
    else:
        raise TypeError(f"unknown transport {type(transport).__name__}")

    got = sorted(r.site_id for r in replies if isinstance(r, GradientMessage))
    if got != site_ids:
        raise RoundError(
            "missing-site", f"expected gradients from sites {site_ids}, got {got}"
        )
    stats.gradients_received = len(replies)
    for r in replies:
        stats.site_sends[r.site_id] = stats.site_sends.get(r.site_id, 0) + 1
    return replies


_PORT_CALLBACKS: dict[int, object] = {}


def _publish_port(transport: TcpTransport, port: int) -> None:
    # lets tests using port=0 learn the ephemeral port before dialing back
    cb = _PORT_CALLBACKS.pop(id(transport), None)
    if cb is not None:
        cb(port)


def on_port_bound(transport: TcpTransport, callback) -> None:
    _PORT_CALLBACKS[id(transport)] = callback


def run_round(
    transport,
    partition: Partition,
    theta0: ParameterMatrix,
    full_data: BinaryDataset,
    round_id: int = 1,
) -> RoundResult:
    """Execute one full communication round and return the correction.

    ``full_data`` plus the partition stand in for the per-site shards; with
    the directory and TCP transports the non-hub sites run on worker threads
    and their bytes genuinely traverse the transport. Exactly one broadcast
    and one upload per site happen regardless of transport. Fails atomically:
    a missing or malformed site reply raises and no correction is produced.
    """
    if partition.n != full_data.n:
        raise ValueError("partition does not match the dataset size")
    stats = RoundStats()
    broadcast = BroadcastMessage(round_id=round_id, theta0=theta0.values)
    hub_data = full_data.subset(partition.block(1))
    hub_msg_raw = site_gradient(hub_data, theta0, site_id=1, round_id=round_id)
    hub_msg = decode_message(encode_message(hub_msg_raw))
    remote_ids = list(range(2, partition.m + 1))

    if isinstance(transport, InProcessTransport) or not remote_ids:
        stats.broadcasts_sent = 1
        replies = []
        for site_id in remote_ids:
            echoed = decode_message(encode_message(broadcast))
            _require_broadcast(echoed, round_id)
            shard = full_data.subset(partition.block(site_id))
            reply = site_gradient(
                shard, ParameterMatrix(echoed.theta0), site_id=site_id, round_id=round_id
            )
            replies.append(decode_message(encode_message(reply)))
            stats.site_sends[site_id] = stats.site_sends.get(site_id, 0) + 1
        stats.gradients_received = len(replies)
    else:
        workers = []
        errors = []

        def _serve(site_id: int):
            try:
                shard = full_data.subset(partition.block(site_id))
                site_respond(transport, shard, site_id, round_id)
            except Exception as exc:  # surfaced after join
                errors.append((site_id, exc))

        if isinstance(transport, TcpTransport) and transport.port == 0:
            port_box = {}
            on_port_bound(transport, lambda port: port_box.update(port=port))

            def _serve_tcp(site_id: int):
                while "port" not in port_box:
                    time.sleep(0.001)
                live = TcpTransport(
                    host=transport.host, port=port_box["port"], deadline=transport.deadline
                )
                try:
                    shard = full_data.subset(partition.block(site_id))
                    site_respond(live, shard, site_id, round_id)
                except Exception as exc:
                    errors.append((site_id, exc))

            workers = [threading.Thread(target=_serve_tcp, args=(s,)) for s in remote_ids]
        else:
            workers = [threading.Thread(target=_serve, args=(s,)) for s in remote_ids]
        for w in workers:
            w.start()
        try:
            replies = hub_collect(transport, broadcast, remote_ids, stats)
        finally:
            for w in workers:
                w.join()
        if errors:
            site_id, exc = errors[0]
            if isinstance(exc, ProtocolError):
                raise exc
            raise RoundError("site-failure", f"site {site_id} failed: {exc}")

    global_grad = aggregate([hub_msg, *replies])
    correction = make_correction(global_grad, hub_msg.gradient)
    return RoundResult(
        correction=correction,
        global_grad=global_grad,
        hub_grad=hub_msg.gradient,
        stats=stats,
    )
