"""Loopback simulation of data owners streaming randomized records to a curator.

The curator (:class:`CuratorServer`) hands every connecting owner the
normalization statistics, encoding and privacy parameters, collects one
randomized record per frame, and once the expected number of sessions
has finished trains the classifier on everything it received.

Owners (:func:`client_session`) extract, normalize, encode and randomize
each image locally; only the randomized bits are ever written to the
socket.  The optional ``tap`` callback sees exactly those bytes.

Session flow::

    owner -> hello
    curator -> norm-stats
    owner -> record x N, done
    curator -> done (ack)

A connection that sends anything malformed receives an error frame and is
closed; its records are discarded and other sessions are unaffected.
"""

from __future__ import annotations

import asyncio
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .dense import DenseNet, DenseNetConfig, EpochStats, save_checkpoint, train
from .encoding import EncodingSpec, NormStats, sensitivity_of
from .features import ConvModule
from .ldp import PrivacyParams, ProtocolKind, ProtocolProbs, RngStream, protocol_probs
from .owner import OwnerDevice
from .wire import (
    Done,
    ErrorMsg,
    Hello,
    NormStatsMsg,
    ProtocolError,
    RandomizedRecord,
    frame_encode,
    read_message,
)

__all__ = [
    "ServerConfig",
    "ServerResult",
    "SessionSummary",
    "SessionError",
    "CuratorServer",
    "client_session",
    "run_server",
    "run_client",
]

log = logging.getLogger(__name__)

Tap = Callable[[int, bytes], None]


class SessionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ServerConfig:
    stats: NormStats
    spec: EncodingSpec
    epsilon: float
    alpha: float
    dense: DenseNetConfig
    expected_clients: int
    protocol: ProtocolKind = ProtocolKind.UER
    randomize: bool = True
    host: str = "127.0.0.1"
    port: int = 0
    output_dir: Optional[Path] = None
    timeout: float = 300.0
    idle_timeout: float = 30.0

    @property
    def bit_count(self) -> int:
        return sensitivity_of(self.spec, self.stats.n_features)

    def handshake(self) -> NormStatsMsg:
        params = PrivacyParams(self.epsilon, self.alpha, self.bit_count)
        return NormStatsMsg(self.stats, self.spec, params, ProtocolKind(self.protocol), self.randomize)


@dataclass
class SessionSummary:
    client_id: int
    records_sent: int
    mean_latency_s: float
    attempts: int


@dataclass
class ServerResult:
    net: Optional[DenseNet]
    trace: List[EpochStats]
    records: List[RandomizedRecord]
    per_client: Dict[int, int]
    rejected: List[str]
    checkpoint: Optional[Path] = None
    audit_log: Optional[Path] = None


class CuratorServer:
    """Accepts owner sessions until ``expected_clients`` have completed."""

    def __init__(self, config: ServerConfig):
        self.config = config
        self._handshake = config.handshake()
        self._records: List[RandomizedRecord] = []
        self._per_client: Dict[int, int] = {}
        self._audit: List[dict] = []
        self.rejected: List[str] = []
        self._completed = 0
        self._all_done = asyncio.Event()
        self._server: Optional[asyncio.base_events.Server] = None

    @property
    def port(self) -> int:
        return self._server.sockets[0].getsockname()[1]

    async def start(self) -> "CuratorServer":
        self._server = await asyncio.start_server(self._handle, self.config.host, self.config.port)
        return self

    async def _read(self, reader, offset):
        try:
            return await asyncio.wait_for(read_message(reader, offset), self.config.idle_timeout)
        except asyncio.TimeoutError:
            raise ProtocolError(f"no complete frame within {self.config.idle_timeout:g}s", offset) from None

    async def _session(self, reader, writer, peer) -> None:
        offset = 0
        msg, n = await self._read(reader, offset)
        offset += n
        if not isinstance(msg, Hello):
            raise ProtocolError(f"expected hello, got {type(msg).__name__}", 0)
        client_id = msg.client_id
        if client_id in self._per_client:
            raise ProtocolError(f"client id {client_id} already completed a session", 0)
        writer.write(frame_encode(self._handshake))
        await writer.drain()
        params = self._handshake.params
        pending: List[RandomizedRecord] = []
        while True:
            start = offset
            msg, n = await self._read(reader, offset)
            offset += n
            if isinstance(msg, Done):
                if msg.client_id != client_id or msg.records != len(pending):
                    raise ProtocolError(f"done frame claims {msg.records} records, received {len(pending)}", start)
                break
            if not isinstance(msg, RandomizedRecord):
                raise ProtocolError(f"unexpected {type(msg).__name__} frame", start)
            if msg.client_id != client_id:
                raise ProtocolError(f"record from client {msg.client_id} on session of {client_id}", start)
            if msg.bit_count != self.config.bit_count:
                raise ProtocolError(f"record has {msg.bit_count} bits, session agreed on {self.config.bit_count}", start)
            if msg.protocol != self._handshake.protocol:
                raise ProtocolError(f"record randomized with {msg.protocol.value}, session uses {self._handshake.protocol.value}", start)
            if msg.label >= self.config.dense.n_classes:
                raise ProtocolError(f"label {msg.label} out of range", start)
            pending.append(msg)
        # single collector: commit the whole session at once
        self._records.extend(pending)
        self._per_client[client_id] = len(pending)
        self._audit.append({
            "timestamp": time.time(),
            "client_id": client_id,
            "records": len(pending),
            "epsilon": params.epsilon,
            "alpha": params.alpha,
            "protocol": self._handshake.protocol.value,
            "peer": peer,
        })
        writer.write(frame_encode(Done(client_id, len(pending))))
        await writer.drain()
        self._completed += 1
        if self._completed >= self.config.expected_clients:
            self._all_done.set()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = "%s:%s" % writer.get_extra_info("peername")[:2]
        try:
            await self._session(reader, writer, peer)
        except ProtocolError as exc:
            log.warning("rejecting %s: %s", peer, exc)
            self.rejected.append(f"{peer}: {exc}")
            try:
                writer.write(frame_encode(ErrorMsg(str(exc))))
                await writer.drain()
            except (ConnectionError, OSError):
                pass
        except asyncio.IncompleteReadError:
            self.rejected.append(f"{peer}: connection closed before done")
        except (ConnectionError, OSError) as exc:
            self.rejected.append(f"{peer}: {exc}")
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    async def finish(self) -> ServerResult:
        """Wait for every expected session, then train and persist."""
        try:
            await asyncio.wait_for(self._all_done.wait(), self.config.timeout)
        finally:
            self._server.close()
            await self._server.wait_closed()
        return self._train_and_persist()

    def _train_and_persist(self) -> ServerResult:
        cfg = self.config
        x = np.stack([rec.bits for rec in self._records]) if self._records else np.zeros((0, cfg.bit_count), np.uint8)
        y = np.array([rec.label for rec in self._records], dtype=np.int64)
        net, trace = None, []
        if len(y):
            net, trace = train(DenseNet.init(cfg.bit_count, cfg.dense), x, y, cfg.dense)
        result = ServerResult(net, trace, list(self._records), dict(self._per_client), list(self.rejected))
        if cfg.output_dir is not None:
            out = Path(cfg.output_dir)
            out.mkdir(parents=True, exist_ok=True)
            if net is not None:
                result.checkpoint = out / "model.ltfc"
                save_checkpoint(net, result.checkpoint)
            result.audit_log = out / "audit.jsonl"
            with open(result.audit_log, "w") as fh:
                for entry in self._audit:
                    fh.write(json.dumps(entry) + "\n")
        return result


async def _one_attempt(images, labels, module, host, port, client_id, seed, tap) -> SessionSummary:
    reader, writer = await asyncio.open_connection(host, port)
    try:
        writer.write(frame_encode(Hello(client_id)))
        await writer.drain()
        offset = 0
        msg, n = await read_message(reader, offset)
        offset += n
        if isinstance(msg, ErrorMsg):
            raise SessionError(f"server refused session: {msg.message}")
        if not isinstance(msg, NormStatsMsg):
            raise SessionError(f"expected norm-stats, got {type(msg).__name__}")
        if msg.randomize:
            probs = protocol_probs(msg.protocol, msg.params)
        else:
            probs = ProtocolProbs.identity(msg.protocol)
        device = OwnerDevice(module, msg.stats, msg.spec, probs, RngStream(seed, client_id))
        if device.bit_count != msg.params.sensitivity:
            raise SessionError(f"module emits {device.bit_count} bits, session expects {msg.params.sensitivity}")
        for i, (image, label) in enumerate(zip(images, labels)):
            bits = device.perturb(image, i)
            record = RandomizedRecord(client_id, int(label), bits, msg.protocol, msg.params.epsilon, msg.params.alpha)
            frame = frame_encode(record)
            if tap is not None:
                tap(i, frame)
            writer.write(frame)
            await writer.drain()
        writer.write(frame_encode(Done(client_id, len(labels))))
        await writer.drain()
        msg, _ = await read_message(reader, offset)
        if isinstance(msg, ErrorMsg):
            raise SessionError(f"server rejected session: {msg.message}")
        if not isinstance(msg, Done) or msg.records != len(labels):
            raise SessionError("server did not acknowledge every record")
        return SessionSummary(client_id, len(labels), device.mean_latency, 0)
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionError, OSError):
            pass


async def client_session(
    images,
    labels,
    module: ConvModule,
    host: str,
    port: int,
    client_id: int,
    seed: int = 0,
    retries: int = 5,
    backoff: float = 0.05,
    max_backoff: float = 2.0,
    tap: Optional[Tap] = None,
) -> SessionSummary:
    """Stream one owner's records; retries lost connections with capped backoff.

    A retried session re-sends every record.  Record ``i`` always uses the
    randomness stream ``(seed, client_id, i)``, so a retry transmits the
    same randomized strings rather than fresh draws of the same input.
    ``tap(i, frame_bytes)`` is called with every record frame just before it
    is written.
    """
    labels = np.asarray(labels)
    if len(images) != len(labels):
        raise ValueError("one label per image is required")
    if not 0 <= client_id < 2**64:
        raise ValueError("client_id must fit in 64 bits")
    delay = backoff
    last: Optional[BaseException] = None
    for attempt in range(1, retries + 2):
        try:
            summary = await _one_attempt(images, labels, module, host, port, client_id, seed, tap)
            summary.attempts = attempt
            return summary
        except (ConnectionError, OSError, asyncio.IncompleteReadError, ProtocolError) as exc:
            last = exc
            if attempt > retries:
                break
            log.info("client %d attempt %d failed (%s); retrying in %.2fs", client_id, attempt, exc, delay)
            await asyncio.sleep(delay)
            delay = min(delay * 2, max_backoff)
    raise SessionError(f"client {client_id} gave up after {retries + 1} attempts: {last}")


def run_server(config: ServerConfig, ready: Optional[Callable[[int], None]] = None) -> ServerResult:
    """Blocking server; ``ready(port)`` is called once it is listening."""

    async def main():
        server = await CuratorServer(config).start()
        if ready is not None:
            ready(server.port)
        return await server.finish()

    return asyncio.run(main())


def run_client(images, labels, module: ConvModule, host: str, port: int, client_id: int, **kwargs) -> SessionSummary:
    return asyncio.run(client_session(images, labels, module, host, port, client_id, **kwargs))
