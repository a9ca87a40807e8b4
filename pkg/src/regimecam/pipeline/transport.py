"""Length-prefixed event transport over a reliable byte stream.

Message layout: u32 little-endian payload length, u8 type, payload.
Type 0 carries an EVF1 header, type 1 a whole number of EVF1 records,
type 2 (empty payload) ends the stream.
"""
from __future__ import annotations

import socket
import struct
import time
from typing import Iterator, NamedTuple, Optional

import numpy as np

from ..errors import BadFrame, PrematureEnd, UnknownType
from ..events import EVF1_HEADER, RECORD_SIZE, SensorMeta, decode_header, decode_records, encode_header, encode_records

MSG_HEADER = 0
MSG_BATCH = 1
MSG_END = 2
PREFIX = struct.Struct("<IB")
# refuse absurd lengths rather than trying to buffer them
MAX_PAYLOAD = 64 << 20


class Message(NamedTuple):
    kind: int
    value: object  # SensorMeta, event array, or None


def encode_stream_frame(kind: int, payload: bytes = b"") -> bytes:
    if kind not in (MSG_HEADER, MSG_BATCH, MSG_END):
        raise UnknownType(f"message type {kind}")
    return PREFIX.pack(len(payload), kind) + payload


def encode_header_message(meta: SensorMeta) -> bytes:
    return encode_stream_frame(MSG_HEADER, encode_header(meta))


def encode_batch_message(events: np.ndarray) -> bytes:
    return encode_stream_frame(MSG_BATCH, encode_records(events))


def encode_end_message() -> bytes:
    return encode_stream_frame(MSG_END)


def _parse(kind: int, payload: bytes) -> Message:
    if kind == MSG_HEADER:
        if len(payload) != EVF1_HEADER.size:
            raise BadFrame(f"header payload of {len(payload)} bytes")
        return Message(kind, decode_header(payload))
    if kind == MSG_BATCH:
        if len(payload) % RECORD_SIZE:
            raise BadFrame(f"batch payload of {len(payload)} bytes is not record aligned")
        return Message(kind, decode_records(payload))
    if kind == MSG_END:
        if payload:
            raise BadFrame("end message carries a payload")
        return Message(kind, None)
    raise UnknownType(f"message type {kind}")


def decode_stream_frame(data: bytes, offset: int = 0) -> tuple[Message, int]:
    """Decode one complete message at ``offset``; returns it and the bytes consumed.

    Raises PrematureEnd when ``data`` stops inside the message.
    """
    if len(data) - offset < PREFIX.size:
        raise PrematureEnd("stream ends inside a message prefix")
    length, kind = PREFIX.unpack_from(data, offset)
    if kind not in (MSG_HEADER, MSG_BATCH, MSG_END):
        raise UnknownType(f"message type {kind}")
    if length > MAX_PAYLOAD:
        raise BadFrame(f"payload length {length} exceeds limit")
    end = offset + PREFIX.size + length
    if len(data) < end:
        raise PrematureEnd(f"stream ends {end - len(data)} bytes short of a message")
    return _parse(kind, bytes(data[offset + PREFIX.size:end])), end - offset


class StreamDecoder:
    """Incremental decoder: feed arbitrary byte chunks, collect whole messages."""

    def __init__(self):
        self._buf = bytearray()
        self.ended = False

    def feed(self, chunk: bytes) -> list[Message]:
        if self.ended and chunk:
            raise BadFrame("data after end message")
        self._buf += chunk
        out, pos = [], 0
        while not self.ended:
            try:
                msg, used = decode_stream_frame(self._buf, pos)
            except PrematureEnd:
                break
            out.append(msg)
            pos += used
            if msg.kind == MSG_END:
                self.ended = True
        del self._buf[:pos]
        if self.ended and self._buf:
            raise BadFrame("data after end message")
        return out

    def close(self) -> None:
        """Signal end of the byte stream; a missing end message is an error."""
        if self._buf:
            raise PrematureEnd(f"{len(self._buf)} bytes of an incomplete message")
        if not self.ended:
            raise PrematureEnd("stream closed without an end message")


def iter_messages(sock: socket.socket, bufsize: int = 1 << 16) -> Iterator[Message]:
    dec = StreamDecoder()
    while not dec.ended:
        chunk = sock.recv(bufsize)
        if not chunk:
            dec.close()
        yield from dec.feed(chunk)


def send_events(sock: socket.socket, events: np.ndarray, meta: SensorMeta,
                batch: int = 4096, pace: str = "fast", t_origin: Optional[float] = None) -> None:
    """Write header, batches and the end message. ``pace='real'`` honours timestamps."""
    sock.sendall(encode_header_message(meta))
    start = time.monotonic() if t_origin is None else t_origin
    t0 = int(events["t"][0]) if len(events) else 0
    for s in range(0, len(events), batch):
        chunk = events[s:s + batch]
        if pace == "real":
            wait = (int(chunk["t"][0]) - t0) * 1e-6 - (time.monotonic() - start)
            if wait > 0:
                time.sleep(wait)
        sock.sendall(encode_batch_message(chunk))
    sock.sendall(encode_end_message())
