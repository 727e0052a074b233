"""Framed serial protocol between the PUF authenticator and the host.

Wire frame::

    0xA5 | msg_type u8 | length u16 | payload[length] | crc16 u16

The CRC is CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF) over
``msg_type | length | payload``.  Messages longer than one frame are
fragmented: every fragment but the last has bit 0x80 set in msg_type.
"""
from __future__ import annotations

import binascii
import enum
import select
import socket
import struct
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

from .envelope import Envelope, WrappedKey, unseal
from .errors import (BadCrc, BadSof, CorruptionError, FormatError, FrameError, HsmError, Oversize,
                     Truncated, UnknownChallengeError, UnknownMessageType, WrongKeyError)
from .keybits import Pin, token_for
from .puf import PufInstance

SOF = 0xA5
MAX_PAYLOAD = 4096
MORE_FRAGMENTS = 0x80
HEADER = struct.Struct(">BBH")
CRC = struct.Struct(">H")
FRAME_OVERHEAD = HEADER.size + CRC.size


class MessageType(enum.IntEnum):
    ENROLL = 0x01
    AUTH_REQUEST = 0x02
    AUTH_OK = 0x10
    AUTH_FAIL = 0x11
    DECRYPT_REQUEST = 0x20
    DECRYPT_RESULT = 0x21
    ERROR = 0x7F


class ErrorCode(enum.IntEnum):
    MALFORMED = 0x01
    BAD_PIN = 0x02
    UNSUPPORTED = 0x03
    PUF_LOOKUP = 0x04
    FRAMING = 0x05


class DecryptStatus(enum.IntEnum):
    OK = 0x00
    DENIED = 0x01
    WRONG_KEY = 0x02
    CORRUPT = 0x03
    FORMAT = 0x04


class Indicator(enum.Enum):
    IDLE = "idle"
    GREEN = "green"
    RED = "red"


def crc16_ccitt_false(data: bytes) -> int:
    # binascii.crc_hqx is the 0x1021 MSB-first CRC; init 0xFFFF makes it CCITT-FALSE
    return binascii.crc_hqx(data, 0xFFFF)


def _message_type(value: int) -> MessageType:
    try:
        return MessageType(value & ~MORE_FRAGMENTS)
    except ValueError:
        raise UnknownMessageType(f"unknown message type {value:#04x}") from None


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    if not 0 <= msg_type <= 0xFF:
        raise ValueError(f"msg_type {msg_type} does not fit in a byte")
    _message_type(msg_type)
    payload = bytes(payload)
    if len(payload) > MAX_PAYLOAD:
        raise Oversize(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    body = HEADER.pack(SOF, msg_type, len(payload))[1:] + payload
    return bytes([SOF]) + body + CRC.pack(crc16_ccitt_false(body))


def frame_length(buf: bytes) -> Optional[int]:
    """Total length of the frame starting at ``buf[0]``, or None if the header is incomplete."""
    if len(buf) and buf[0] != SOF:
        raise BadSof(f"expected start-of-frame 0xA5, got {buf[0]:#04x}")
    if len(buf) < HEADER.size:
        return None
    _, _, length = HEADER.unpack_from(buf)
    if length > MAX_PAYLOAD:
        raise Oversize(f"declared length {length} exceeds {MAX_PAYLOAD}")
    return length + FRAME_OVERHEAD


def decode_frame(buf: bytes) -> Tuple[int, bytes]:
    """Decode exactly one complete frame into ``(msg_type, payload)``."""
    buf = bytes(buf)
    if not buf:
        raise Truncated("empty frame")
    total = frame_length(buf)
    if total is None or len(buf) < total:
        raise Truncated(f"frame truncated at {len(buf)} bytes")
    if len(buf) > total:
        raise FrameError(f"{len(buf) - total} trailing bytes after frame")
    body, (crc,) = buf[1:-CRC.size], CRC.unpack_from(buf, total - CRC.size)
    if crc16_ccitt_false(body) != crc:
        raise BadCrc(f"crc mismatch: frame says {crc:#06x}, computed {crc16_ccitt_false(body):#06x}")
    msg_type = body[0]
    _message_type(msg_type)
    return msg_type, body[3:]


def encode_message(msg_type: MessageType, payload: bytes = b"") -> bytes:
    """Encode a message, fragmenting payloads larger than one frame."""
    if msg_type & MORE_FRAGMENTS:
        raise ValueError("message type must not carry the fragment bit")
    pieces = [payload[i:i + MAX_PAYLOAD] for i in range(0, len(payload), MAX_PAYLOAD)] or [b""]
    out = [encode_frame(msg_type | MORE_FRAGMENTS, p) for p in pieces[:-1]]
    out.append(encode_frame(msg_type, pieces[-1]))
    return b"".join(out)


class MessageDecoder:
    """Incremental decoder: feed bytes, collect complete (reassembled) messages."""

    def __init__(self):
        self._buf = bytearray()
        self._frag_type: Optional[int] = None
        self._frag = bytearray()

    @property
    def pending(self) -> int:
        return len(self._buf)

    def feed(self, data: bytes) -> List[Tuple[MessageType, bytes]]:
        self._buf += data
        out = []
        while self._buf:
            try:
                total = frame_length(self._buf)
            except FrameError:
                self._buf.clear()
                raise
            if total is None or len(self._buf) < total:
                break
            raw = bytes(self._buf[:total])
            del self._buf[:total]
            msg_type, payload = decode_frame(raw)
            base = _message_type(msg_type)
            if self._frag_type is not None and self._frag_type != base:
                self._frag_type = None
                self._frag.clear()
                raise FrameError("fragment sequence interrupted by a different message type")
            self._frag += payload
            if msg_type & MORE_FRAGMENTS:
                self._frag_type = base
                continue
            out.append((base, bytes(self._frag)))
            self._frag_type = None
            self._frag.clear()
        return out

    def finish(self) -> None:
        """Call at end of stream; raises :class:`Truncated` if a frame was cut off."""
        if self._buf or self._frag_type is not None:
            raise Truncated(f"stream closed mid-frame with {len(self._buf)} bytes buffered")


# --- device -----------------------------------------------------------------

@dataclass(frozen=True)
class DeviceState:
    puf: PufInstance
    enrolled: FrozenSet[bytes] = frozenset()
    indicator: Indicator = Indicator.IDLE


def credential_payload(key_file: bytes, pin: Union[Pin, str]) -> bytes:
    digits = pin.digits if isinstance(pin, Pin) else Pin(pin).digits
    return bytes(key_file) + b"\x00" + digits.encode("ascii")


def parse_credentials(payload: bytes) -> Tuple[bytes, Pin]:
    """Split ``key | 0x00 | pin``; the last zero byte is the separator."""
    sep = payload.rfind(b"\x00")
    if sep <= 0:
        raise ValueError("credential payload has no key/PIN separator")
    return payload[:sep], Pin(payload[sep + 1:].decode("ascii", errors="replace"))


def _error(code: ErrorCode) -> Tuple[MessageType, bytes]:
    return MessageType.ERROR, bytes([code])


def device_handle(state: DeviceState, msg_type: int, payload: bytes) -> Tuple[DeviceState, Tuple[MessageType, bytes]]:
    """One step of the authenticator: ``(state, message) -> (state', reply)``."""
    if msg_type not in (MessageType.ENROLL, MessageType.AUTH_REQUEST):
        return state, _error(ErrorCode.UNSUPPORTED)
    sep = payload.rfind(b"\x00")
    if sep <= 0:
        return state, _error(ErrorCode.MALFORMED)
    try:
        key, pin = parse_credentials(payload)
    except ValueError:
        return state, _error(ErrorCode.BAD_PIN)
    try:
        token = token_for(state.puf, key, pin).to_bytes()
    except UnknownChallengeError:
        return state, _error(ErrorCode.PUF_LOOKUP)
    if msg_type == MessageType.ENROLL:
        return replace(state, enrolled=state.enrolled | {token}, indicator=Indicator.IDLE), (MessageType.AUTH_OK, b"")
    if token in state.enrolled:
        return replace(state, indicator=Indicator.GREEN), (MessageType.AUTH_OK, b"")
    return replace(state, indicator=Indicator.RED), (MessageType.AUTH_FAIL, b"")


# --- host -------------------------------------------------------------------

@dataclass(frozen=True)
class AuthFrameReceived:
    """A reply frame from the device.  Only an AUTH_OK answering an
    AUTH_REQUEST grants access; the same code acknowledging ENROLL does not."""

    msg_type: int
    in_reply_to: int = MessageType.AUTH_REQUEST


@dataclass(frozen=True)
class UserDecryptRequest:
    pass


HostEvent = Union[AuthFrameReceived, UserDecryptRequest]


@dataclass(frozen=True)
class HostState:
    envelope: Envelope
    wrapped: WrappedKey
    private_key: Tuple[int, int] = field(repr=False)
    auth_granted: bool = False


def host_handle(state: HostState, event: HostEvent) -> Tuple[HostState, Optional[bytes]]:
    """Host transition.  Returns plaintext only for a granted decrypt request.

    Unseal errors propagate unchanged and leave ``auth_granted`` as it was.
    """
    if isinstance(event, AuthFrameReceived):
        if event.msg_type == MessageType.AUTH_OK:
            if event.in_reply_to != MessageType.AUTH_REQUEST:
                return state, None
            return replace(state, auth_granted=True), None
        if event.msg_type == MessageType.AUTH_FAIL:
            return replace(state, auth_granted=False), None
        return state, None
    if isinstance(event, UserDecryptRequest):
        if not state.auth_granted:
            return state, None
        return state, unseal(state.envelope, state.wrapped, state.private_key)
    raise TypeError(f"unknown host event {event!r}")


_STATUS_FOR = {WrongKeyError: DecryptStatus.WRONG_KEY, CorruptionError: DecryptStatus.CORRUPT,
               FormatError: DecryptStatus.FORMAT}


def host_decrypt(state: HostState) -> Tuple[HostState, DecryptStatus, Optional[bytes]]:
    """Run a user decrypt request and map the outcome onto a DECRYPT_RESULT status."""
    try:
        state, plaintext = host_handle(state, UserDecryptRequest())
    except (WrongKeyError, CorruptionError, FormatError) as exc:
        return state, _STATUS_FOR[type(exc)], None
    if plaintext is None:
        return state, DecryptStatus.DENIED, None
    return state, DecryptStatus.OK, plaintext


# --- transports ---------------------------------------------------------------

class PipeEnd:
    """One end of an in-process duplex byte pipe (thread-safe)."""

    def __init__(self, inbox: bytearray, outbox: bytearray, lock: threading.Condition, flags: dict, side: str):
        self._inbox, self._outbox = inbox, outbox
        self._cond, self._flags, self._side = lock, flags, side

    def write(self, data: bytes) -> None:
        with self._cond:
            if self._flags[self._side]:
                raise BrokenPipeError("write on closed pipe end")
            self._outbox += data
            self._cond.notify_all()

    def read_available(self, timeout: float = 0.0) -> bytes:
        with self._cond:
            if not self._inbox and timeout and not self._peer_closed():
                self._cond.wait_for(lambda: self._inbox or self._peer_closed(), timeout)
            data = bytes(self._inbox)
            self._inbox.clear()
            return data

    def _peer_closed(self) -> bool:
        return self._flags["a" if self._side == "b" else "b"]

    @property
    def at_eof(self) -> bool:
        with self._cond:
            return self._peer_closed() and not self._inbox

    def close(self) -> None:
        with self._cond:
            self._flags[self._side] = True
            self._cond.notify_all()


def pipe_pair() -> Tuple[PipeEnd, PipeEnd]:
    a_to_b, b_to_a = bytearray(), bytearray()
    cond = threading.Condition()
    flags = {"a": False, "b": False}
    return PipeEnd(b_to_a, a_to_b, cond, flags, "a"), PipeEnd(a_to_b, b_to_a, cond, flags, "b")


class SocketEnd:
    """Endpoint adapter over a connected stream socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._eof = False

    def write(self, data: bytes) -> None:
        self.sock.sendall(data)

    def read_available(self, timeout: float = 0.0) -> bytes:
        if self._eof:
            return b""
        chunks = []
        wait = timeout
        while True:
            ready, _, _ = select.select([self.sock], [], [], wait)
            if not ready:
                break
            data = self.sock.recv(65536)
            if not data:
                self._eof = True
                break
            chunks.append(data)
            wait = 0.0
        return b"".join(chunks)

    @property
    def at_eof(self) -> bool:
        return self._eof

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass


def socket_pair() -> Tuple[SocketEnd, SocketEnd]:
    a, b = socket.socketpair()
    return SocketEnd(a), SocketEnd(b)


class FaultyEnd:
    """Wraps an endpoint and tampers with outgoing frames for fault injection.

    ``drop`` lists message types silently discarded; ``cut_after`` closes the
    stream after that many bytes of the next frame whose type is in ``cut``.
    """

    def __init__(self, inner, drop: Iterable[int] = (), cut: Iterable[int] = (), cut_after: int = 2):
        self.inner = inner
        self.drop = set(drop)
        self.cut = set(cut)
        self.cut_after = cut_after
        self.dropped: List[int] = []

    def write(self, data: bytes) -> None:
        pos = 0
        while pos < len(data):
            total = frame_length(data[pos:]) or len(data) - pos
            frame = data[pos:pos + total]
            pos += total
            msg_type = frame[1] & ~MORE_FRAGMENTS if len(frame) > 1 else None
            if msg_type in self.drop:
                self.dropped.append(msg_type)
                continue
            if msg_type in self.cut:
                self.inner.write(frame[:self.cut_after])
                self.inner.close()
                return
            self.inner.write(frame)

    def read_available(self, timeout: float = 0.0) -> bytes:
        return self.inner.read_available(timeout)

    @property
    def at_eof(self) -> bool:
        return self.inner.at_eof

    def close(self) -> None:
        self.inner.close()


# --- session -------------------------------------------------------------------

@dataclass(frozen=True)
class Enroll:
    key: bytes = field(repr=False)
    pin: Pin


@dataclass(frozen=True)
class Auth:
    key: bytes = field(repr=False)
    pin: Pin


@dataclass(frozen=True)
class Decrypt:
    pass


Action = Union[Enroll, Auth, Decrypt]


@dataclass(frozen=True)
class Event:
    """One transcript line.  ``kind`` is frame/device/host/plaintext/denied/error."""

    kind: str
    detail: Tuple = ()


@dataclass
class Transcript:
    events: List[Event] = field(default_factory=list)
    device: Optional[DeviceState] = None
    host: Optional[HostState] = None
    plaintext: Optional[bytes] = field(default=None, repr=False)

    def add(self, kind: str, *detail) -> None:
        self.events.append(Event(kind, tuple(detail)))

    def frames(self, direction: Optional[str] = None) -> List[MessageType]:
        return [MessageType(e.detail[1]) for e in self.events
                if e.kind == "frame" and (direction is None or e.detail[0] == direction)]

    def kinds(self) -> List[str]:
        return [e.kind for e in self.events]

    def gated(self) -> bool:
        """True iff every plaintext delivery follows an AUTH_OK received by the host with no AUTH_FAIL since."""
        granted = False
        for e in self.events:
            if e.kind == "frame" and e.detail[0] == "device->host":
                if e.detail[1] == MessageType.AUTH_OK and e.detail[3] == MessageType.AUTH_REQUEST:
                    granted = True
                elif e.detail[1] == MessageType.AUTH_FAIL:
                    granted = False
            elif e.kind == "plaintext" and not granted:
                return False
        return True


def serve_device(state: DeviceState, end, poll: float = 0.05) -> DeviceState:
    """Blocking device loop: answer requests on ``end`` until the peer closes."""
    decoder = MessageDecoder()
    while True:
        data = end.read_available(poll)
        if data:
            try:
                messages = decoder.feed(data)
            except FrameError:
                end.write(encode_message(MessageType.ERROR, bytes([ErrorCode.FRAMING])))
                continue
            for msg_type, payload in messages:
                state, (rtype, rpayload) = device_handle(state, msg_type, payload)
                end.write(encode_message(rtype, rpayload))
        elif end.at_eof:
            end.close()
            return state


def _pump_device(state: DeviceState, end, decoder: MessageDecoder, log: Transcript) -> DeviceState:
    data = end.read_available()
    try:
        messages = decoder.feed(data)
    except FrameError as exc:
        log.add("error", "device", type(exc).__name__)
        end.write(encode_message(MessageType.ERROR, bytes([ErrorCode.FRAMING])))
        return state
    for msg_type, payload in messages:
        log.add("frame", "host->device", int(msg_type), len(payload))
        state, (rtype, rpayload) = device_handle(state, msg_type, payload)
        log.add("device", state.indicator.value, len(state.enrolled))
        end.write(encode_message(rtype, rpayload))
    return state


def run_session(
    device: Optional[DeviceState],
    host: HostState,
    transport: Tuple[object, object],
    script: Sequence[Action],
    reply_timeout: float = 5.0,
) -> Transcript:
    """Drive enroll/auth/decrypt actions over a duplex byte stream.

    ``transport`` is ``(host_end, device_end)``.  With ``device`` given, the
    device is stepped in-process; with ``device=None`` a remote device is
    assumed to be serving ``device_end`` already and replies are awaited for
    up to ``reply_timeout`` seconds.
    """
    host_end, device_end = transport
    log = Transcript(device=device, host=host)
    host_decoder, device_decoder = MessageDecoder(), MessageDecoder()
    broken = False
    awaiting: List[MessageType] = []

    def receive_replies() -> None:
        nonlocal host, broken
        wait = 0.0 if device is not None else reply_timeout
        try:
            data = host_end.read_available(wait)
            messages = host_decoder.feed(data)
            if host_end.at_eof:
                host_decoder.finish()
        except FrameError as exc:
            log.add("error", "host", type(exc).__name__)
            broken = True
            return
        for msg_type, payload in messages:
            request = awaiting.pop(0) if awaiting else None
            log.add("frame", "device->host", int(msg_type), len(payload), request)
            host, _ = host_handle(host, AuthFrameReceived(msg_type, request))
            log.add("host", host.auth_granted)

    for action in script:
        if isinstance(action, (Enroll, Auth)):
            if broken:
                log.add("error", "host", "TransportClosed")
                continue
            mtype = MessageType.ENROLL if isinstance(action, Enroll) else MessageType.AUTH_REQUEST
            try:
                host_end.write(encode_message(mtype, credential_payload(action.key, action.pin)))
            except (BrokenPipeError, OSError):
                log.add("error", "host", "TransportClosed")
                broken = True
                continue
            awaiting.append(mtype)
            if device is not None:
                device = _pump_device(device, device_end, device_decoder, log)
                log.device = device
            receive_replies()
        elif isinstance(action, Decrypt):
            log.add("frame", "user->host", int(MessageType.DECRYPT_REQUEST), 0)
            host, status, plaintext = host_decrypt(host)
            log.add("frame", "host->user", int(MessageType.DECRYPT_RESULT), 1)
            if plaintext is not None:
                log.plaintext = plaintext
                log.add("plaintext", len(plaintext))
            elif status == DecryptStatus.DENIED:
                log.add("denied")
            else:
                log.add("error", "host", status.name)
        else:
            raise TypeError(f"unknown action {action!r}")
    log.host = host
    log.device = device
    return log
