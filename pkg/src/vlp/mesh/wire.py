"""Bit-exact framing for topic and service messages.

Frame layout (all integers little-endian)::

    "VLCP" | version u8 | kind u8 | header_len u16 | header | body_len u32 | body
    header = name (UTF-8) | seq/request_id u32 | timestamp u64
    body   = body_type u8 | body fields
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import ClassVar, Union

import numpy as np

from vlp.errors import WireFormatError

MAGIC = b"VLCP"
VERSION = 1
KIND_TOPIC, KIND_REQUEST, KIND_RESPONSE = 1, 2, 3
ENC_MONO8 = 0

_PREFIX = struct.Struct("<4sBBH")
_HDR_TAIL = struct.Struct("<IQ")
_BODY_LEN = struct.Struct("<I")
MAX_BODY = 64 * 1024 * 1024


def _pack_str8(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 255:
        raise WireFormatError("string longer than 255 bytes")
    return bytes([len(b)]) + b


def _unpack_str8(buf: memoryview, off: int) -> tuple[str, int]:
    if off >= len(buf):
        raise WireFormatError("truncated string")
    n = buf[off]
    end = off + 1 + n
    if end > len(buf):
        raise WireFormatError("truncated string")
    try:
        return bytes(buf[off + 1 : end]).decode("utf-8"), end
    except UnicodeDecodeError as e:
        raise WireFormatError("invalid UTF-8") from e


def _pack_str16(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise WireFormatError("string too long")
    return struct.pack("<H", len(b)) + b


def _unpack_str16(buf: memoryview, off: int) -> tuple[str, int]:
    (n,) = _unpack(buf, off, "<H")
    end = off + 2 + n
    if end > len(buf):
        raise WireFormatError("truncated string")
    try:
        return bytes(buf[off + 2 : end]).decode("utf-8"), end
    except UnicodeDecodeError as e:
        raise WireFormatError("invalid UTF-8") from e


def _unpack(buf, off, fmt):
    size = struct.calcsize(fmt)
    if off + size > len(buf):
        raise WireFormatError("truncated field")
    return struct.unpack_from(fmt, buf, off)


# -- bodies -------------------------------------------------------------------

@dataclass(frozen=True)
class ImageBody:
    TYPE: ClassVar[int] = 1
    width: int
    height: int
    encoding: int
    pixels: bytes

    def __post_init__(self):
        if not (0 <= self.width <= 0xFFFF and 0 <= self.height <= 0xFFFF):
            raise WireFormatError("image dimensions exceed u16")
        if self.encoding == ENC_MONO8 and len(self.pixels) != self.width * self.height:
            raise WireFormatError("mono8 payload length does not match width*height")

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "ImageBody":
        a = np.ascontiguousarray(pixels, dtype=np.uint8)
        return cls(a.shape[1], a.shape[0], ENC_MONO8, a.tobytes())

    @classmethod
    def from_frame(cls, frame) -> "ImageBody":
        return cls.from_array(frame.pixels)

    def to_array(self) -> np.ndarray:
        return np.frombuffer(self.pixels, dtype=np.uint8).reshape(self.height, self.width)

    def pack(self) -> bytes:
        return struct.pack("<HHB", self.width, self.height, self.encoding) + self.pixels

    @classmethod
    def unpack(cls, buf: memoryview, off: int = 0) -> "ImageBody":
        w, h, enc = _unpack(buf, off, "<HHB")
        return cls(w, h, enc, bytes(buf[off + 5 :]))


@dataclass(frozen=True)
class PositionBody:
    TYPE: ClassVar[int] = 2
    x_w: float
    y_w: float
    z_w: float
    theta: float
    pair: tuple[str, str]
    solve_timestamp_ns: int
    source_frame_seq: int

    def pack(self) -> bytes:
        return (struct.pack("<dddd", self.x_w, self.y_w, self.z_w, self.theta)
                + _pack_str8(self.pair[0]) + _pack_str8(self.pair[1])
                + struct.pack("<QI", self.solve_timestamp_ns, self.source_frame_seq))

    @classmethod
    def unpack(cls, buf, off=0):
        x, y, z, th = _unpack(buf, off, "<dddd")
        a, off = _unpack_str8(buf, off + 32)
        b, off = _unpack_str8(buf, off)
        ts, seq = _unpack(buf, off, "<QI")
        _expect_end(buf, off + 12)
        return cls(x, y, z, th, (a, b), ts, seq)


@dataclass(frozen=True)
class IdRecognitionRequest:
    TYPE: ClassVar[int] = 3
    row0: int
    col0: int
    frame_timestamp_ns: int
    roi: ImageBody

    def pack(self) -> bytes:
        return struct.pack("<HHQ", self.row0, self.col0, self.frame_timestamp_ns) + self.roi.pack()

    @classmethod
    def unpack(cls, buf, off=0):
        r, c, ts = _unpack(buf, off, "<HHQ")
        return cls(r, c, ts, ImageBody.unpack(buf, off + 12))


@dataclass(frozen=True)
class IdRecognitionResponse:
    TYPE: ClassVar[int] = 4
    led_id: str  # empty string: no match

    def pack(self) -> bytes:
        return _pack_str8(self.led_id)

    @classmethod
    def unpack(cls, buf, off=0):
        s, end = _unpack_str8(buf, off)
        _expect_end(buf, end)
        return cls(s)


@dataclass(frozen=True)
class LampObservation:
    led_id: str
    img_x: float
    img_y: float


@dataclass(frozen=True)
class LedInfoRequest:
    TYPE: ClassVar[int] = 5
    frame_seq: int
    frame_timestamp_ns: int
    width: int
    height: int
    lamps: tuple[LampObservation, ...]

    def pack(self) -> bytes:
        out = [struct.pack("<IQHHB", self.frame_seq, self.frame_timestamp_ns, self.width, self.height,
                           len(self.lamps))]
        for lamp in self.lamps:
            out.append(_pack_str8(lamp.led_id) + struct.pack("<dd", lamp.img_x, lamp.img_y))
        return b"".join(out)

    @classmethod
    def unpack(cls, buf, off=0):
        seq, ts, w, h, n = _unpack(buf, off, "<IQHHB")
        off += 17
        lamps = []
        for _ in range(n):
            led, off = _unpack_str8(buf, off)
            x, y = _unpack(buf, off, "<dd")
            off += 16
            lamps.append(LampObservation(led, x, y))
        _expect_end(buf, off)
        return cls(seq, ts, w, h, tuple(lamps))


@dataclass(frozen=True)
class LedInfoResponse:
    TYPE: ClassVar[int] = 6
    ack: int  # 1 solved, 0 rejected

    def pack(self) -> bytes:
        return struct.pack("<B", self.ack)

    @classmethod
    def unpack(cls, buf, off=0):
        (a,) = _unpack(buf, off, "<B")
        _expect_end(buf, off + 1)
        return cls(a)


@dataclass(frozen=True)
class ErrorBody:
    TYPE: ClassVar[int] = 7
    code: int
    message: str

    UNKNOWN_SERVICE: ClassVar[int] = 1
    HANDLER_FAILED: ClassVar[int] = 2
    MALFORMED: ClassVar[int] = 3

    def pack(self) -> bytes:
        return struct.pack("<B", self.code) + _pack_str16(self.message)

    @classmethod
    def unpack(cls, buf, off=0):
        (code,) = _unpack(buf, off, "<B")
        msg, end = _unpack_str16(buf, off + 1)
        _expect_end(buf, end)
        return cls(code, msg)


@dataclass(frozen=True)
class TimingBody:
    """Camera-side timestamps for one published frame."""

    TYPE: ClassVar[int] = 8
    frame_seq: int
    capture_ns: int
    publish_ns: int

    def pack(self) -> bytes:
        return struct.pack("<IQQ", self.frame_seq, self.capture_ns, self.publish_ns)

    @classmethod
    def unpack(cls, buf, off=0):
        v = _unpack(buf, off, "<IQQ")
        _expect_end(buf, off + 20)
        return cls(*v)


@dataclass(frozen=True)
class ControlBody:
    """Registration of a subscription or a service with a hub."""

    TYPE: ClassVar[int] = 9
    name: str
    depth: int = 1

    def pack(self) -> bytes:
        return _pack_str16(self.name) + struct.pack("<H", self.depth)

    @classmethod
    def unpack(cls, buf, off=0):
        name, off = _unpack_str16(buf, off)
        (depth,) = _unpack(buf, off, "<H")
        _expect_end(buf, off + 2)
        return cls(name, depth)


@dataclass(frozen=True)
class AckBody:
    TYPE: ClassVar[int] = 10
    seq: int

    def pack(self) -> bytes:
        return struct.pack("<I", self.seq)

    @classmethod
    def unpack(cls, buf, off=0):
        (s,) = _unpack(buf, off, "<I")
        _expect_end(buf, off + 4)
        return cls(s)


Body = Union[ImageBody, PositionBody, IdRecognitionRequest, IdRecognitionResponse, LedInfoRequest,
             LedInfoResponse, ErrorBody, TimingBody, ControlBody, AckBody]
BODY_TYPES = {cls.TYPE: cls for cls in (ImageBody, PositionBody, IdRecognitionRequest, IdRecognitionResponse,
                                         LedInfoRequest, LedInfoResponse, ErrorBody, TimingBody, ControlBody,
                                         AckBody)}


def _expect_end(buf, off):
    if off != len(buf):
        raise WireFormatError(f"{len(buf) - off} trailing bytes in body")


def pack_body(body: Body) -> bytes:
    return bytes([body.TYPE]) + body.pack()


def unpack_body(data) -> Body:
    buf = memoryview(data)
    if len(buf) < 1:
        raise WireFormatError("empty body")
    cls = BODY_TYPES.get(buf[0])
    if cls is None:
        raise WireFormatError(f"unknown body type {buf[0]}")
    try:
        return cls.unpack(buf[1:], 0)
    except struct.error as e:
        raise WireFormatError(str(e)) from e


# -- envelopes ----------------------------------------------------------------

@dataclass(frozen=True)
class TopicMessage:
    KIND: ClassVar[int] = KIND_TOPIC
    topic: str
    seq: int
    timestamp_ns: int
    payload: Body

    @property
    def name(self) -> str:
        return self.topic


@dataclass(frozen=True)
class ServiceCall:
    """A request (``kind == 2``) or response (``kind == 3``) on a named service."""

    kind: int
    service: str
    request_id: int
    timestamp_ns: int
    body: Body

    @property
    def name(self) -> str:
        return self.service

    @property
    def KIND(self) -> int:
        return self.kind


Message = Union[TopicMessage, ServiceCall]


def encode(msg: Message) -> bytes:
    if isinstance(msg, TopicMessage):
        kind, name, ident, ts, body = KIND_TOPIC, msg.topic, msg.seq, msg.timestamp_ns, msg.payload
    elif isinstance(msg, ServiceCall):
        if msg.kind not in (KIND_REQUEST, KIND_RESPONSE):
            raise WireFormatError(f"bad service kind {msg.kind}")
        kind, name, ident, ts, body = msg.kind, msg.service, msg.request_id, msg.timestamp_ns, msg.body
    else:
        raise WireFormatError(f"cannot encode {type(msg).__name__}")
    if not (0 <= ident <= 0xFFFFFFFF and 0 <= ts <= 0xFFFFFFFFFFFFFFFF):
        raise WireFormatError("seq/timestamp out of range")
    header = name.encode("utf-8") + _HDR_TAIL.pack(ident, ts)
    if len(header) > 0xFFFF:
        raise WireFormatError("header too long")
    payload = pack_body(body)
    return b"".join((_PREFIX.pack(MAGIC, VERSION, kind, len(header)), header,
                     _BODY_LEN.pack(len(payload)), payload))


def decode(data: bytes) -> Message:
    buf = memoryview(data)
    if len(buf) < _PREFIX.size:
        raise WireFormatError("truncated prefix")
    magic, version, kind, hlen = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise WireFormatError("bad magic")
    if version != VERSION:
        raise WireFormatError(f"unsupported version {version}")
    if kind not in (KIND_TOPIC, KIND_REQUEST, KIND_RESPONSE):
        raise WireFormatError(f"unknown kind {kind}")
    off = _PREFIX.size
    if hlen < _HDR_TAIL.size or off + hlen + 4 > len(buf):
        raise WireFormatError("truncated header")
    try:
        name = bytes(buf[off : off + hlen - _HDR_TAIL.size]).decode("utf-8")
    except UnicodeDecodeError as e:
        raise WireFormatError("invalid UTF-8 name") from e
    ident, ts = _HDR_TAIL.unpack_from(buf, off + hlen - _HDR_TAIL.size)
    off += hlen
    (blen,) = _BODY_LEN.unpack_from(buf, off)
    off += 4
    if off + blen != len(buf):
        raise WireFormatError("body length mismatch")
    body = unpack_body(buf[off : off + blen])
    if kind == KIND_TOPIC:
        return TopicMessage(name, ident, ts, body)
    return ServiceCall(kind, name, ident, ts, body)


def read_frame(read_exact) -> bytes:
    """Read one complete frame using ``read_exact(n) -> bytes``."""
    prefix = read_exact(_PREFIX.size)
    magic, version, kind, hlen = _PREFIX.unpack(prefix)
    if magic != MAGIC:
        raise WireFormatError("bad magic on stream")
    rest = read_exact(hlen + 4)
    (blen,) = _BODY_LEN.unpack_from(rest, hlen)
    if blen > MAX_BODY:
        raise WireFormatError("body exceeds limit")
    return prefix + rest + read_exact(blen)
