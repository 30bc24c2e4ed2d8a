"""Shared generators for wire-format tests."""

import numpy as np

from vlp.mesh.wire import (KIND_REQUEST, KIND_RESPONSE, AckBody, ControlBody, ErrorBody, IdRecognitionRequest,
                           IdRecognitionResponse, ImageBody, LampObservation, LedInfoRequest, LedInfoResponse,
                           PositionBody, ServiceCall, TimingBody, TopicMessage)

ALPHABET = list("abcdefghijklmnopqrstuvwxyz/_-0123456789") + ["é", "光", "→"]


def _name(rng, lo=0, hi=24):
    return "".join(rng.choice(ALPHABET, int(rng.integers(lo, hi + 1))))


def _u(rng, bits):
    return int(rng.integers(0, 2**bits - 1, dtype=np.uint64, endpoint=True))


def _f(rng):
    return float(rng.normal(0, 10.0 ** rng.integers(-3, 6)))


def _image(rng):
    w, h = int(rng.integers(0, 12)), int(rng.integers(0, 12))
    return ImageBody(w, h, 0, rng.integers(0, 256, w * h, dtype=np.uint8).tobytes())


def random_body(rng):
    k = int(rng.integers(1, 11))
    if k == 1:
        return _image(rng)
    if k == 2:
        return PositionBody(_f(rng), _f(rng), _f(rng), _f(rng), (_name(rng, 0, 8), _name(rng, 0, 8)),
                            _u(rng, 64), _u(rng, 32))
    if k == 3:
        return IdRecognitionRequest(_u(rng, 16), _u(rng, 16), _u(rng, 64), _image(rng))
    if k == 4:
        return IdRecognitionResponse(_name(rng, 0, 8))
    if k == 5:
        lamps = tuple(LampObservation(_name(rng, 1, 8), _f(rng), _f(rng)) for _ in range(int(rng.integers(0, 5))))
        return LedInfoRequest(_u(rng, 32), _u(rng, 64), _u(rng, 16), _u(rng, 16), lamps)
    if k == 6:
        return LedInfoResponse(int(rng.integers(0, 2)))
    if k == 7:
        return ErrorBody(int(rng.integers(0, 256)), _name(rng, 0, 40))
    if k == 8:
        return TimingBody(_u(rng, 32), _u(rng, 64), _u(rng, 64))
    if k == 9:
        return ControlBody(_name(rng), _u(rng, 16))
    return AckBody(_u(rng, 32))


def random_message(rng):
    body = random_body(rng)
    if rng.random() < 0.5:
        return TopicMessage(_name(rng), _u(rng, 32), _u(rng, 64), body)
    kind = KIND_REQUEST if rng.random() < 0.5 else KIND_RESPONSE
    return ServiceCall(kind, _name(rng), _u(rng, 32), _u(rng, 64), body)


GOLDEN_IMAGE_MESSAGE = TopicMessage("camera/image", 7, 0x0102030405060708,
                                    ImageBody(2, 2, 0, b"\x00\x10\x20\x30"))
GOLDEN_IMAGE_BYTES = bytes.fromhex(
    "56 4c 43 50"                                   # magic
    "01 01 18 00"                                   # version, kind topic, header_len 24
    + b"camera/image".hex()
    + "07 00 00 00"                                 # seq
    "08 07 06 05 04 03 02 01"                       # timestamp
    "0a 00 00 00"                                   # body_len 10
    "01 02 00 02 00 00"                             # image body, width 2, height 2, mono8
    "00 10 20 30"
)
