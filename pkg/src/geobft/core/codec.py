"""Canonical byte encoding for protocol messages.

Every value is rendered as a tag byte followed by a fixed-width or
length-prefixed body, so the encoding is deterministic and injective;
it is the byte form that gets hashed, signed and written to trace logs.
Registered dataclasses encode as a type code plus their fields in
declaration order.
"""
from __future__ import annotations

import dataclasses
import struct

_TAG_NONE = 0
_TAG_FALSE = 1
_TAG_TRUE = 2
_TAG_INT = 3
_TAG_BYTES = 4
_TAG_STR = 5
_TAG_SEQ = 6
_TAG_MSG = 7

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_HDR = struct.Struct(">BH")  # message tag + type code

_type_code: dict[type, int] = {}
_code_type: dict[int, type] = {}
_type_fields: dict[type, tuple[str, ...]] = {}


class CodecError(ValueError):
    pass


def register_message(code: int):
    """Class decorator assigning a stable wire code to a frozen dataclass."""

    def deco(cls):
        if code in _code_type:
            raise CodecError(f"duplicate message code {code}")
        _type_code[cls] = code
        _code_type[code] = cls
        _type_fields[cls] = tuple(f.name for f in dataclasses.fields(cls))
        return cls

    return deco


def _encode_into(value, out: bytearray) -> None:
    if value is None:
        out.append(_TAG_NONE)
    elif value is True:
        out.append(_TAG_TRUE)
    elif value is False:
        out.append(_TAG_FALSE)
    elif isinstance(value, int):
        if not 0 <= value < 1 << 64:
            raise CodecError(f"integer out of u64 range: {value}")
        out.append(_TAG_INT)
        out += _U64.pack(value)
    elif isinstance(value, bytes):
        out.append(_TAG_BYTES)
        out += _U32.pack(len(value))
        out += value
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(_TAG_STR)
        out += _U32.pack(len(raw))
        out += raw
    elif isinstance(value, (tuple, list)):
        out.append(_TAG_SEQ)
        out += _U32.pack(len(value))
        for item in value:
            _encode_into(item, out)
    else:
        code = _type_code.get(type(value))
        if code is None:
            raise CodecError(f"unregistered type: {type(value).__name__}")
        out += _HDR.pack(_TAG_MSG, code)
        for name in _type_fields[type(value)]:
            _encode_into(getattr(value, name), out)


def canonical_encode(value) -> bytes:
    out = bytearray()
    _encode_into(value, out)
    return bytes(out)


def _decode_from(buf: bytes, pos: int):
    tag = buf[pos]
    pos += 1
    if tag == _TAG_NONE:
        return None, pos
    if tag == _TAG_TRUE:
        return True, pos
    if tag == _TAG_FALSE:
        return False, pos
    if tag == _TAG_INT:
        return _U64.unpack_from(buf, pos)[0], pos + 8
    if tag == _TAG_BYTES:
        n = _U32.unpack_from(buf, pos)[0]
        pos += 4
        return buf[pos:pos + n], pos + n
    if tag == _TAG_STR:
        n = _U32.unpack_from(buf, pos)[0]
        pos += 4
        return buf[pos:pos + n].decode("utf-8"), pos + n
    if tag == _TAG_SEQ:
        n = _U32.unpack_from(buf, pos)[0]
        pos += 4
        items = []
        for _ in range(n):
            item, pos = _decode_from(buf, pos)
            items.append(item)
        return tuple(items), pos
    if tag == _TAG_MSG:
        code = struct.unpack_from(">H", buf, pos)[0]
        pos += 2
        cls = _code_type.get(code)
        if cls is None:
            raise CodecError(f"unknown message code {code}")
        values = []
        for _ in _type_fields[cls]:
            value, pos = _decode_from(buf, pos)
            values.append(value)
        return cls(*values), pos
    raise CodecError(f"bad tag {tag} at offset {pos - 1}")


def canonical_decode(buf: bytes):
    value, pos = _decode_from(buf, 0)
    if pos != len(buf):
        raise CodecError(f"{len(buf) - pos} trailing bytes")
    return value
