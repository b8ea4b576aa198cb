"""GDSII stream reader/writer for a flat BOUNDARY-only subset.

Record framing is big-endian: 2-byte total length (header included), 1-byte
record type, 1-byte data format, then the payload. Only the records needed for
flat polygon libraries are accepted; anything else aborts with a named error.

The writer emits records in one canonical order with zeroed timestamps, so a
stream it produced survives parse -> write byte for byte.
"""

from __future__ import annotations

import math
import struct
from fractions import Fraction

from .geometry import Cell, Layout, Polygon

# record type -> (name, expected data format byte)
_SUBSET = {
    0x00: ("HEADER", 0x02),
    0x01: ("BGNLIB", 0x02),
    0x02: ("LIBNAME", 0x06),
    0x03: ("UNITS", 0x05),
    0x04: ("ENDLIB", 0x00),
    0x05: ("BGNSTR", 0x02),
    0x06: ("STRNAME", 0x06),
    0x07: ("ENDSTR", 0x00),
    0x08: ("BOUNDARY", 0x00),
    0x0D: ("LAYER", 0x02),
    0x0E: ("DATATYPE", 0x02),
    0x10: ("XY", 0x03),
    0x11: ("ENDEL", 0x00),
}

# record types defined by the format but outside our subset, for error messages
_KNOWN_OTHER = {
    0x09: "PATH", 0x0A: "SREF", 0x0B: "AREF", 0x0C: "TEXT", 0x0F: "WIDTH",
    0x12: "SNAME", 0x13: "COLROW", 0x15: "NODE", 0x16: "TEXTTYPE",
    0x17: "PRESENTATION", 0x19: "STRING", 0x1A: "STRANS", 0x1B: "MAG",
    0x1C: "ANGLE", 0x1F: "REFLIBS", 0x20: "FONTS", 0x21: "PATHTYPE",
    0x22: "GENERATIONS", 0x23: "ATTRTABLE", 0x26: "ELFLAGS", 0x27: "ELKEY",
    0x2A: "NODETYPE", 0x2B: "PROPATTR", 0x2C: "PROPVALUE", 0x2D: "BOX",
    0x2E: "BOXTYPE", 0x2F: "PLEX", 0x32: "TAPENUM", 0x33: "TAPECODE",
    0x36: "FORMAT", 0x37: "MASK", 0x38: "ENDMASKS",
}

_HEADER_VERSION = 600
_I32_MIN, _I32_MAX = -(1 << 31), (1 << 31) - 1


class GdsError(ValueError):
    pass


class MalformedRecord(GdsError):
    def __init__(self, offset: int, detail: str):
        super().__init__(f"malformed record at byte {offset}: {detail}")
        self.offset = offset


class UnsupportedRecord(GdsError):
    def __init__(self, tag: str):
        super().__init__(f"unsupported record {tag}")
        self.tag = tag


class TruncatedStream(GdsError):
    pass


class CoordinateOverflow(GdsError):
    pass


def encode_real(value: float) -> bytes:
    """Encode a float as the 8-byte excess-64 base-16 GDSII real."""
    if value == 0.0:
        return b"\x00" * 8
    sign = 0x80 if value < 0 else 0x00
    frac = Fraction(abs(value))
    # abs(value) = m * 2^b with m in [0.5, 1); the smallest base-16 exponent
    # covering the value is ceil(b / 4), which normalizes the mantissa
    _, b2 = math.frexp(abs(value))
    e16 = -((-b2) // 4)
    mant = (frac * (1 << 56)) / Fraction(16) ** e16
    m = int(mant)  # mant is integral for dyadic inputs at this precision
    if m >= 1 << 56:  # guard against rounding at the [1/16, 1) edge
        m >>= 4
        e16 += 1
    exp = e16 + 64
    if not 0 <= exp <= 127:
        raise GdsError(f"real exponent out of range: {value!r}")
    return bytes([sign | exp]) + m.to_bytes(7, "big")


def decode_real(raw: bytes) -> float:
    if len(raw) != 8:
        raise GdsError("real field must be 8 bytes")
    if raw == b"\x00" * 8:
        return 0.0
    sign = -1.0 if raw[0] & 0x80 else 1.0
    exp = (raw[0] & 0x7F) - 64
    mant = int.from_bytes(raw[1:8], "big")
    return sign * math.ldexp(mant, 4 * exp - 56)


def _pad_name(text: str) -> bytes:
    raw = text.encode("ascii")
    return raw + b"\x00" if len(raw) % 2 else raw


def _record(rtype: int, fmt: int, payload: bytes = b"") -> bytes:
    total = 4 + len(payload)
    if total > 0xFFFF:
        raise GdsError("record payload too large")
    return struct.pack(">HBB", total, rtype, fmt) + payload


def _iter_records(data: bytes):
    """Yield (offset, name, payload) for each record, validating framing."""
    pos = 0
    n = len(data)
    while pos < n:
        if n - pos < 4:
            raise TruncatedStream(f"dangling {n - pos} bytes at {pos}")
        total, rtype, fmt = struct.unpack_from(">HBB", data, pos)
        if total < 4 or total % 2:
            raise MalformedRecord(pos, f"bad record length {total}")
        if pos + total > n:
            raise TruncatedStream(f"record at {pos} runs past end of stream")
        if rtype in _SUBSET:
            name, want_fmt = _SUBSET[rtype]
            if fmt != want_fmt:
                raise MalformedRecord(pos, f"{name} has data format {fmt:#04x}")
        elif rtype in _KNOWN_OTHER:
            raise UnsupportedRecord(_KNOWN_OTHER[rtype])
        else:
            raise MalformedRecord(pos, f"unknown record type {rtype:#04x}")
        yield pos, name, data[pos + 4:pos + total]
        pos += total


def parse_gds(data: bytes) -> Layout:
    """Parse a subset-conformant stream into a Layout.

    The structural grammar is fixed: HEADER BGNLIB LIBNAME UNITS
    (BGNSTR STRNAME element* ENDSTR)* ENDLIB, elements being
    BOUNDARY LAYER DATATYPE XY ENDEL.
    """
    records = _iter_records(data)

    def expect(name):
        try:
            off, got, payload = next(records)
        except StopIteration:
            raise TruncatedStream(f"stream ended while expecting {name}") from None
        if got != name:
            raise MalformedRecord(off, f"expected {name}, found {got}")
        return off, payload

    off, payload = expect("HEADER")
    if len(payload) != 2:
        raise MalformedRecord(off, "HEADER payload must be 2 bytes")
    expect("BGNLIB")
    _, payload = expect("LIBNAME")
    library_name = payload.rstrip(b"\x00").decode("ascii")
    off, payload = expect("UNITS")
    if len(payload) != 16:
        raise MalformedRecord(off, "UNITS payload must be 16 bytes")
    user_units = decode_real(payload[:8])
    meters = decode_real(payload[8:])

    cells = []
    while True:
        try:
            off, name, payload = next(records)
        except StopIteration:
            raise TruncatedStream("stream ended before ENDLIB") from None
        if name == "ENDLIB":
            break
        if name != "BGNSTR":
            raise MalformedRecord(off, f"expected BGNSTR or ENDLIB, found {name}")
        _, payload = expect("STRNAME")
        cell_name = payload.rstrip(b"\x00").decode("ascii")
        polygons = []
        while True:
            try:
                off, name, payload = next(records)
            except StopIteration:
                raise TruncatedStream("stream ended inside a structure") from None
            if name == "ENDSTR":
                break
            if name != "BOUNDARY":
                raise MalformedRecord(off, f"expected BOUNDARY or ENDSTR, found {name}")
            off_l, payload = expect("LAYER")
            (layer_id,) = struct.unpack(">h", payload)
            _, payload = expect("DATATYPE")
            (datatype,) = struct.unpack(">h", payload)
            off_xy, payload = expect("XY")
            if len(payload) % 8:
                raise MalformedRecord(off_xy, "XY payload must be 8-byte pairs")
            flat = struct.unpack(f">{len(payload) // 4}i", payload)
            verts = tuple(zip(flat[0::2], flat[1::2]))
            expect("ENDEL")
            try:
                polygons.append(Polygon(layer_id, datatype, verts))
            except ValueError as e:
                raise MalformedRecord(off_xy, str(e)) from None
        cells.append(Cell(cell_name, polygons))

    for off, name, _ in records:
        raise MalformedRecord(off, f"{name} after ENDLIB")
    return Layout(library_name, user_units, meters, cells)


def write_gds(layout: Layout) -> bytes:
    """Serialize a Layout in canonical record order."""
    out = [
        _record(0x00, 0x02, struct.pack(">h", _HEADER_VERSION)),
        _record(0x01, 0x02, struct.pack(">12h", *([0] * 12))),
        _record(0x02, 0x06, _pad_name(layout.library_name)),
        _record(0x03, 0x05,
                encode_real(layout.user_units_per_db_unit)
                + encode_real(layout.meters_per_db_unit)),
    ]
    for cell in layout.cells:
        out.append(_record(0x05, 0x02, struct.pack(">12h", *([0] * 12))))
        out.append(_record(0x06, 0x06, _pad_name(cell.name)))
        for poly in cell.polygons:
            flat = []
            for x, y in poly.vertices:
                if not (_I32_MIN <= x <= _I32_MAX and _I32_MIN <= y <= _I32_MAX):
                    raise CoordinateOverflow(f"vertex ({x}, {y}) exceeds 32-bit range")
                flat += [x, y]
            out.append(_record(0x08, 0x00))
            out.append(_record(0x0D, 0x02, struct.pack(">h", poly.layer_id)))
            out.append(_record(0x0E, 0x02, struct.pack(">h", poly.datatype)))
            out.append(_record(0x10, 0x03, struct.pack(f">{len(flat)}i", *flat)))
            out.append(_record(0x11, 0x00))
        out.append(_record(0x07, 0x00))
    out.append(_record(0x04, 0x00))
    return b"".join(out)
