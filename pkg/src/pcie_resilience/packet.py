"""Bit-exact packet formats and integrity codes.

Wire layouts (all multi-byte fields big-endian)::

    TLP     kind(1) requester_id(2) tag(1) address(8) length_dw(2) payload [ecrc(4)]
    frame   seq_num(2) tlp_bytes lcrc(4)
    DLLP    type(1) a(1) b(2) crc16(2)

For Ack/Nak DLLPs ``a`` is zero and ``b`` holds the 12-bit sequence number.
For FcUpdate ``a`` is the header credit limit and ``b`` the data credit limit,
both cumulative and modulo the field width.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field, replace

HEADER_LEN = 14
MAX_LENGTH_DW = 256
SEQ_MOD = 4096

_HEADER = struct.Struct(">BHBQH")


class Malformed(ValueError):
    """Raised by :func:`parse_tlp` for bytes that do not form a valid TLP."""


class TlpKind(enum.IntEnum):
    MemWr = 0x01
    MemRd = 0x02
    Cpl = 0x03
    CplD = 0x04
    Msg = 0x05


DATA_KINDS = (TlpKind.MemWr, TlpKind.CplD)


# CRC ---------------------------------------------------------------------------------------------

CRC16_POLY = 0x100B


def _crc16_table() -> list[int]:
    table = []
    for byte in range(256):
        reg = byte << 8
        for _ in range(8):
            reg = ((reg << 1) ^ CRC16_POLY) if reg & 0x8000 else reg << 1
        table.append(reg & 0xFFFF)
    return table


_CRC16_TABLE = _crc16_table()


def crc32(data: bytes) -> int:
    """CRC-32 (poly 0x04C11DB7, init/xorout 0xFFFFFFFF, reflected in and out).

    This is exactly the parameter set zlib implements.
    """
    return zlib.crc32(data)


def crc16(data: bytes) -> int:
    """CRC-16 (poly 0x100B, init/xorout 0xFFFF, no reflection)."""
    reg = 0xFFFF
    table = _CRC16_TABLE
    for b in data:
        reg = ((reg << 8) & 0xFFFF) ^ table[((reg >> 8) ^ b) & 0xFF]
    return reg ^ 0xFFFF


# TLP ---------------------------------------------------------------------------------------------


@dataclass(frozen=True)
class Tlp:
    kind: TlpKind
    requester_id: int = 0
    tag: int = 0
    address: int = 0
    length_dw: int = 0
    payload: bytes = b""
    ecrc_present: bool = False
    ecrc: int = 0

    def __post_init__(self):
        if not 0 <= self.requester_id <= 0xFFFF:
            raise ValueError(f"requester_id out of range: {self.requester_id}")
        if not 0 <= self.tag <= 0xFF:
            raise ValueError(f"tag out of range: {self.tag}")
        if not 0 <= self.address < 1 << 64 or self.address % 4:
            raise ValueError(f"address must be a 4-byte aligned u64: {self.address:#x}")
        if not 0 <= self.length_dw <= MAX_LENGTH_DW:
            raise ValueError(f"length_dw out of range: {self.length_dw}")
        expected = 4 * self.length_dw if self.kind in DATA_KINDS else 0
        if len(self.payload) != expected:
            raise ValueError(
                f"{self.kind.name} with length_dw={self.length_dw} needs "
                f"{expected} payload bytes, got {len(self.payload)}"
            )
        if not self.ecrc_present and self.ecrc:
            raise ValueError("ecrc set without ecrc_present")

    def body(self) -> bytes:
        """Serialized header and payload, without the ECRC trailer."""
        return (
            _HEADER.pack(self.kind, self.requester_id, self.tag, self.address, self.length_dw)
            + self.payload
        )

    def ecrc_ok(self) -> bool:
        return not self.ecrc_present or self.ecrc == crc32(self.body())

    @property
    def credit_cost(self) -> tuple[int, int]:
        """(header credits, data credits in DW) consumed by this TLP."""
        return 1, len(self.payload) // 4


def make_tlp(kind: TlpKind, *, with_ecrc: bool = False, **fields) -> Tlp:
    """Build a Tlp, filling ``length_dw`` from the payload and computing the ECRC."""
    kind = TlpKind(kind)
    payload = fields.get("payload", b"")
    if "length_dw" not in fields:
        fields["length_dw"] = len(payload) // 4
    tlp = Tlp(kind, **fields)
    if with_ecrc:
        tlp = replace(tlp, ecrc_present=True, ecrc=crc32(tlp.body()))
    return tlp


def serialize_tlp(tlp: Tlp) -> bytes:
    out = tlp.body()
    if tlp.ecrc_present:
        out += tlp.ecrc.to_bytes(4, "big")
    return out


def parse_tlp(data: bytes) -> Tlp:
    if len(data) < HEADER_LEN:
        raise Malformed(f"truncated header ({len(data)} bytes)")
    code, requester_id, tag, address, length_dw = _HEADER.unpack_from(data)
    try:
        kind = TlpKind(code)
    except ValueError:
        raise Malformed(f"unknown kind code {code:#04x}") from None
    if address % 4:
        raise Malformed(f"unaligned address {address:#x}")
    if length_dw > MAX_LENGTH_DW:
        raise Malformed(f"length_dw {length_dw} exceeds {MAX_LENGTH_DW}")
    payload_len = 4 * length_dw if kind in DATA_KINDS else 0
    rest = len(data) - HEADER_LEN - payload_len
    if rest not in (0, 4):
        raise Malformed(
            f"{kind.name} length_dw={length_dw} inconsistent with {len(data)} bytes"
        )
    payload = bytes(data[HEADER_LEN:HEADER_LEN + payload_len])
    ecrc_present = rest == 4
    ecrc = int.from_bytes(data[-4:], "big") if ecrc_present else 0
    return Tlp(kind, requester_id, tag, address, length_dw, payload, ecrc_present, ecrc)


# Data link frames --------------------------------------------------------------------------------


def _lcrc(seq_num: int, tlp_bytes: bytes) -> int:
    return crc32(seq_num.to_bytes(2, "big") + tlp_bytes)


@dataclass(frozen=True)
class DlFrame:
    seq_num: int
    tlp_bytes: bytes
    lcrc: int

    def lcrc_ok(self) -> bool:
        return self.lcrc == _lcrc(self.seq_num, self.tlp_bytes)

    def wire(self) -> bytes:
        return self.seq_num.to_bytes(2, "big") + self.tlp_bytes + self.lcrc.to_bytes(4, "big")


def frame_bytes(seq_num: int, tlp_bytes: bytes) -> DlFrame:
    if not 0 <= seq_num < SEQ_MOD:
        raise ValueError(f"seq_num out of range: {seq_num}")
    return DlFrame(seq_num, bytes(tlp_bytes), _lcrc(seq_num, tlp_bytes))


def frame_tlp(seq_num: int, tlp: Tlp) -> DlFrame:
    return frame_bytes(seq_num, serialize_tlp(tlp))


# DLLPs -------------------------------------------------------------------------------------------


class DllpKind(enum.IntEnum):
    Ack = 0x00
    Nak = 0x10
    FcUpdate = 0x40


@dataclass(frozen=True)
class Dllp:
    kind: DllpKind
    seq_num: int = 0
    hdr_credits: int = 0
    data_credits_dw: int = 0
    crc16: int = field(default=0)

    def body(self) -> bytes:
        if self.kind is DllpKind.FcUpdate:
            return struct.pack(">BBH", self.kind, self.hdr_credits, self.data_credits_dw)
        return struct.pack(">BBH", self.kind, 0, self.seq_num)

    def crc_ok(self) -> bool:
        return self.crc16 == crc16(self.body())

    def wire(self) -> bytes:
        return self.body() + self.crc16.to_bytes(2, "big")


def make_dllp(kind: DllpKind, seq_num: int = 0, hdr_credits: int = 0, data_credits_dw: int = 0) -> Dllp:
    if not 0 <= seq_num < SEQ_MOD:
        raise ValueError(f"seq_num out of range: {seq_num}")
    d = Dllp(DllpKind(kind), seq_num, hdr_credits & 0xFF, data_credits_dw & 0xFFFF)
    return Dllp(d.kind, d.seq_num, d.hdr_credits, d.data_credits_dw, crc16(d.body()))


def seq_delta(a: int, b: int) -> int:
    """Signed distance from ``b`` to ``a`` in the 12-bit sequence window."""
    d = (a - b) % SEQ_MOD
    return d - SEQ_MOD if d >= SEQ_MOD // 2 else d
