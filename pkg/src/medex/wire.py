"""Binary wire protocol: 64-bit message header, AES-128-ECB payload framing, CRC-32 trailer.

A frame is an 8-octet header, zero or more octets of encrypted payload, and an
optional 4-octet CRC-32 trailer. This module is the single source of truth for
the bit layout; everything that crosses a link goes through ``seal_frame`` /
``open_frame``.

Header layout, MSB-first within each field, fields packed in order, big-endian
octet emission (64 bits total)::

    message type        6   UID of the message type
    priority            3   0-7, higher is more urgent
    checksum flag       1   1 when a CRC-32 trailer follows the payload
    open-loop safe state 8  UID of the emitter's queued always-safe state
    source entity       5
    source unit         5
    source automaton    5
    destination entity  5
    destination unit    5
    destination automaton 5
    data length         16  payload length in bits (whole octets, <= 65000)
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from enum import IntEnum

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

HEADER_LEN = 8
CHECKSUM_LEN = 4
AES_BLOCK = 16
KEY_LEN = 16

MAX_DATA_BITS = 65_000
# Largest plaintext whose padded ciphertext still fits MAX_DATA_BITS:
# padding always adds 1..16 octets, so the padded size of n octets is
# (n // 16 + 1) * 16, which must stay <= 8125 octets.
MAX_PLAINTEXT = 8_111

# (width, attribute) pairs in packing order; address fields are flattened.
_FIELDS = (
    (6, "message_type"),
    (3, "priority"),
    (1, "checksum_flag"),
    (8, "open_loop_safe_state"),
    (5, "src_entity"),
    (5, "src_unit"),
    (5, "src_automaton"),
    (5, "dst_entity"),
    (5, "dst_unit"),
    (5, "dst_automaton"),
    (16, "data_length_bits"),
)


class WireError(Exception):
    """Base class for protocol encode/decode failures."""


class FieldRangeError(WireError):
    """A header field is outside its encodable range."""


class MalformedHeaderError(WireError):
    """Received octets do not decode to a valid header."""


class PayloadTooLargeError(WireError):
    """Plaintext would exceed the 65,000-bit data length limit after padding."""


class FramingError(WireError):
    """Frame is truncated or its length disagrees with the header."""


class IntegrityError(WireError):
    """CRC-32 trailer does not match the frame contents."""


class DecryptionError(WireError):
    """Payload does not decrypt to validly padded plaintext."""


class MessageType(IntEnum):
    """Fixed code registry for the 6-bit message type field.

    Codes 1-16 are configuration messages, 17 and up carry application data.
    Code 0 is reserved.
    """

    HEARTBEAT = 1
    ANNOUNCE_REGISTRAR = 2
    REGISTRAR_NOTED = 3
    REJECTION = 4
    UNIT_SPEC = 5
    REGISTRAR_QUERY = 6
    REGISTRAR_UNKNOWN = 7
    AUTOMATON_REGISTRATION = 8
    YOU_ARE_IN = 9
    I_AM_STARTING = 10
    I_AM_HERE = 11
    YOU_ARE_DEAD = 12
    I_AM_STOPPING = 13
    I_AM_RUNNING = 14
    CONFIGURATION_SERVER_LOCATED = 15
    CONFIG_SERVER_QUERY = 16
    VITAL_SIGN = 17
    STATE_TRANSITION_EVENT = 18
    STATE_CONFIRMATION = 19
    BEST_PRACTICE_COMMAND = 20
    TIME_LOG = 21

    @property
    def kind(self) -> str:
        return message_kind(int(self))


_LAST_CONFIGURATION_CODE = 16


def message_kind(code: int) -> str:
    """Classify a 6-bit type code: 'reserved', 'configuration' or 'application-data'."""
    if code == 0:
        return "reserved"
    if code <= _LAST_CONFIGURATION_CODE:
        return "configuration"
    return "application-data"


def message_name(code: int) -> str:
    try:
        return MessageType(code).name.lower().replace("_", "-")
    except ValueError:
        return f"type-{code}"


@dataclass(frozen=True)
class Address:
    """Hierarchical (entity, unit, automaton) address; each field is a 5-bit UID.

    Value 0 means "broadcast within scope": a destination unit or automaton of
    0 addresses every automaton in the enclosing scope.
    """

    entity: int
    unit: int
    automaton: int

    def __post_init__(self):
        for name in ("entity", "unit", "automaton"):
            v = getattr(self, name)
            if not 0 <= v < 32:
                raise FieldRangeError(f"address {name}={v} outside 5-bit range")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.entity, self.unit, self.automaton)

    def __str__(self) -> str:
        return f"{self.entity}.{self.unit}.{self.automaton}"


@dataclass(frozen=True)
class MessageHeader:
    """The 64-bit frame prefix."""

    message_type: int
    priority: int
    checksum_flag: bool
    open_loop_safe_state: int
    source: Address
    destination: Address
    data_length_bits: int = 0

    def __post_init__(self):
        if not 0 <= int(self.message_type) < 64:
            raise FieldRangeError(f"message_type={self.message_type} outside 6-bit range")
        if not 0 <= self.priority <= 7:
            raise FieldRangeError(f"priority={self.priority} outside 0-7")
        if not 0 <= self.open_loop_safe_state < 256:
            raise FieldRangeError(
                f"open_loop_safe_state={self.open_loop_safe_state} outside 8-bit range"
            )
        if not 0 <= self.data_length_bits <= MAX_DATA_BITS:
            raise FieldRangeError(
                f"data_length_bits={self.data_length_bits} exceeds {MAX_DATA_BITS}"
            )
        if self.data_length_bits % 8 != 0:
            raise FieldRangeError("data_length_bits must cover whole octets")

    def _flat(self) -> dict[str, int]:
        return {
            "message_type": int(self.message_type),
            "priority": self.priority,
            "checksum_flag": int(self.checksum_flag),
            "open_loop_safe_state": self.open_loop_safe_state,
            "src_entity": self.source.entity,
            "src_unit": self.source.unit,
            "src_automaton": self.source.automaton,
            "dst_entity": self.destination.entity,
            "dst_unit": self.destination.unit,
            "dst_automaton": self.destination.automaton,
            "data_length_bits": self.data_length_bits,
        }


def encode_header(h: MessageHeader) -> bytes:
    """Pack a header into exactly 8 octets."""
    flat = h._flat()
    acc = 0
    for width, name in _FIELDS:
        acc = (acc << width) | flat[name]
    return acc.to_bytes(HEADER_LEN, "big")


def decode_header(data: bytes) -> MessageHeader:
    """Inverse of encode_header; raises MalformedHeaderError on invalid octets."""
    if len(data) != HEADER_LEN:
        raise MalformedHeaderError(f"header must be {HEADER_LEN} octets, got {len(data)}")
    acc = int.from_bytes(data, "big")
    values: dict[str, int] = {}
    shift = 64
    for width, name in _FIELDS:
        shift -= width
        values[name] = (acc >> shift) & ((1 << width) - 1)
    if values["data_length_bits"] > MAX_DATA_BITS:
        raise MalformedHeaderError(
            f"data length {values['data_length_bits']} bits exceeds {MAX_DATA_BITS}"
        )
    if values["data_length_bits"] % 8 != 0:
        raise MalformedHeaderError("data length is not a whole number of octets")
    code = values["message_type"]
    try:
        mtype: int = MessageType(code)
    except ValueError:
        mtype = code
    return MessageHeader(
        message_type=mtype,
        priority=values["priority"],
        checksum_flag=bool(values["checksum_flag"]),
        open_loop_safe_state=values["open_loop_safe_state"],
        source=Address(values["src_entity"], values["src_unit"], values["src_automaton"]),
        destination=Address(values["dst_entity"], values["dst_unit"], values["dst_automaton"]),
        data_length_bits=values["data_length_bits"],
    )


def crc32(data: bytes) -> int:
    """ITU-T V.42 / ISO 3309 CRC-32 (reflected 0x04C11DB7, init and xorout all-ones)."""
    return zlib.crc32(data) & 0xFFFFFFFF


@dataclass(frozen=True)
class Frame:
    """A decoded frame: header, raw (still encrypted) payload, optional checksum."""

    header: MessageHeader
    payload: bytes
    checksum: int | None = None


def _pad(plaintext: bytes) -> bytes:
    n = AES_BLOCK - (len(plaintext) % AES_BLOCK)
    return plaintext + bytes([n]) * n


def _unpad(block_data: bytes) -> bytes:
    if not block_data or len(block_data) % AES_BLOCK != 0:
        raise DecryptionError("ciphertext is not a whole number of cipher blocks")
    n = block_data[-1]
    if not 1 <= n <= AES_BLOCK or block_data[-n:] != bytes([n]) * n:
        raise DecryptionError("invalid padding")
    return block_data[:-n]


def _cipher(key: bytes) -> Cipher:
    if len(key) != KEY_LEN:
        raise WireError(f"key must be {KEY_LEN} octets")
    return Cipher(algorithms.AES(key), modes.ECB())


def encrypt_payload(plaintext: bytes, key: bytes) -> bytes:
    """Pad to whole cipher blocks and encrypt. Empty plaintext yields one block."""
    enc = _cipher(key).encryptor()
    return enc.update(_pad(plaintext)) + enc.finalize()


def decrypt_payload(ciphertext: bytes, key: bytes) -> bytes:
    dec = _cipher(key).decryptor()
    return _unpad(dec.update(ciphertext) + dec.finalize())


def seal_frame(
    h: MessageHeader, plaintext: bytes, key: bytes, with_checksum: bool = True
) -> bytes:
    """Encrypt the payload, fix up length/flag fields, and emit the full frame.

    The data length field counts the padded, encrypted payload; the optional
    CRC-32 covers encoded header plus encrypted payload (encrypt-then-checksum,
    so integrity is checkable without the key) and is emitted big-endian.
    """
    if len(plaintext) > MAX_PLAINTEXT:
        raise PayloadTooLargeError(
            f"plaintext of {len(plaintext)} octets pads beyond {MAX_DATA_BITS} bits"
        )
    payload = encrypt_payload(plaintext, key)
    h = replace(h, data_length_bits=len(payload) * 8, checksum_flag=with_checksum)
    head = encode_header(h)
    if with_checksum:
        return head + payload + crc32(head + payload).to_bytes(CHECKSUM_LEN, "big")
    return head + payload


def open_frame(data: bytes, key: bytes) -> tuple[MessageHeader, bytes]:
    """Parse, integrity-check, and decrypt a frame back to (header, plaintext)."""
    if len(data) < HEADER_LEN:
        raise FramingError(f"frame of {len(data)} octets is shorter than a header")
    h = decode_header(data[:HEADER_LEN])
    payload_len = h.data_length_bits // 8
    expected = HEADER_LEN + payload_len + (CHECKSUM_LEN if h.checksum_flag else 0)
    if len(data) != expected:
        raise FramingError(f"frame is {len(data)} octets, header implies {expected}")
    payload = data[HEADER_LEN : HEADER_LEN + payload_len]
    if h.checksum_flag:
        stated = int.from_bytes(data[-CHECKSUM_LEN:], "big")
        actual = crc32(data[: HEADER_LEN + payload_len])
        if stated != actual:
            raise IntegrityError(f"checksum mismatch: stated {stated:#010x}, computed {actual:#010x}")
    if payload_len == 0:
        return h, b""
    return h, decrypt_payload(payload, key)


def parse_frame(data: bytes) -> Frame:
    """Split a frame without decrypting (no key needed); still length/CRC-checked."""
    if len(data) < HEADER_LEN:
        raise FramingError(f"frame of {len(data)} octets is shorter than a header")
    h = decode_header(data[:HEADER_LEN])
    payload_len = h.data_length_bits // 8
    expected = HEADER_LEN + payload_len + (CHECKSUM_LEN if h.checksum_flag else 0)
    if len(data) != expected:
        raise FramingError(f"frame is {len(data)} octets, header implies {expected}")
    checksum = int.from_bytes(data[-CHECKSUM_LEN:], "big") if h.checksum_flag else None
    return Frame(h, data[HEADER_LEN : HEADER_LEN + payload_len], checksum)


def readdress_frame(data: bytes, destination: Address) -> bytes:
    """Rewrite a frame's destination without the key (checksum covers ciphertext)."""
    f = parse_frame(data)
    head = encode_header(replace(f.header, destination=destination))
    if f.header.checksum_flag:
        return head + f.payload + crc32(head + f.payload).to_bytes(CHECKSUM_LEN, "big")
    return head + f.payload


def dump_frame(data: bytes, key: bytes | None = None) -> str:
    """Render a frame as annotated text for debugging."""
    lines = [f"frame: {len(data)} octets"]
    try:
        f = parse_frame(data)
    except WireError as e:
        lines.append(f"  UNPARSEABLE: {e}")
        lines.append(f"  raw: {data.hex()}")
        return "\n".join(lines)
    h = f.header
    lines.append(f"  header: {data[:HEADER_LEN].hex()}")
    lines.append(f"    message type        {int(h.message_type):>3}  {message_name(int(h.message_type))}"
                 f" ({message_kind(int(h.message_type))})")
    lines.append(f"    priority            {h.priority:>3}")
    lines.append(f"    checksum flag       {int(h.checksum_flag):>3}")
    lines.append(f"    open-loop safe uid  {h.open_loop_safe_state:>3}")
    lines.append(f"    source              {h.source}")
    lines.append(f"    destination         {h.destination}")
    lines.append(f"    data length         {h.data_length_bits} bits")
    if f.payload:
        lines.append(f"  payload ({len(f.payload)} octets): {f.payload.hex()}")
        if key is not None:
            try:
                plain = decrypt_payload(f.payload, key)
                lines.append(f"  plaintext ({len(plain)} octets): {plain!r}")
            except WireError as e:
                lines.append(f"  plaintext: <{e}>")
    if f.checksum is not None:
        ok = f.checksum == crc32(data[: HEADER_LEN + len(f.payload)])
        lines.append(f"  checksum: {f.checksum:#010x} ({'ok' if ok else 'MISMATCH'})")
    return "\n".join(lines)
