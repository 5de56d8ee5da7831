"""Payload codecs: canonical binary layouts for configuration messages, JSON for application data.

Configuration payloads are fixed field sequences: unsigned single-octet UIDs
and ranks, addresses as three octets, endpoints as length-prefixed UTF-8,
topic tables as a count followed by (unit, type) octet pairs. Application
payloads (vitals, state events, commands, time logs) are canonical JSON
(sorted keys) so identical runs produce identical frames.
"""

from __future__ import annotations

import json
import struct

from .wire import Address, MessageType, WireError


class PayloadError(WireError):
    """Payload bytes do not match the message type's layout."""


def _pack_str(s: str) -> bytes:
    raw = s.encode()
    if len(raw) > 255:
        raise PayloadError(f"string field of {len(raw)} octets exceeds 255")
    return bytes([len(raw)]) + raw


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def u8(self) -> int:
        if self.pos >= len(self.data):
            raise PayloadError("payload truncated")
        v = self.data[self.pos]
        self.pos += 1
        return v

    def string(self) -> str:
        n = self.u8()
        if self.pos + n > len(self.data):
            raise PayloadError("payload truncated inside string")
        s = self.data[self.pos : self.pos + n].decode()
        self.pos += n
        return s

    def address(self) -> Address:
        return Address(self.u8(), self.u8(), self.u8())

    def done(self) -> None:
        if self.pos != len(self.data):
            raise PayloadError(f"{len(self.data) - self.pos} trailing octets in payload")


# -- configuration payloads -------------------------------------------------
# Encoders keyed by message type; each returns bytes from keyword fields.

def encode_config(mtype: MessageType, **fields) -> bytes:
    if mtype == MessageType.HEARTBEAT:
        topics = fields.get("topics")
        if topics is None:
            return b""
        # Gateway keepalive variant: piggybacked subscription topic table.
        out = struct.pack(">H", len(topics))
        for unit, msg_type in sorted(topics):
            out += bytes([unit, int(msg_type)])
        return out
    if mtype == MessageType.ANNOUNCE_REGISTRAR:
        return bytes([fields["unit"]]) + _pack_str(fields["endpoint"])
    if mtype == MessageType.REGISTRAR_NOTED:
        return bytes([fields["unit"]])
    if mtype == MessageType.REJECTION:
        return bytes([fields.get("reason_code", 0)]) + _pack_str(fields.get("detail", ""))
    if mtype == MessageType.UNIT_SPEC:
        return bytes([fields["unit"]]) + _pack_str(fields["endpoint"])
    if mtype == MessageType.REGISTRAR_QUERY:
        return bytes([fields["unit"]])
    if mtype == MessageType.REGISTRAR_UNKNOWN:
        return bytes([fields["unit"]])
    if mtype == MessageType.AUTOMATON_REGISTRATION:
        return _pack_str(fields["endpoint"])
    if mtype == MessageType.YOU_ARE_IN:
        return b""
    if mtype == MessageType.I_AM_STARTING:
        a: Address = fields["address"]
        return bytes([a.entity, a.unit, a.automaton]) + _pack_str(fields["endpoint"])
    if mtype == MessageType.I_AM_HERE:
        a = fields["address"]
        return bytes([a.entity, a.unit, a.automaton])
    if mtype in (MessageType.YOU_ARE_DEAD, MessageType.I_AM_STOPPING, MessageType.CONFIG_SERVER_QUERY):
        return b""
    if mtype == MessageType.I_AM_RUNNING:
        return bytes([fields["rank"]])
    if mtype == MessageType.CONFIGURATION_SERVER_LOCATED:
        return bytes([fields["rank"]]) + _pack_str(fields["endpoint"])
    raise PayloadError(f"no configuration layout for {mtype}")


def decode_config(mtype: MessageType, data: bytes) -> dict:
    r = _Reader(data)
    out: dict = {}
    if mtype == MessageType.HEARTBEAT:
        if data:
            (count,) = struct.unpack(">H", data[:2])
            r.pos = 2
            topics = []
            for _ in range(count):
                topics.append((r.u8(), r.u8()))
            out["topics"] = topics
    elif mtype in (MessageType.ANNOUNCE_REGISTRAR, MessageType.UNIT_SPEC):
        out["unit"] = r.u8()
        out["endpoint"] = r.string()
    elif mtype in (MessageType.REGISTRAR_NOTED, MessageType.REGISTRAR_QUERY, MessageType.REGISTRAR_UNKNOWN):
        out["unit"] = r.u8()
    elif mtype == MessageType.REJECTION:
        out["reason_code"] = r.u8()
        out["detail"] = r.string()
    elif mtype == MessageType.AUTOMATON_REGISTRATION:
        out["endpoint"] = r.string()
    elif mtype == MessageType.I_AM_STARTING:
        out["address"] = r.address()
        out["endpoint"] = r.string()
    elif mtype == MessageType.I_AM_HERE:
        out["address"] = r.address()
    elif mtype == MessageType.I_AM_RUNNING:
        out["rank"] = r.u8()
    elif mtype == MessageType.CONFIGURATION_SERVER_LOCATED:
        out["rank"] = r.u8()
        out["endpoint"] = r.string()
    elif mtype in (
        MessageType.YOU_ARE_IN,
        MessageType.YOU_ARE_DEAD,
        MessageType.I_AM_STOPPING,
        MessageType.CONFIG_SERVER_QUERY,
    ):
        pass
    else:
        raise PayloadError(f"no configuration layout for {mtype}")
    r.done()
    return out


# -- application payloads ----------------------------------------------------

def encode_app(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def decode_app(data: bytes) -> dict:
    try:
        out = json.loads(data.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise PayloadError(f"application payload is not valid JSON: {e}") from None
    if not isinstance(out, dict):
        raise PayloadError("application payload must be a JSON object")
    return out
