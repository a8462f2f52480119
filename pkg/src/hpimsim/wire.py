"""Binary encoding/decoding of the seven control message types.

All multi-byte fields are big-endian.  Layout (see docs/wire_format.md):

    header:  boot_time u64 | version u8 | msg_type u8 | sec_type u16 |
             sec_length u16 | sec_value (sec_length bytes)
    body:    per message type

Messages may carry a MAC in the security block.  The MAC is an
HMAC-SHA256 digest over (src, dst, message bytes with sec_value zeroed),
so replaying a frame with a different source or destination fails
authentication.
"""
from __future__ import annotations

import hmac
import hashlib
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from ipaddress import IPv4Address
from typing import Optional, Tuple, Union

VERSION = 1
IP_PROTO = 103
ALL_ROUTERS = "224.0.0.13"
MAC_SEC_TYPE = 1
MAC_LEN = 32

HELLO_TLV_HOLD_TIME = 1
HELLO_TLV_CHECKPOINT_SN = 2


class MsgType(IntEnum):
    HELLO = 1
    SYNC = 2
    IAM_UPSTREAM = 3
    IAM_NO_LONGER_UPSTREAM = 4
    INTEREST = 5
    NO_INTEREST = 6
    ACK = 7


class WireError(Exception):
    pass


class InvalidMessage(WireError):
    """Attempt to encode a message violating a type invariant."""


class DecodeError(WireError):
    pass


class Truncated(DecodeError):
    pass


class UnknownType(DecodeError):
    pass


class MalformedTLV(DecodeError):
    pass


class AuthFail(DecodeError):
    pass


def _pack_ip(addr: str) -> bytes:
    return IPv4Address(addr).packed


def _unpack_ip(data: bytes) -> str:
    return str(IPv4Address(data))


def _is_multicast(addr: str) -> bool:
    return IPv4Address(addr).is_multicast


@dataclass(frozen=True)
class Hello:
    hold_time: int
    checkpoint_sn: Optional[int] = None
    unknown_tlvs: Tuple[Tuple[int, bytes], ...] = ()

    msg_type = MsgType.HELLO


@dataclass(frozen=True)
class SyncTreeRecord:
    source: str
    group: str
    rpc_preference: int
    rpc: int


@dataclass(frozen=True)
class Sync:
    my_snapshot_sn: int
    neighbor_snapshot_sn: int  # 0 = unknown
    neighbor_boot_time: int  # 0 = unknown
    master: bool
    more: bool
    sync_sn: int
    trees: Tuple[SyncTreeRecord, ...] = ()
    hello_hold_time: Optional[int] = None  # present iff more flag cleared

    msg_type = MsgType.SYNC


@dataclass(frozen=True)
class IamUpstream:
    sn: int
    source: str
    group: str
    rpc_preference: int
    rpc: int

    msg_type = MsgType.IAM_UPSTREAM


@dataclass(frozen=True)
class IamNoLongerUpstream:
    sn: int
    source: str
    group: str

    msg_type = MsgType.IAM_NO_LONGER_UPSTREAM


@dataclass(frozen=True)
class Interest:
    sn: int
    source: str
    group: str

    msg_type = MsgType.INTEREST


@dataclass(frozen=True)
class NoInterest:
    sn: int
    source: str
    group: str

    msg_type = MsgType.NO_INTEREST


@dataclass(frozen=True)
class Ack:
    neighbor_sn: int  # SN being acknowledged
    source: str
    group: str
    neighbor_boot_time: int
    neighbor_snapshot_sn: int
    my_snapshot_sn: int

    msg_type = MsgType.ACK


Body = Union[Hello, Sync, IamUpstream, IamNoLongerUpstream, Interest, NoInterest, Ack]


@dataclass(frozen=True)
class Message:
    boot_time: int
    body: Body

    @property
    def msg_type(self) -> MsgType:
        return self.body.msg_type


def _check_group(group: str) -> None:
    if not _is_multicast(group):
        raise InvalidMessage("group %s is not a multicast address" % group)


def _encode_body(body: Body) -> bytes:
    if isinstance(body, Hello):
        if body.hold_time < 0 or body.hold_time > 0xFFFF:
            raise InvalidMessage("hold_time out of range")
        out = struct.pack(">HHH", HELLO_TLV_HOLD_TIME, 2, body.hold_time)
        if body.checkpoint_sn is not None:
            out += struct.pack(">HHI", HELLO_TLV_CHECKPOINT_SN, 4, body.checkpoint_sn)
        for ttype, tval in body.unknown_tlvs:
            out += struct.pack(">HH", ttype, len(tval)) + tval
        return out
    if isinstance(body, Sync):
        if (body.hello_hold_time is None) != body.more:
            raise InvalidMessage("hello_hold_time present iff more flag cleared")
        flags = (0x80 if body.master else 0) | (0x40 if body.more else 0)
        out = struct.pack(
            ">IIQBHH",
            body.my_snapshot_sn,
            body.neighbor_snapshot_sn,
            body.neighbor_boot_time,
            flags,
            body.sync_sn,
            len(body.trees),
        )
        for rec in body.trees:
            _check_group(rec.group)
            out += _pack_ip(rec.source) + _pack_ip(rec.group)
            out += struct.pack(">II", rec.rpc_preference, rec.rpc)
        if body.hello_hold_time is not None:
            out += struct.pack(">H", body.hello_hold_time)
        return out
    if isinstance(body, IamUpstream):
        _check_group(body.group)
        return (
            struct.pack(">I", body.sn)
            + _pack_ip(body.source)
            + _pack_ip(body.group)
            + struct.pack(">II", body.rpc_preference, body.rpc)
        )
    if isinstance(body, (IamNoLongerUpstream, Interest, NoInterest)):
        _check_group(body.group)
        return struct.pack(">I", body.sn) + _pack_ip(body.source) + _pack_ip(body.group)
    if isinstance(body, Ack):
        _check_group(body.group)
        return (
            struct.pack(">I", body.neighbor_sn)
            + _pack_ip(body.source)
            + _pack_ip(body.group)
            + struct.pack(
                ">QII",
                body.neighbor_boot_time,
                body.neighbor_snapshot_sn,
                body.my_snapshot_sn,
            )
        )
    raise InvalidMessage("unknown body type %r" % (body,))


def _mac(src: str, dst: str, zeroed: bytes, key: bytes) -> bytes:
    return hmac.new(key, _pack_ip(src) + _pack_ip(dst) + zeroed, hashlib.sha256).digest()


def encode_message(msg: Message, src: str, dst: str, key: Optional[bytes] = None) -> bytes:
    """Serialize a message, computing the MAC when a key is given."""
    body = _encode_body(msg.body)
    if key is None:
        sec = struct.pack(">HH", 0, 0)
        return struct.pack(">QBB", msg.boot_time, VERSION, int(msg.msg_type)) + sec + body
    sec_zero = struct.pack(">HH", MAC_SEC_TYPE, MAC_LEN) + b"\x00" * MAC_LEN
    head = struct.pack(">QBB", msg.boot_time, VERSION, int(msg.msg_type))
    mac = _mac(src, dst, head + sec_zero + body, key)
    sec = struct.pack(">HH", MAC_SEC_TYPE, MAC_LEN) + mac
    return head + sec + body


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise Truncated("need %d bytes at offset %d" % (n, self.pos))
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def ip(self) -> str:
        return _unpack_ip(self.take(4))

    def remaining(self) -> int:
        return len(self.data) - self.pos


def _decode_hello(r: _Reader, lenient: bool) -> Hello:
    hold_time = None
    checkpoint_sn = None
    unknown = []
    while r.remaining():
        if r.remaining() < 4:
            raise MalformedTLV("dangling TLV header")
        ttype = r.u16()
        tlen = r.u16()
        tval = r.take(tlen)
        if ttype == HELLO_TLV_HOLD_TIME:
            if tlen != 2:
                raise MalformedTLV("hold time TLV must be 2 bytes")
            hold_time = struct.unpack(">H", tval)[0]
        elif ttype == HELLO_TLV_CHECKPOINT_SN:
            if tlen != 4:
                raise MalformedTLV("checkpoint TLV must be 4 bytes")
            checkpoint_sn = struct.unpack(">I", tval)[0]
        elif lenient:
            unknown.append((ttype, tval))
    if hold_time is None:
        raise MalformedTLV("hold time TLV missing")
    return Hello(hold_time=hold_time, checkpoint_sn=checkpoint_sn, unknown_tlvs=tuple(unknown))


def _decode_body(msg_type: int, r: _Reader, lenient: bool) -> Body:
    if msg_type == MsgType.HELLO:
        return _decode_hello(r, lenient)
    if msg_type == MsgType.SYNC:
        my_ssn = r.u32()
        nei_ssn = r.u32()
        nei_bt = r.u64()
        flags = r.u8()
        sync_sn = r.u16()
        ntrees = r.u16()
        trees = []
        for _ in range(ntrees):
            source = r.ip()
            group = r.ip()
            pref = r.u32()
            rpc = r.u32()
            trees.append(SyncTreeRecord(source, group, pref, rpc))
        more = bool(flags & 0x40)
        hold = None if more else r.u16()
        return Sync(
            my_snapshot_sn=my_ssn,
            neighbor_snapshot_sn=nei_ssn,
            neighbor_boot_time=nei_bt,
            master=bool(flags & 0x80),
            more=more,
            sync_sn=sync_sn,
            trees=tuple(trees),
            hello_hold_time=hold,
        )
    if msg_type == MsgType.IAM_UPSTREAM:
        return IamUpstream(r.u32(), r.ip(), r.ip(), r.u32(), r.u32())
    if msg_type == MsgType.IAM_NO_LONGER_UPSTREAM:
        return IamNoLongerUpstream(r.u32(), r.ip(), r.ip())
    if msg_type == MsgType.INTEREST:
        return Interest(r.u32(), r.ip(), r.ip())
    if msg_type == MsgType.NO_INTEREST:
        return NoInterest(r.u32(), r.ip(), r.ip())
    if msg_type == MsgType.ACK:
        return Ack(r.u32(), r.ip(), r.ip(), r.u64(), r.u32(), r.u32())
    raise UnknownType("message type %d" % msg_type)


def decode_message(
    data: bytes,
    src: str,
    dst: str,
    key: Optional[bytes] = None,
    lenient: bool = False,
) -> Message:
    """Parse a serialized message, verifying the MAC when a key is configured."""
    r = _Reader(data)
    boot_time = r.u64()
    version = r.u8()
    if version != VERSION:
        raise DecodeError("unsupported version %d" % version)
    msg_type = r.u8()
    if msg_type not in MsgType._value2member_map_:
        raise UnknownType("message type %d" % msg_type)
    sec_type = r.u16()
    sec_len = r.u16()
    sec_value = r.take(sec_len)
    if key is not None:
        if sec_type != MAC_SEC_TYPE or sec_len != MAC_LEN:
            raise AuthFail("security block does not match configured key")
        sec_off = 8 + 1 + 1 + 4
        zeroed = data[:sec_off] + b"\x00" * sec_len + data[sec_off + sec_len :]
        if not hmac.compare_digest(_mac(src, dst, zeroed, key), sec_value):
            raise AuthFail("MAC mismatch")
    elif sec_type == 0 and sec_len != 0:
        raise MalformedTLV("sec_type 0 requires empty sec_value")
    body = _decode_body(msg_type, r, lenient)
    if r.remaining():
        raise MalformedTLV("%d trailing bytes" % r.remaining())
    return Message(boot_time=boot_time, body=body)
