"""Length-prefixed JSON framing for broker messages.

Each frame is a 4-byte big-endian unsigned length followed by that many
bytes of UTF-8 JSON. Field names follow :class:`BrokerMessage`.
"""

from __future__ import annotations

import json
import socket
import struct
from dataclasses import dataclass
from typing import Any

import numpy as np

from .core import CameraFrame, ControlCommand, PointCloud

HEADER = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024
MESSAGE_TYPES = ("pointcloud", "camera", "control", "cmd", "ack")
VERBS = ("start", "stop", "reset")


class WireError(ValueError):
    """Malformed frame or message."""


@dataclass(frozen=True)
class BrokerMessage:
    type: str
    payload: Any = None  # PointCloud | CameraFrame | ControlCommand | verb str | None
    frame_id: int = 0
    sim_time: int = 0
    stream_id: str = ""

    def __post_init__(self):
        if self.type not in MESSAGE_TYPES:
            raise WireError(f"unknown message type {self.type!r}")

    @classmethod
    def sensor(cls, frame) -> BrokerMessage:
        kind = "pointcloud" if isinstance(frame, PointCloud) else "camera"
        return cls(kind, frame, frame.frame_id, frame.sim_time, frame.stream_id)

    @classmethod
    def cmd(cls, verb: str) -> BrokerMessage:
        return cls("cmd", verb)


def _payload_to_json(msg: BrokerMessage) -> dict[str, Any]:
    p = msg.payload
    if msg.type == "pointcloud":
        return {
            "points": np.column_stack([p.xyz, p.intensity, p.ring]).tolist(),
        }
    if msg.type == "camera":
        return {"width": p.width, "height": p.height, "pixels": p.pixels.reshape(-1).tolist()}
    if msg.type == "control":
        return {"steering": p.steering, "accel": p.accel}
    return {}


def to_json(msg: BrokerMessage) -> dict[str, Any]:
    out: dict[str, Any] = {"type": msg.type}
    if msg.type in ("cmd", "ack"):
        if msg.payload is not None:
            out["verb"] = msg.payload
        return out
    out.update(frame_id=msg.frame_id, sim_time=msg.sim_time, stream_id=msg.stream_id)
    out["payload"] = _payload_to_json(msg)
    return out


def from_json(obj: dict[str, Any]) -> BrokerMessage:
    try:
        kind = obj["type"]
        if kind in ("cmd", "ack"):
            verb = obj.get("verb")
            if kind == "cmd" and verb not in VERBS:
                raise WireError(f"unknown lifecycle verb {verb!r}")
            return BrokerMessage(kind, verb)
        fid, t, sid, p = obj["frame_id"], obj["sim_time"], obj.get("stream_id", ""), obj["payload"]
        if kind == "pointcloud":
            pts = np.asarray(p["points"], dtype=np.float64).reshape(-1, 5)
            payload = PointCloud(fid, t, pts[:, :3], pts[:, 3], pts[:, 4].astype(np.int16), sid)
        elif kind == "camera":
            payload = CameraFrame(fid, t, p["width"], p["height"], np.asarray(p["pixels"], dtype=np.uint8), sid)
        elif kind == "control":
            payload = ControlCommand(float(p["steering"]), float(p["accel"]))
        else:
            raise WireError(f"unknown message type {kind!r}")
        return BrokerMessage(kind, payload, fid, t, sid)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, WireError):
            raise
        raise WireError(f"malformed message: {exc}") from exc


def encode(msg: BrokerMessage) -> bytes:
    body = json.dumps(to_json(msg), separators=(",", ":")).encode("utf-8")
    return HEADER.pack(len(body)) + body


def decode(frame: bytes) -> BrokerMessage:
    """Decode exactly one length-prefixed frame."""
    if len(frame) < HEADER.size:
        raise WireError("frame shorter than header")
    (n,) = HEADER.unpack_from(frame)
    body = frame[HEADER.size :]
    if len(body) != n:
        raise WireError(f"length prefix {n} does not match body length {len(body)}")
    try:
        return from_json(json.loads(body.decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"invalid JSON body: {exc}") from exc


def payload_bytes(msg: BrokerMessage) -> bytes:
    """Canonical bytes of a message, used for passthrough fidelity checks."""
    return encode(msg)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed connection")
        buf.extend(chunk)
    return bytes(buf)


def send_message(sock: socket.socket, msg: BrokerMessage) -> None:
    sock.sendall(encode(msg))


def recv_message(sock: socket.socket) -> BrokerMessage:
    header = _recv_exact(sock, HEADER.size)
    (n,) = HEADER.unpack(header)
    if n > MAX_FRAME:
        raise WireError(f"frame of {n} bytes exceeds limit")
    return decode(header + _recv_exact(sock, n))
