"""Fuzzing broker: the man-in-the-middle between simulator and driving stack.

Every sensor frame passes through :meth:`Broker.process_sensor_frame`;
while an iteration is armed, frames of a stream with a registered
plug-in are rewritten with that iteration's fixed mask. Control commands
travel the other way unmodified.
"""

from __future__ import annotations

import logging
import socket
import threading
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Protocol

from .core import CameraFrame, ControlCommand, InfrastructureFailure, PointCloud
from .wire import BrokerMessage, WireError, recv_message, send_message

if TYPE_CHECKING:
    from .maskgen import FuzzingMask, SensorFuzzerPlugin

log = logging.getLogger(__name__)

STOPPED, RUNNING = "stopped", "running"


class LifecycleError(RuntimeError):
    """Illegal lifecycle transition or call in the wrong state."""


class Endpoint(Protocol):
    def on_lifecycle(self, verb: str) -> None: ...


@dataclass
class NullEndpoint:
    """Endpoint that accepts everything; useful for the ADS side in-process."""

    verbs: list = field(default_factory=list)
    delivered: list = field(default_factory=list)

    def on_lifecycle(self, verb: str) -> None:
        self.verbs.append(verb)

    def deliver_control(self, cmd: ControlCommand) -> None:
        self.delivered.append(cmd)


@dataclass
class ArmedStream:
    mask: FuzzingMask
    params: object


class Broker:
    """Intercepts sensor frames, applies plug-ins and forwards controls.

    Args:
        sim: simulator endpoint; must provide ``on_lifecycle`` and
            ``deliver_control``.
        ads: driving-stack endpoint; must provide ``on_lifecycle``.
        control_buffer: commands held while the simulator is unreachable
            before the iteration is aborted.
        transform: optional per-frame format conversion for external
            endpoints; identity by default.
    """

    def __init__(self, sim=None, ads=None, control_buffer: int = 64, transform: Callable | None = None):
        self.sim = sim or NullEndpoint()
        self.ads = ads or NullEndpoint()
        self.control_buffer = control_buffer
        self.transform = transform
        self.state = STOPPED
        self.plugins: dict[str, SensorFuzzerPlugin] = {}
        self.armed: dict[str, ArmedStream] = {}
        self._pending: deque[ControlCommand] = deque()
        self._lock = threading.RLock()
        self.errors: list[dict] = []
        self._warned: set[str] = set()
        self.reset_counters()

    def reset_counters(self) -> None:
        self.frames_in: Counter = Counter()
        self.frames_out: Counter = Counter()
        self.fuzzed: Counter = Counter()
        self.controls_forwarded = 0
        self.applied_masks: dict[str, set[int]] = {}
        self._last_time: dict[str, int] = {}

    def register(self, plugin: SensorFuzzerPlugin) -> None:
        if plugin.stream_id in self.plugins:
            raise ValueError(f"a plug-in is already registered for {plugin.stream_id!r}")
        self.plugins[plugin.stream_id] = plugin

    def arm(self, masks: dict[str, tuple[FuzzingMask, object]]) -> None:
        """Fix the masks for the next iteration; allowed only while stopped."""
        with self._lock:
            if self.state != STOPPED:
                raise LifecycleError("masks can only be armed while stopped")
            unknown = set(masks) - set(self.plugins)
            if unknown:
                raise ValueError(f"no plug-in registered for {sorted(unknown)}")
            self.armed = {sid: ArmedStream(m, p) for sid, (m, p) in masks.items()}

    def disarm(self) -> None:
        with self._lock:
            if self.state != STOPPED:
                raise LifecycleError("masks can only be disarmed while stopped")
            self.armed = {}

    @property
    def fuzzing_enabled(self) -> bool:
        return bool(self.armed)

    def lifecycle(self, verb: str) -> BrokerMessage:
        with self._lock:
            if verb == "start":
                if self.state != STOPPED:
                    raise LifecycleError("start requires the stopped state")
                new = RUNNING
            elif verb == "stop":
                if self.state != RUNNING:
                    raise LifecycleError("stop requires the running state")
                new = STOPPED
            elif verb == "reset":
                new = STOPPED
            else:
                raise LifecycleError(f"unknown verb {verb!r}")
            self.sim.on_lifecycle(verb)
            self.ads.on_lifecycle(verb)
            self.state = new
            if verb == "reset":
                self.reset_counters()
                self._pending.clear()
            return BrokerMessage("ack", verb)

    def process_sensor_frame(self, msg: BrokerMessage) -> BrokerMessage | None:
        """Route one sensor frame, fuzzing it if its stream is armed.

        Returns ``None`` when the frame is malformed and dropped; the drop
        is recorded in :attr:`errors`.
        """
        if self.state != RUNNING:
            raise LifecycleError("broker is not running")
        if msg.type not in ("pointcloud", "camera"):
            raise ValueError(f"not a sensor message: {msg.type}")
        sid = msg.stream_id
        self.frames_in[sid] += 1
        expected = PointCloud if msg.type == "pointcloud" else CameraFrame
        if not isinstance(msg.payload, expected):
            self.errors.append({"stream_id": sid, "frame_id": msg.frame_id, "error": "malformed payload"})
            return None
        last = self._last_time.get(sid)
        if last is not None and msg.sim_time < last:
            self.errors.append({"stream_id": sid, "frame_id": msg.frame_id, "error": "sim_time went backwards"})
            return None
        self._last_time[sid] = msg.sim_time

        frame = msg.payload
        plugin = self.plugins.get(sid)
        if plugin is None:
            if sid not in self._warned:
                self._warned.add(sid)
                log.warning("no plug-in for stream %r; routing unmodified", sid)
        elif sid in self.armed:
            armed = self.armed[sid]
            frame = plugin.apply(frame, armed.mask, armed.params)
            self.fuzzed[sid] += 1
            self.applied_masks.setdefault(sid, set()).add(id(armed.mask))
        if self.transform is not None:
            frame = self.transform(frame)
        self.frames_out[sid] += 1
        if frame is msg.payload:
            return msg
        return BrokerMessage(msg.type, frame, msg.frame_id, msg.sim_time, sid)

    def forward_control(self, cmd: ControlCommand) -> None:
        """Deliver ``cmd`` to the simulator, in order.

        Raises:
            LifecycleError: the broker is stopped.
            InfrastructureFailure: the simulator stayed unreachable for more
                than ``control_buffer`` commands.
        """
        if self.state != RUNNING:
            raise LifecycleError("cannot forward control while stopped")
        self._pending.append(cmd)
        while self._pending:
            try:
                self.sim.deliver_control(self._pending[0])
            except ConnectionError as exc:
                if len(self._pending) > self.control_buffer:
                    raise InfrastructureFailure(f"simulator unreachable: {exc}") from exc
                return
            self._pending.popleft()
            self.controls_forwarded += 1


class SocketEndpoint:
    """Broker-side view of a TCP-connected endpoint."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._send_lock = threading.Lock()

    def send(self, msg: BrokerMessage) -> None:
        with self._send_lock:
            send_message(self.sock, msg)

    def on_lifecycle(self, verb: str) -> None:
        self.send(BrokerMessage.cmd(verb))

    def deliver_control(self, cmd: ControlCommand) -> None:
        try:
            self.send(BrokerMessage("control", cmd))
        except OSError as exc:
            raise ConnectionError(str(exc)) from exc


class SocketBridge:
    """Runs a broker between a simulator and an ADS connected over TCP.

    The sensor path (simulator to ADS) and the control path (ADS to
    simulator) each get a thread; per-stream order follows from a single
    reader per connection.
    """

    def __init__(self, broker: Broker, host: str = "127.0.0.1"):
        self.broker = broker
        self._servers = {}
        for role in ("sim", "ads"):
            srv = socket.create_server((host, 0))
            self._servers[role] = srv
        self.addresses = {role: srv.getsockname() for role, srv in self._servers.items()}
        self._threads: list[threading.Thread] = []
        self.failures: list[BaseException] = []

    def accept(self, timeout: float = 5.0) -> None:
        conns = {}
        for role, srv in self._servers.items():
            srv.settimeout(timeout)
            conn, _ = srv.accept()
            conn.settimeout(None)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conns[role] = conn
            srv.close()
        self.sim_ep = SocketEndpoint(conns["sim"])
        self.ads_ep = SocketEndpoint(conns["ads"])
        self.broker.sim = self.sim_ep
        self.broker.ads = self.ads_ep
        for target in (self._sensor_path, self._control_path):
            th = threading.Thread(target=self._guard, args=(target,), daemon=True)
            th.start()
            self._threads.append(th)

    def _guard(self, fn):
        try:
            fn()
        except (ConnectionError, OSError):
            pass
        except BaseException as exc:  # surfaced to the orchestrator
            self.failures.append(exc)

    def _sensor_path(self):
        while True:
            msg = recv_message(self.sim_ep.sock)
            if msg.type in ("pointcloud", "camera"):
                out = self.broker.process_sensor_frame(msg)
                if out is not None:
                    self.ads_ep.send(out)

    def _control_path(self):
        while True:
            msg = recv_message(self.ads_ep.sock)
            if msg.type == "control":
                self.broker.forward_control(msg.payload)

    def close(self) -> None:
        for ep in (getattr(self, "sim_ep", None), getattr(self, "ads_ep", None)):
            if ep is not None:
                try:
                    ep.sock.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                ep.sock.close()
        for th in self._threads:
            th.join(timeout=2.0)


class SocketClient:
    """Endpoint-side connection: sends frames, receives messages, skips lifecycle notices."""

    def __init__(self, address):
        self.sock = socket.create_connection(address)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.verbs: list[str] = []

    def send(self, msg: BrokerMessage) -> None:
        send_message(self.sock, msg)

    def recv(self, *types: str) -> BrokerMessage:
        while True:
            msg = recv_message(self.sock)
            if msg.type == "cmd":
                self.verbs.append(msg.payload)
                continue
            if types and msg.type not in types:
                raise WireError(f"unexpected {msg.type} message")
            return msg

    def close(self) -> None:
        self.sock.close()
