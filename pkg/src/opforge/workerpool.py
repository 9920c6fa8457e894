"""Worker lifecycle: spawn, health-check, lease, respawn, teardown.

A handle is used by exactly one session at a time. All I/O is
request/response with a per-request timeout; a handle that stops answering
is treated as dead and surfaces as WorkerLost to its session, never as an
orchestrator crash. Dead workers are respawned up to a restart cap.
"""

from __future__ import annotations

import queue
import socket
import subprocess
import threading
import time
import uuid
from dataclasses import dataclass

from .errors import PoolExhausted, WorkerLost, WorkerSpawnFailed
from .protocol import (
    Capabilities,
    CapabilitiesOk,
    Shutdown,
    encode_message,
    read_message,
)

DEFAULT_COMPILE_TIMEOUT = 300.0
DEFAULT_TEST_TIMEOUT = 120.0


@dataclass(frozen=True)
class WorkerPoolSpec:
    command: tuple = ()            # spawn argv for local workers
    count: int = 1
    addresses: tuple = ()          # ("host:port", ...) for remote workers
    restart_cap: int = 3
    lease_timeout: float = 60.0
    request_timeout: float = DEFAULT_COMPILE_TIMEOUT

    def to_json(self) -> dict:
        return {
            "command": list(self.command),
            "count": self.count,
            "addresses": list(self.addresses),
            "restart_cap": self.restart_cap,
            "lease_timeout": self.lease_timeout,
            "request_timeout": self.request_timeout,
        }


class _StreamReader(threading.Thread):
    """Pumps decoded messages (or a death sentinel) into a queue."""

    def __init__(self, stream):
        super().__init__(daemon=True)
        self.stream = stream
        self.messages: queue.Queue = queue.Queue()

    def run(self):
        try:
            while True:
                msg = read_message(self.stream)
                if msg is None:
                    break
                self.messages.put(msg)
        except Exception as exc:
            self.messages.put(exc)
        self.messages.put(None)  # EOF sentinel


class WorkerHandle:
    """One live worker: a subprocess over stdio or a TCP peer."""

    def __init__(self, writer, reader_stream, *, proc=None, sock=None, label=""):
        self._writer = writer
        self._proc = proc
        self._sock = sock
        self.label = label
        self.backend = "unknown"
        self._dead = False
        self._reader = _StreamReader(reader_stream)
        self._reader.start()

    @property
    def alive(self) -> bool:
        if self._dead:
            return False
        if self._proc is not None and self._proc.poll() is not None:
            return False
        return True

    def request(self, msg, timeout: float | None = None):
        if not self.alive:
            raise WorkerLost(f"worker {self.label} is dead")
        try:
            self._writer.write(encode_message(msg))
            self._writer.flush()
        except Exception as exc:
            self._dead = True
            raise WorkerLost(f"write to worker {self.label} failed: {exc}") from exc
        try:
            item = self._reader.messages.get(timeout=timeout or DEFAULT_COMPILE_TIMEOUT)
        except queue.Empty:
            self._dead = True
            raise WorkerLost(f"worker {self.label} timed out") from None
        if item is None or isinstance(item, Exception):
            self._dead = True
            raise WorkerLost(f"worker {self.label} died mid-exchange: {item}")
        return item

    def health_check(self) -> bool:
        try:
            resp = self.request(Capabilities(msg_id=f"hc-{uuid.uuid4().hex[:8]}"), timeout=10.0)
        except WorkerLost:
            return False
        if isinstance(resp, CapabilitiesOk):
            self.backend = resp.backend
            return True
        return False

    def close(self):
        self._dead = True
        try:
            self._writer.write(encode_message(Shutdown(msg_id="bye")))
            self._writer.flush()
        except Exception:
            pass
        if self._proc is not None:
            try:
                self._proc.terminate()
                self._proc.wait(timeout=5)
            except Exception:
                try:
                    self._proc.kill()
                except Exception:
                    pass
        if self._sock is not None:
            try:
                self._sock.close()
            except Exception:
                pass


def spawn_local_worker(command, label="") -> WorkerHandle:
    try:
        proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
        )
    except OSError as exc:
        raise WorkerSpawnFailed(f"cannot spawn {command!r}: {exc}") from exc
    return WorkerHandle(proc.stdin, proc.stdout, proc=proc, label=label or f"pid{proc.pid}")


def connect_tcp_worker(address: str) -> WorkerHandle:
    host, _, port = address.partition(":")
    try:
        sock = socket.create_connection((host, int(port)), timeout=10)
    except OSError as exc:
        raise WorkerSpawnFailed(f"cannot connect to {address}: {exc}") from exc
    return WorkerHandle(sock.makefile("wb"), sock.makefile("rb"), sock=sock, label=address)


class WorkerPool:
    """Fixed-size pool with exclusive leases and capped respawn."""

    def __init__(self, spec: WorkerPoolSpec, *, factory=None):
        if not spec.command and not spec.addresses and factory is None:
            raise WorkerSpawnFailed("pool spec names neither a command nor addresses")
        self.spec = spec
        self._factory = factory
        self._idle: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._respawns = 0
        self._closed = False
        self._slots = 0
        if spec.addresses:
            for addr in spec.addresses:
                self._idle.put(connect_tcp_worker(addr))
                self._slots += 1
        else:
            for i in range(spec.count):
                self._idle.put(self._spawn(i))
                self._slots += 1

    def _spawn(self, slot) -> WorkerHandle:
        if self._factory is not None:
            return self._factory(slot)
        return spawn_local_worker(self.spec.command, label=f"w{slot}")

    def _respawn_allowed(self) -> bool:
        with self._lock:
            if self._respawns >= self.spec.restart_cap * max(self._slots, 1):
                return False
            self._respawns += 1
            return True

    def lease(self, timeout: float | None = None) -> WorkerHandle:
        """Exclusive, health-checked lease. Dead handles found here are
        replaced under the restart cap."""
        deadline = time.monotonic() + (timeout if timeout is not None else self.spec.lease_timeout)
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise PoolExhausted("no healthy worker within the lease timeout")
            try:
                handle = self._idle.get(timeout=min(remaining, 1.0))
            except queue.Empty:
                continue
            if handle.alive and handle.health_check():
                return handle
            handle.close()
            if self._respawn_allowed():
                try:
                    self._idle.put(self._spawn("r"))
                except WorkerSpawnFailed:
                    pass

    def release(self, handle: WorkerHandle) -> None:
        if self._closed:
            handle.close()
            return
        if handle.alive:
            self._idle.put(handle)
            return
        handle.close()
        if self._respawn_allowed():
            try:
                self._idle.put(self._spawn("r"))
            except WorkerSpawnFailed:
                pass

    def shutdown(self) -> None:
        self._closed = True
        while True:
            try:
                handle = self._idle.get_nowait()
            except queue.Empty:
                break
            handle.close()
