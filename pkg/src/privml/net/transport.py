"""How frames reach parties: in-process calls or TCP sockets.

Both transports expose ``request(role, frame) -> reply`` with the same
semantics: an ACK-family reply is returned, NACK raises
:class:`~privml.errors.RemoteError`, silence raises
:class:`~privml.errors.PartyTimeout`.
"""

import logging
import queue
import socket
import socketserver
import threading

from ..errors import FormatError, PartyTimeout, RemoteError
from .party import DEFAULT_TIMEOUT, Party, PartyRole
from .wire import Frame, MsgType, read_frame, write_frame

log = logging.getLogger(__name__)

RETRYABLE = frozenset({MsgType.FETCH})
POLL_INTERVAL = 0.05  # shutdown latency of a listener thread


def _check(role, reply):
    if reply.type is MsgType.NACK:
        raise RemoteError(role.value, reply.get("reason", "NACK"))
    return reply


def parse_address(text):
    host, _, port = str(text).rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


class LocalTransport:
    """Parties living in this process; ``request`` calls ``Party.handle`` directly."""

    def __init__(self, parties=None):
        self.parties = {}
        for p in (parties or []):
            self.add(p)

    def add(self, party):
        self.parties[party.role] = party
        party.transport = self
        return party

    def request(self, role, frame, timeout=None):
        role = PartyRole.parse(role)
        party = self.parties.get(role)
        if party is None:
            raise PartyTimeout(f"no party {role.value} in this process")
        return _check(role, party.handle(frame))

    def close(self):
        pass


class TcpTransport:
    """Client side. Keeps a pool of open connections per party."""

    def __init__(self, addresses, timeout=DEFAULT_TIMEOUT):
        self.addresses = {PartyRole.parse(r): (parse_address(a) if isinstance(a, str) else tuple(a))
                          for r, a in addresses.items()}
        self.timeout = timeout
        self._pools = {role: queue.LifoQueue() for role in self.addresses}
        self._closed = False

    def _connect(self, role):
        try:
            addr = self.addresses[role]
        except KeyError:
            raise PartyTimeout(f"no address for {role.value}") from None
        try:
            sock = socket.create_connection(addr, timeout=self.timeout)
        except OSError as exc:
            raise PartyTimeout(f"{role.value} at {addr[0]}:{addr[1]} unreachable: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return sock

    def _once(self, role, frame, timeout):
        try:
            sock = self._pools[role].get_nowait()
        except (queue.Empty, KeyError):
            sock = self._connect(role)
        try:
            sock.settimeout(timeout)
            write_frame(sock, frame)
            reply = read_frame(sock)
        except socket.timeout as exc:
            sock.close()
            raise PartyTimeout(f"{role.value}: no reply within {timeout}s") from exc
        except (OSError, EOFError, FormatError) as exc:
            sock.close()
            raise PartyTimeout(f"{role.value}: connection failed: {exc}") from exc
        self._pools[role].put(sock)
        return reply

    def request(self, role, frame, timeout=None):
        role = PartyRole.parse(role)
        timeout = self.timeout if timeout is None else timeout
        attempts = 2 if frame.type in RETRYABLE else 1
        for attempt in range(attempts):
            try:
                return _check(role, self._once(role, frame, timeout))
            except PartyTimeout:
                if attempt + 1 == attempts:
                    raise
                log.info("retrying %s to %s", frame.type.name, role.value)

    def close(self):
        for pool in self._pools.values():
            while not pool.empty():
                pool.get_nowait().close()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        party = self.server.party
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        while True:
            try:
                frame = read_frame(self.request)
            except EOFError:
                return
            except (OSError, FormatError) as exc:
                log.warning("%s: dropping connection: %s", party.role.value, exc)
                return
            reply = party.handle(frame)
            try:
                write_frame(self.request, reply)
            except OSError:
                return


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class PartyServer:
    """TCP listener for one party; one thread per connection."""

    def __init__(self, party, host="127.0.0.1", port=0):
        self.party = party
        self._server = _Server((host, port), _Handler)
        self._server.party = party
        self._thread = None

    @property
    def address(self):
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, args=(POLL_INTERVAL,),
                                        name=f"party-{self.party.role.value}", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._server.serve_forever(POLL_INTERVAL)

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self.party.transport is not None:
            self.party.transport.close()


def local_deployment(seed=0, mask_bound=100.0, record=False, roles=None, timeout=DEFAULT_TIMEOUT):
    """Every party in this process behind one :class:`LocalTransport`."""
    roles = roles or [r for r in PartyRole if r is not PartyRole.COORDINATOR]
    transport = LocalTransport()
    for role in roles:
        transport.add(Party(role, seed=seed, mask_bound=mask_bound, record=record, timeout=timeout))
    return transport


class TcpDeployment:
    """Every party on a localhost socket, for tests and single-machine runs."""

    def __init__(self, seed=0, mask_bound=100.0, record=False, roles=None, timeout=DEFAULT_TIMEOUT,
                 host="127.0.0.1"):
        roles = roles or [r for r in PartyRole if r is not PartyRole.COORDINATOR]
        self.parties = {r: Party(r, seed=seed, mask_bound=mask_bound, record=record, timeout=timeout) for r in roles}
        self.servers = {r: PartyServer(p, host, 0) for r, p in self.parties.items()}
        self.addresses = {r: s.address for r, s in self.servers.items()}
        for p in self.parties.values():
            p.transport = TcpTransport(self.addresses, timeout)
        for s in self.servers.values():
            s.start()
        self.transport = TcpTransport(self.addresses, timeout)

    def close(self):
        self.transport.close()
        for s in self.servers.values():
            s.stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


__all__ = [
    "Frame",
    "LocalTransport",
    "PartyServer",
    "TcpDeployment",
    "TcpTransport",
    "local_deployment",
    "parse_address",
]
