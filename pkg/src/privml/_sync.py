"""Tag-matched meeting points for two-party rounds."""

import threading

from .errors import ProtocolError


class Mailbox:
    """Messages keyed by tag; ``take`` blocks until the tag is delivered."""

    def __init__(self, timeout=30.0):
        self.timeout = timeout
        self._cond = threading.Condition()
        self._box = {}

    def deliver(self, tag, payload):
        with self._cond:
            self._box[tag] = payload
            self._cond.notify_all()

    def take(self, tag, timeout=None):
        timeout = self.timeout if timeout is None else timeout
        with self._cond:
            if not self._cond.wait_for(lambda: tag in self._box, timeout):
                raise ProtocolError(f"no message for {tag!r} within {timeout}s")
            return self._box.pop(tag)


class Rendezvous:
    """Collects one payload per participant for a tag, computes once, fans out.

    ``compute`` receives ``{participant: payload}`` and returns
    ``{participant: result}``. An exception raised by ``compute`` is
    re-raised in every waiting participant.
    """

    def __init__(self, participants, timeout=30.0):
        self.participants = frozenset(participants)
        self.timeout = timeout
        self._cond = threading.Condition()
        self._pending = {}
        self._done = {}

    def meet(self, tag, who, payload, compute):
        if who not in self.participants:
            raise ProtocolError(f"{who!r} is not a participant")
        with self._cond:
            slot = self._pending.setdefault(tag, {})
            if who in slot or (tag in self._done and who in self._done[tag]):
                raise ProtocolError(f"duplicate submission by {who!r} for round {tag!r}")
            slot[who] = payload
            if set(slot) == self.participants:
                del self._pending[tag]
                try:
                    results = compute(slot)
                except Exception as exc:
                    results = {p: exc for p in self.participants}
                self._done[tag] = dict(results)
                self._cond.notify_all()
            ok = self._cond.wait_for(lambda: tag in self._done and who in self._done[tag], self.timeout)
            if not ok:
                self._pending.get(tag, {}).pop(who, None)
                raise ProtocolError(f"round {tag!r}: peers never arrived")
            result = self._done[tag].pop(who)
            if not self._done[tag]:
                del self._done[tag]
        if isinstance(result, Exception):
            raise result
        return result
