"""Shared language of inter-regional message channels.

Subchannel windows, the quorum/window arithmetic both implementations
reuse, send/receive outcome classification and the endpoint plumbing
common to receiver-side and sender-side collection.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from ..core.messages import ChannelId


@dataclass
class SubchannelWindow:
    """Contiguous position interval [start, start+capacity-1]; start never decreases."""

    start: int = 1
    capacity: int = 1

    @property
    def end(self) -> int:
        return self.start + self.capacity - 1

    def advance_to(self, p: int) -> bool:
        if p > self.start:
            self.start = p
            return True
        return False

    def covers(self, p: int) -> bool:
        return self.start <= p <= self.end


def kth_largest(values, k: int) -> int:
    """k-th largest (1-based) of an iterable of positions."""
    ordered = sorted(values, reverse=True)
    return ordered[k - 1]


def sender_window_after_moves(requested: dict, f_r: int, current: int) -> int:
    """New sender window start given receiver move requests.

    The (f_r+1)-highest requested position, once at least f_r+1 receivers
    have asked; never below the current start.
    """
    if len(requested) < f_r + 1:
        return current
    return max(current, kth_largest(requested.values(), f_r + 1))


def receiver_window_after_sender_moves(requested: dict, f_s: int, current: int) -> int:
    """New receiver window start given sender move requests.

    Fixed to the conservative end of the permitted range: exactly the
    (f_s+1)-largest requested position, clamped to never move backwards.
    """
    if len(requested) < f_s + 1:
        return current
    return max(current, kth_largest(requested.values(), f_s + 1))


BLOCKED = "blocked"
DROP = "drop"
TRANSMIT = "transmit"


def classify_send(p: int, window: SubchannelWindow) -> str:
    if p > window.end:
        return BLOCKED
    if p < window.start:
        return DROP
    return TRANSMIT


@dataclass(frozen=True)
class TooOld:
    start: int


@dataclass(frozen=True)
class Delivered:
    payload: object


def classify_receive(p: int, window: SubchannelWindow) -> Optional[TooOld]:
    """TooOld when the window has passed p; otherwise the caller waits."""
    if p < window.start:
        return TooOld(window.start)
    return None


@dataclass(frozen=True)
class ChannelConfig:
    channel: ChannelId
    senders: tuple
    receivers: tuple
    f_s: int
    f_r: int
    capacity: int
    retransmit_ms: float = 0.0
    progress_ms: float = 50.0
    collector_timeout_ms: float = 200.0


class EndpointBase:
    """State shared by all endpoint variants.

    An endpoint is owned by exactly one replica node; the node routes
    verified channel messages to handle() and gives the endpoint its
    authenticated transport and timers.
    """

    def __init__(self, cfg: ChannelConfig, node):
        self.cfg = cfg
        self.node = node
        self.windows: dict[int, SubchannelWindow] = {}
        self.closed = False
        self.on_new_subchannel: Optional[Callable[[int], None]] = None
        self._known_sc: set[int] = set()

    def window(self, sc: int) -> SubchannelWindow:
        win = self.windows.get(sc)
        if win is None:
            win = self.windows[sc] = SubchannelWindow(1, self.cfg.capacity)
        return win

    def _note_subchannel(self, sc: int) -> None:
        if sc not in self._known_sc:
            self._known_sc.add(sc)
            if self.on_new_subchannel is not None:
                self.on_new_subchannel(sc)

    def _trace_move(self, sc: int, start: int) -> None:
        self.node.sim.trace.add(self.node.sim.now, "win_move", self.node.nid, "-",
                                str(self.cfg.channel), sc=sc, start=start)

    def close(self) -> None:
        self.closed = True


class SenderEndpoint(EndpointBase):
    """Interface: send(sc, p, m, on_complete), move_window(sc, p)."""

    pending: dict

    def send(self, sc, p, m, on_complete=None):  # pragma: no cover
        raise NotImplementedError

    def move_window(self, sc, p):  # pragma: no cover
        raise NotImplementedError

    def close(self) -> None:
        # blocked sends resolve as no-ops so fan-out joins cannot deadlock
        super().close()
        for sc, waiting in getattr(self, "pending", {}).items():
            for _, _, done in waiting:
                if done is not None:
                    done()
            waiting.clear()


class ReceiverEndpoint(EndpointBase):
    """Interface: receive(sc, p, callback), move_window(sc, p)."""

    def receive(self, sc, p, callback):  # pragma: no cover
        raise NotImplementedError

    def move_window(self, sc, p):  # pragma: no cover
        raise NotImplementedError
