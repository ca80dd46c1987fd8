"""Shared plumbing for protocol participants: payload dispatch and the
BFT registry-resolution helper used by clients and execution replicas."""
from __future__ import annotations

from typing import Callable

from .core import GroupKey
from .core.messages import (
    Checkpoint,
    ChCert,
    ChMove,
    ChProgress,
    ChSend,
    ChShare,
    CpAnnounce,
    CpQuery,
    CpState,
    RegistryInfo,
    RegistryQuery,
)
from .simnet import Node

CHANNEL_MSGS = (ChSend, ChMove, ChShare, ChCert, ChProgress)
CP_MSGS = (Checkpoint, CpAnnounce, CpQuery, CpState)


class ProtocolNode(Node):
    """Routes verified payloads to channel endpoints and the checkpoint component."""

    def __init__(self, nid, sim, crypto):
        super().__init__(nid, sim, crypto)
        self.channels: dict = {}  # ChannelId -> endpoint
        self.cp = None

    def route_channel(self, src, env) -> bool:
        msg = env.payload
        if not isinstance(msg, CHANNEL_MSGS):
            return False
        endpoint = self.channels.get(msg.channel)
        if endpoint is not None:
            endpoint.handle(src, msg, env.first_sig())
        return True

    def route_checkpoint(self, src, env) -> bool:
        msg = env.payload
        if self.cp is None or not isinstance(msg, CP_MSGS):
            return False
        if isinstance(msg, Checkpoint):
            self.cp.on_checkpoint_msg(src, msg, env.first_sig())
        elif isinstance(msg, CpAnnounce):
            self.cp.on_announce(src, msg)
        elif isinstance(msg, CpQuery):
            self.cp.on_query(src, msg)
        elif isinstance(msg, CpState):
            self.cp.on_state(src, msg, self.group_members_of)
        return True

    def group_members_of(self, group: int) -> tuple:
        """Membership oracle for validating transferred checkpoint certificates."""
        key = GroupKey("ex" if group != 0 else "ag", group)
        return tuple(self.crypto.provider.group_members(key))


class RegistryResolver:
    """Collects f_a+1 matching signed registry answers from agreement replicas."""

    def __init__(self, node, ag_members: tuple, f_a: int, retry_ms: float = 50.0):
        self.node = node
        self.ag_members = ag_members
        self.f_a = f_a
        self.retry_ms = retry_ms
        self.nonce = 0
        self.answers: dict[int, dict] = {}
        self.waiting: dict[int, Callable] = {}

    def resolve(self, cb: Callable[[int, tuple], None]) -> None:
        """cb(version, groups) once f_a+1 agreement replicas agree."""
        self.nonce += 1
        nonce = self.nonce
        self.waiting[nonce] = cb
        self.answers[nonce] = {}
        self._ask(nonce)

    def _ask(self, nonce):
        if nonce not in self.waiting:
            return
        query = RegistryQuery(nonce)
        for peer in self.ag_members:
            self.node.send_mac(peer, query)
        self.node.after(self.retry_ms, lambda: self._ask(nonce))

    def on_info(self, src, msg: RegistryInfo) -> None:
        if src not in self.ag_members or msg.nonce not in self.waiting:
            return
        held = self.answers[msg.nonce]
        held[src] = (msg.version, msg.groups)
        counts: dict = {}
        for answer in held.values():
            counts[answer] = counts.get(answer, 0) + 1
        for (version, groups), n in counts.items():
            if n >= self.f_a + 1:
                cb = self.waiting.pop(msg.nonce)
                del self.answers[msg.nonce]
                cb(version, groups)
                return
