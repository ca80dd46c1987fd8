"""Flat BFT baseline: one replica per region, consensus over WAN links.

Reuses the MiniBFT ordering implementation with clients attached
directly to all replicas, giving the single-set-of-replicas comparison
point without a hierarchical protocol.
"""
from __future__ import annotations

from .application import KvApplication
from .core import Mac
from .core.messages import ReadWeak, Request, Result, Write
from .ordering import MiniBft
from .protocol import ProtocolNode


class FlatBftReplica(ProtocolNode):
    def __init__(self, nid, sim, crypto, members: tuple, f: int,
                 authorized: frozenset, view_timeout_ms: float = 300.0):
        super().__init__(nid, sim, crypto)
        self.members = members
        self.f = f
        self.authorized = authorized
        self.app = KvApplication()
        self.u: dict[int, tuple] = {}
        self.ordering = MiniBft(self, members, f, self._validate,
                                view_timeout_ms=view_timeout_ms)
        self.ordering.deliver_handler = self._deliver

    def _validate(self, req) -> bool:
        if not isinstance(req, Request) or not isinstance(req.inner, Write):
            return False
        if req.inner.client not in self.authorized:
            return False
        sig = req.inner_sig
        return sig is not None and sig.signer == req.inner.client \
            and self.crypto.valid_sig(req.inner, sig)

    def on_payload(self, src, env):
        msg = env.payload
        if isinstance(msg, Write):
            self._on_write(src, msg, env)
        elif isinstance(msg, ReadWeak):
            self._on_weak(src, msg, env)
        else:
            self.ordering.handle(src, msg, env.first_sig())

    def _client_auth_ok(self, msg, env, need_sig):
        if msg.client not in self.authorized:
            return False
        if not any(isinstance(a, Mac) and a.src == msg.client for a in env.auth):
            return False
        if need_sig:
            sig = env.first_sig()
            if sig is None or sig.signer != msg.client:
                return False
        return True

    def _on_write(self, src, msg: Write, env):
        if not self._client_auth_ok(msg, env, need_sig=True):
            return
        c = msg.client.index
        held = self.u.get(c)
        if held is not None and msg.t_c <= held[0]:
            if held[0] == msg.t_c:
                self.send_mac(msg.client, Result(msg.client, msg.t_c, held[1]))
            return
        self.ordering.order(Request(msg, env.first_sig(), 0))

    def _on_weak(self, src, msg: ReadWeak, env):
        if not self._client_auth_ok(msg, env, need_sig=False):
            return
        reply = self.app.execute_readonly(msg.op)
        self.send_mac(msg.client, Result(msg.client, msg.nonce, reply, weak=True))

    def _deliver(self, s, batch, done):
        for req in batch:
            write = req.inner
            c = write.client.index
            if write.t_c <= self.u.get(c, (0,))[0]:
                continue
            reply = self.app.execute_readonly(write.op) if write.read_only \
                else self.app.execute(write.op)
            self.u[c] = (write.t_c, reply)
            self.sim.trace.add(
                self.sim.now, "execute", self.nid, "-",
                "read" if write.read_only else "write",
                s=s, c=c, t_c=write.t_c, op=write.op.hex())
            self.send_mac(write.client, Result(write.client, write.t_c, reply))
        if s % 16 == 0 and s > 16:
            # executed state doubles as the checkpoint at baseline scale; a
            # 16-sequence tail keeps gap-fetch possible while the proposal
            # pipeline (low_water + 64) never runs dry
            self.ordering.gc(s - 16)
        done()
