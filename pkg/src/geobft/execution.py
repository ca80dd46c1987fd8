"""Execution replica state machine.

Validates and forwards client requests into the request channel, pulls
the committed order from the commit channel, executes against the
deterministic application with at-most-once semantics, replies when it
is the client's contact group, serves weak reads directly, and
checkpoints every k_e sequence numbers.
"""
from __future__ import annotations

from .application import KvApplication, PLACEHOLDER, RESUBMIT
from .checkpoint import CheckpointComponent
from .core import Mac, hash_bytes
from .core.codec import canonical_decode, canonical_encode
from .core.messages import (
    AddGroup,
    AdminItem,
    Execute,
    FullReq,
    Placeholder,
    ReadWeak,
    RegistryInfo,
    RemoveGroup,
    Request,
    Result,
    Write,
)
from .irmc.base import TooOld
from .protocol import ProtocolNode, RegistryResolver


class ExecutionReplica(ProtocolNode):
    def __init__(self, nid, sim, crypto, group: int, group_members: tuple,
                 authorized: frozenset, f_e: int, f_a: int, ag_members: tuple,
                 k_e: int = 10, cp_gossip_ms: float = 10.0,
                 fetch_poll_ms: float = 25.0):
        super().__init__(nid, sim, crypto)
        self.group = group
        self.group_members = group_members
        self.authorized = authorized
        self.f_e = f_e
        self.k_e = k_e
        self.s_n = 0
        self.app = KvApplication()
        self.u: dict[int, tuple] = {}  # client -> (t_c, reply bytes)
        self.t: dict[int, int] = {}    # client -> highest forwarded counter
        self.req_send = None           # sender endpoint, wired by the runtime
        self.commit_recv = None        # receiver endpoint, wired by the runtime
        self._pulling = False
        self.registry = RegistryResolver(self, ag_members, f_a)
        self._known_groups: dict[int, tuple] = {}
        self.cp = CheckpointComponent(
            "ex", group, group_members, f_e, self,
            on_stable=self.on_stable_execution_cp,
            gossip_ms=cp_gossip_ms, fetch_poll_ms=fetch_poll_ms)

    def start(self):
        super().start()
        self._pull()

    # -- client-facing ---------------------------------------------------------

    def on_payload(self, src, env):
        msg = env.payload
        if self.route_channel(src, env) or self.route_checkpoint(src, env):
            return
        if isinstance(msg, (Write, AddGroup, RemoveGroup)):
            self.on_write_request(src, msg, env)
        elif isinstance(msg, ReadWeak):
            self.on_weak_read(src, msg, env)
        elif isinstance(msg, RegistryInfo):
            self.registry.on_info(src, msg)

    def _client_auth_ok(self, msg, env, need_sig: bool) -> bool:
        client = msg.client
        if client not in self.authorized:
            return False
        if not any(isinstance(a, Mac) and a.src == client for a in env.auth):
            return False
        if need_sig:
            sig = env.first_sig()
            if sig is None or sig.signer != client:
                return False
        return True

    def on_write_request(self, src, msg, env):
        """Writes, strong reads and admin reconfiguration requests."""
        # MAC first, then the client signature; silently drop on failure
        if not self._client_auth_ok(msg, env, need_sig=True):
            return
        c = msg.client.index
        if msg.t_c <= self.t.get(c, 0):
            held = self.u.get(c)
            if held is not None and held[0] == msg.t_c:
                reply = held[1]
                if reply == PLACEHOLDER:
                    # skipped group-specific read: client must resubmit
                    self.send_mac(msg.client,
                                  Result(msg.client, msg.t_c, RESUBMIT, resubmit=True))
                else:
                    self.send_mac(msg.client, Result(msg.client, msg.t_c, reply))
            return  # silent on a retry with no result yet
        self.t[c] = msg.t_c
        if self.req_send is None:
            return
        request = Request(msg, env.first_sig(), self.group)
        self.req_send.move_window(c, msg.t_c)
        self.req_send.send(c, msg.t_c, request)

    def on_weak_read(self, src, msg: ReadWeak, env):
        if not self._client_auth_ok(msg, env, need_sig=False):
            return
        reply = self.app.execute_readonly(msg.op)
        self.sim.trace.add(self.sim.now, "weak_serve", self.nid, msg.client, "read",
                           s_n=self.s_n, nonce=msg.nonce)
        self.send_mac(msg.client, Result(msg.client, msg.nonce, reply, weak=True))

    # -- the committed order -----------------------------------------------------

    def _pull(self):
        if self._pulling or self.commit_recv is None:
            return
        self._pulling = True
        self.commit_recv.receive(0, self.s_n + 1, self._got)

    def _got(self, outcome):
        self._pulling = False
        if isinstance(outcome, TooOld):
            if outcome.start <= self.s_n + 1:
                self._pull()
            else:
                self._seek_checkpoint(outcome.start - 1)
            return
        payload = outcome.payload
        if not isinstance(payload, Execute) or payload.s != self.s_n + 1:
            # quorum vouched for a malformed batch; skip past it
            self.s_n += 1
            self._pull()
            return
        self._apply(payload)
        self._pull()

    def _apply(self, execute: Execute):
        s = execute.s
        for idx, item in enumerate(execute.items):
            if isinstance(item, FullReq):
                self._apply_full(s, idx, item)
            elif isinstance(item, Placeholder):
                c = item.client.index
                if item.t_c > self.u.get(c, (0,))[0]:
                    self.u[c] = (item.t_c, PLACEHOLDER)
            elif isinstance(item, AdminItem):
                self._apply_admin(item)
        self.s_n = s
        if s % self.k_e == 0:
            self.cp.gen_cp(s, self._snapshot())
            self._trace_state()

    def _apply_full(self, s, idx, item: FullReq):
        write = item.write
        if not isinstance(write, Write):
            return
        c = write.client.index
        if write.t_c <= self.u.get(c, (0,))[0]:
            return  # duplicate: executed at most once per counter
        reply = self.app.execute_readonly(write.op) if write.read_only \
            else self.app.execute(write.op)
        self.u[c] = (write.t_c, reply)
        self.sim.trace.add(
            self.sim.now, "execute", self.nid, "-",
            "read" if write.read_only else "write",
            hash_bytes(reply).hex(), s=s, idx=idx, c=c, t_c=write.t_c,
            op=write.op.hex(), wr=canonical_encode(write).hex(),
            sig=canonical_encode(item.write_sig).hex())
        if item.contact == self.group:
            self.send_mac(write.client, Result(write.client, write.t_c, reply))

    def _apply_admin(self, item: AdminItem):
        c = item.client.index
        if item.t_c <= self.u.get(c, (0,))[0]:
            return
        reply = b"ok:" + item.action.encode() if item.ok \
            else b"err:" + item.detail.encode()
        self.u[c] = (item.t_c, reply)
        if item.contact == self.group:
            self.send_mac(item.client, Result(item.client, item.t_c, reply))

    # -- checkpointing ------------------------------------------------------------

    def _snapshot(self) -> bytes:
        u_sorted = tuple((c, tc, r) for c, (tc, r) in sorted(self.u.items()))
        return canonical_encode((self.s_n, u_sorted, self.app.snapshot()))

    def _trace_state(self):
        full = hash_bytes(self._snapshot())
        projected = canonical_encode(
            (self.s_n, tuple((c, tc) for c, (tc, _) in sorted(self.u.items())),
             self.app.snapshot()))
        self.sim.trace.add(self.sim.now, "state_digest", self.nid, "-", "ex",
                           full.hex(), s=self.s_n,
                           projected=hash_bytes(projected).hex())

    def on_stable_execution_cp(self, s: int, state: bytes):
        if self.commit_recv is not None:
            self.commit_recv.move_window(0, s + 1)
        if s > self.s_n:
            self.s_n, u_sorted, app_bytes = canonical_decode(state)
            self.u = {c: (tc, r) for c, tc, r in u_sorted}
            self.app.restore(app_bytes)
            self._trace_state()
        self._pull()

    def _seek_checkpoint(self, s_min: int):
        s_min = max(1, s_min)
        self.cp.fetch_cp(s_min)
        # widen the search across groups once the registry answers
        def with_registry(version, groups):
            peers = []
            for gid, region, members in groups:
                if gid != self.group:
                    peers.extend(members)
            self.cp.add_fetch_peers(peers)
        self.registry.resolve(with_registry)
