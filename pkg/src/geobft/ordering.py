"""The agreement black-box: order / deliver / gc.

Two implementations behind one contract. SequencerOracle is the test
oracle (a designated assigner stamps sequence numbers); MiniBFT is a
minimal three-phase leader-based protocol with timeout-triggered view
change, running among the 3f_a+1 agreement replicas of one region.

Delivery is blocking: the next (s, batch) is handed to the owner only
after the owner signals completion of the previous one, in order and
gap-free above the low-water mark set by gc().
"""
from __future__ import annotations

from typing import Callable, Optional

from .core.messages import (
    ObCommit,
    ObFetch,
    ObNewView,
    ObPrePrepare,
    ObPrepare,
    ObSeqInfo,
    ObViewChange,
    OracleAssign,
    OracleSubmit,
    PreparedProof,
    VcRecord,
)


class OrderingBase:
    """Shared in-order blocking delivery plumbing."""

    def __init__(self, node, members: tuple, f: int, validate: Callable):
        self.node = node
        self.members = members
        self.f = f
        self.validate = validate
        self.deliver_handler: Optional[Callable] = None  # fn(s, batch, done)
        self.ready: dict[int, tuple] = {}
        self.next_deliver = 1
        self.low_water = 0  # everything <= low_water is forgotten
        self._delivering = False

    def order(self, req) -> None:  # pragma: no cover
        raise NotImplementedError

    def gc(self, s_min: int) -> None:
        """After this call no sequence number below s_min is delivered."""
        if s_min <= self.low_water + 1:
            return
        self.low_water = s_min - 1
        self.next_deliver = max(self.next_deliver, s_min)
        for s in [s for s in self.ready if s < s_min]:
            del self.ready[s]

    def _mark_ready(self, s, batch):
        if s <= self.low_water or s in self.ready:
            return
        self.ready[s] = batch
        self._pump()

    def _pump(self):
        if self._delivering or self.deliver_handler is None:
            return
        batch = self.ready.get(self.next_deliver)
        if batch is None:
            return
        s = self.next_deliver
        self._delivering = True
        self.node.sim.trace.add(
            self.node.sim.now, "order_deliver", self.node.nid, "-", "ordering",
            self.node.crypto.digest(batch).hex(), s=s)

        def done():
            self._delivering = False
            self._pump()

        del self.ready[s]
        self.next_deliver = s + 1
        self.deliver_handler(s, batch, done)


class SequencerOracle(OrderingBase):
    """Single designated assigner; isolates architecture bugs from consensus bugs."""

    def __init__(self, node, members, f, validate):
        super().__init__(node, members, f, validate)
        self.assigner = members[0]
        self.next_s = 1
        self.assigned: dict[bytes, int] = {}

    def order(self, req):
        if not self.validate(req):
            return
        if self.node.nid == self.assigner:
            self._assign(req)
        else:
            self.node.send_signed(self.assigner, OracleSubmit(req))

    def _assign(self, req):
        digest = self.node.crypto.digest(req)
        if digest in self.assigned:
            return
        s = self.next_s
        self.next_s += 1
        self.assigned[digest] = s
        batch = (req,)
        msg = OracleAssign(s, batch)
        for peer in self.members:
            if peer != self.node.nid:
                self.node.send_signed(peer, msg)
        self._mark_ready(s, batch)

    def gc(self, s_min):
        super().gc(s_min)
        self.next_s = max(self.next_s, s_min)
        for d in [d for d, s in self.assigned.items() if s < s_min]:
            del self.assigned[d]

    def purge_pending(self, keep):
        pass

    def handle(self, src, msg, sig=None):
        if isinstance(msg, OracleSubmit):
            if self.node.nid == self.assigner and self.validate(msg.req):
                self._assign(msg.req)
        elif isinstance(msg, OracleAssign):
            if src == self.assigner:
                self._mark_ready(msg.s, msg.batch)


class MiniBft(OrderingBase):
    """Leader-based three-phase ordering with view change.

    prepared  = accepted pre-prepare + 2f+1 matching Prepare votes
    committed = 2f+1 matching Commit votes in the proposal's view
    Votes are view-tagged; a replica's newest-view vote supersedes older ones.
    """

    def __init__(self, node, members, f, validate, view_timeout_ms=16.0,
                 batch_cap=16, pipeline=64):
        super().__init__(node, members, f, validate)
        self.view = 0
        self.view_timeout_ms = view_timeout_ms
        self.batch_cap = batch_cap
        self.pipeline = pipeline
        self.next_s = 1
        self.phase: dict[int, dict] = {}
        self.pending: dict[bytes, object] = {}    # digest -> undecided request
        self.assigned: dict[bytes, int] = {}
        self.commit_certs: dict[int, tuple] = {}  # s -> (view, batch, sigs)
        self.vcs: dict[int, dict] = {}
        self.vc_target = 0
        self._timers: set[bytes] = set()
        self._gap_probe = False
        self._vc_rebroadcast = False

    def leader_of(self, view) -> object:
        return self.members[view % len(self.members)]

    @property
    def is_leader(self) -> bool:
        return self.leader_of(self.view) == self.node.nid

    # -- contract ------------------------------------------------------------

    def order(self, req):
        if not self.validate(req):
            return
        digest = self.node.crypto.digest(req)
        if digest in self.pending or digest in self.assigned:
            return
        self.pending[digest] = req
        if self.is_leader:
            self._propose()
        else:
            self.node.send_signed(self.leader_of(self.view), OracleSubmit(req))
        # every replica times undelivered requests, the leader included, so a
        # healed partition can always assemble a view-change quorum
        self._arm_timer(digest)

    def gc(self, s_min):
        super().gc(s_min)
        self.next_s = max(self.next_s, s_min)
        for s in [s for s in self.phase if s < s_min]:
            del self.phase[s]
        for s in [s for s in self.commit_certs if s < s_min]:
            del self.commit_certs[s]
        for d in [d for d, s in self.assigned.items() if s < s_min]:
            del self.assigned[d]

    def purge_pending(self, keep: Callable) -> None:
        """Owner hook: drop pending requests already covered by a checkpoint."""
        for d in [d for d, req in self.pending.items() if not keep(req)]:
            del self.pending[d]
            self._timers.discard(d)

    # -- normal case ----------------------------------------------------------

    def _propose(self):
        while self.pending and self.next_s <= self.low_water + self.pipeline:
            unassigned = [(d, r) for d, r in self.pending.items()
                          if d not in self.assigned]
            if not unassigned:
                return
            take = unassigned[: self.batch_cap]
            batch = tuple(r for _, r in take)
            s = self.next_s
            self.next_s += 1
            for d, _ in take:
                self.assigned[d] = s
            self._broadcast_preprepare(s, batch)

    def _broadcast_preprepare(self, s, batch):
        pp = ObPrePrepare(self.view, s, batch)
        for peer in self.members:
            if peer != self.node.nid:
                self.node.send_signed(peer, pp)
        self._accept_preprepare(self.node.nid, pp, self.node.crypto.sign(pp))

    def _rec(self, s):
        return self.phase.setdefault(s, {
            "view": None, "batch": None, "digest": None, "pp_sig": None,
            "prepares": {}, "commits": {}, "prepared": False, "committed": False,
            "prepare_quorum": (),
        })

    def _accept_preprepare(self, src, msg, sig):
        if msg.view != self.view or src != self.leader_of(msg.view):
            return
        if msg.s <= self.low_water or sig is None or sig.signer != src:
            return
        rec = self._rec(msg.s)
        if rec["committed"]:
            return
        if rec["view"] == msg.view and rec["batch"] is not None:
            return  # at most one proposal accepted per (view, s)
        if rec["view"] is not None and rec["view"] > msg.view:
            return
        if not all(self.validate(r) for r in msg.batch):
            return
        digest = self.node.crypto.digest(msg.batch)
        rec.update(view=msg.view, batch=msg.batch, digest=digest, pp_sig=sig,
                   prepared=False, prepare_quorum=())
        for r in msg.batch:
            d = self.node.crypto.digest(r)
            self.pending.setdefault(d, r)
            self.assigned[d] = msg.s
        prep = ObPrepare(msg.view, msg.s, digest)
        for peer in self.members:
            if peer != self.node.nid:
                self.node.send_signed(peer, prep)
        self._accept_prepare(self.node.nid, prep, self.node.crypto.sign(prep))

    def _accept_prepare(self, src, msg, sig):
        if msg.s <= self.low_water or sig is None or sig.signer != src:
            return
        rec = self._rec(msg.s)
        held = rec["prepares"].get(src)
        if held is None or held[0] < msg.view:
            rec["prepares"][src] = (msg.view, msg.digest, sig)
        self._check_prepared(msg.s)

    def _check_prepared(self, s):
        rec = self.phase.get(s)
        if rec is None or rec["prepared"] or rec["digest"] is None:
            return
        matching = [(who, sig) for who, (v, d, sig) in rec["prepares"].items()
                    if v == rec["view"] and d == rec["digest"]]
        if len(matching) < 2 * self.f + 1:
            return
        matching.sort(key=lambda pair: str(pair[0]))
        rec["prepared"] = True
        rec["prepare_quorum"] = tuple(sig for _, sig in matching[: 2 * self.f + 1])
        com = ObCommit(rec["view"], s, rec["digest"])
        for peer in self.members:
            if peer != self.node.nid:
                self.node.send_signed(peer, com)
        self._accept_commit(self.node.nid, com, self.node.crypto.sign(com))

    def _accept_commit(self, src, msg, sig):
        if msg.s <= self.low_water or sig is None or sig.signer != src:
            return
        rec = self._rec(msg.s)
        held = rec["commits"].get(src)
        if held is None or held[0] < msg.view:
            rec["commits"][src] = (msg.view, msg.digest, sig)
        self._check_committed(msg.s)

    def _check_committed(self, s):
        rec = self.phase.get(s)
        if rec is None or rec["committed"] or rec["digest"] is None:
            return
        matching = [(who, sig) for who, (v, d, sig) in rec["commits"].items()
                    if v == rec["view"] and d == rec["digest"]]
        if len(matching) < 2 * self.f + 1:
            return
        matching.sort(key=lambda pair: str(pair[0]))
        rec["committed"] = True
        sigs = tuple(sig for _, sig in matching[: 2 * self.f + 1])
        self.commit_certs[s] = (rec["view"], rec["batch"], sigs)
        for r in rec["batch"]:
            d = self.node.crypto.digest(r)
            self.pending.pop(d, None)
            self._timers.discard(d)
        self._mark_ready(s, rec["batch"])
        self._probe_gaps()

    # -- catch-up on missed sequences ------------------------------------------

    def _probe_gaps(self):
        if self._gap_probe:
            return
        top = max(self.commit_certs, default=0)
        if top < self.next_deliver or self.next_deliver in self.ready or self._delivering:
            return
        self._gap_probe = True

        def probe():
            self._gap_probe = False
            top_now = max(self.commit_certs, default=0)
            if top_now >= self.next_deliver and self.next_deliver not in self.ready \
                    and not self._delivering:
                req = ObFetch(self.next_deliver, top_now)
                for peer in self.members:
                    if peer != self.node.nid:
                        self.node.send_signed(peer, req)
                self._probe_gaps()

        self.node.after(self.view_timeout_ms, probe)

    def _on_fetch(self, src, msg):
        for s in range(msg.s_from, min(msg.s_to, msg.s_from + 256) + 1):
            cert = self.commit_certs.get(s)
            if cert is not None:
                view, batch, sigs = cert
                self.node.send_signed(src, ObSeqInfo(s, batch, ((view,), sigs)))

    def _on_seqinfo(self, src, msg):
        if msg.s <= self.low_water or msg.s in self.ready:
            return
        if msg.s in self.commit_certs:
            return
        (view,), sigs = msg.commit_sigs
        digest = self.node.crypto.digest(msg.batch)
        want = ObCommit(view, msg.s, digest)
        signers = set()
        for sig in sigs:
            if sig.signer in signers or sig.signer not in self.members:
                return
            if not self.node.crypto.valid_sig(want, sig):
                return
            signers.add(sig.signer)
        if len(signers) < 2 * self.f + 1:
            return
        self.commit_certs[msg.s] = (view, msg.batch, sigs)
        for r in msg.batch:
            d = self.node.crypto.digest(r)
            self.pending.pop(d, None)
            self._timers.discard(d)
        self._mark_ready(msg.s, msg.batch)

    # -- view change ----------------------------------------------------------

    def _arm_timer(self, digest, slack=1.0):
        if digest in self._timers:
            return
        self._timers.add(digest)

        def expired():
            if digest not in self._timers:
                return
            self._timers.discard(digest)
            if digest in self.pending:
                self._start_view_change(max(self.view, self.vc_target) + 1)
                self._arm_timer(digest, slack=2.0)  # escalate, backing off

        self.node.after(self.view_timeout_ms * slack, expired)

    def _prepared_proofs(self):
        proofs = []
        for s, rec in sorted(self.phase.items()):
            if rec["prepared"] and s > self.low_water:
                proofs.append(PreparedProof(rec["view"], s, rec["batch"],
                                            rec["pp_sig"], rec["prepare_quorum"]))
        return tuple(proofs)

    def _start_view_change(self, new_view):
        if new_view <= self.vc_target:
            return
        self.vc_target = new_view
        vc = ObViewChange(new_view, self.low_water, self._prepared_proofs())
        sig = self.node.crypto.sign(vc)
        self.node.sim.trace.add(self.node.sim.now, "view_change_vote",
                                self.node.nid, "-", "ordering", view=new_view)
        for peer in self.members:
            if peer != self.node.nid:
                self.node.send_signed(peer, vc)
        self._on_view_change(self.node.nid, vc, sig)
        if not self._vc_rebroadcast:
            self._vc_rebroadcast = True
            self.node.after(2 * self.view_timeout_ms, self._rebroadcast_vc)

    def _rebroadcast_vc(self):
        # keeps view agreement live across healed partitions
        if self.vc_target <= self.view:
            self._vc_rebroadcast = False
            return
        vc = ObViewChange(self.vc_target, self.low_water, self._prepared_proofs())
        for peer in self.members:
            if peer != self.node.nid:
                self.node.send_signed(peer, vc)
        self.node.after(2 * self.view_timeout_ms, self._rebroadcast_vc)

    def _on_view_change(self, src, msg, sig):
        if msg.view <= self.view or sig is None or sig.signer != src:
            return
        held = self.vcs.setdefault(msg.view, {})
        held.setdefault(src, VcRecord(msg, sig))
        # join the highest view f+1 peers already voted for, so stragglers
        # jump to the front instead of crawling through stale targets
        candidates = [v for v, by in self.vcs.items()
                      if v > max(self.view, self.vc_target) and len(by) >= self.f + 1]
        if candidates:
            self._start_view_change(max(candidates))
        if self.leader_of(msg.view) == self.node.nid and len(held) >= 2 * self.f + 1:
            self._emit_new_view(msg.view)

    def _valid_proof(self, proof: PreparedProof) -> bool:
        if proof.preprepare_sig is None:
            return False
        pp = ObPrePrepare(proof.view, proof.s, proof.batch)
        if proof.preprepare_sig.signer != self.leader_of(proof.view):
            return False
        if not self.node.crypto.valid_sig(pp, proof.preprepare_sig):
            return False
        digest = self.node.crypto.digest(proof.batch)
        prep = ObPrepare(proof.view, proof.s, digest)
        signers = set()
        for sig in proof.prepare_sigs:
            if sig.signer in signers or sig.signer not in self.members:
                return False
            if not self.node.crypto.valid_sig(prep, sig):
                return False
            signers.add(sig.signer)
        return len(signers) >= 2 * self.f + 1

    def _new_view_proposals(self, records):
        """Deterministic re-proposal set: highest-view valid proof per sequence,
        unprepared holes below the top filled with no-op batches."""
        best: dict[int, PreparedProof] = {}
        floor = max(r.vc.low_water for r in records)
        for rec in records:
            for proof in rec.vc.prepared:
                if proof.s <= floor or not self._valid_proof(proof):
                    continue
                cur = best.get(proof.s)
                if cur is None or proof.view > cur.view:
                    best[proof.s] = proof
        if not best:
            return floor, ()
        top = max(best)
        proposals = tuple(
            (s, best[s].batch if s in best else ())
            for s in range(floor + 1, top + 1))
        return floor, proposals

    def _emit_new_view(self, view):
        if self.view >= view:
            return
        by = self.vcs[view]
        records = tuple(by[w] for w in sorted(by, key=str)[: 2 * self.f + 1])
        floor, proposals = self._new_view_proposals(records)
        nv = ObNewView(view, records, proposals)
        for peer in self.members:
            if peer != self.node.nid:
                self.node.send_signed(peer, nv)
        self._adopt_new_view(self.node.nid, nv)

    def _adopt_new_view(self, src, msg):
        if msg.view <= self.view or src != self.leader_of(msg.view):
            return
        signers = set()
        for rec in msg.view_changes:
            if rec.vc.view != msg.view or rec.sig.signer in signers:
                return
            if rec.sig.signer not in self.members:
                return
            if not self.node.crypto.valid_sig(rec.vc, rec.sig):
                return
            signers.add(rec.sig.signer)
        if len(signers) < 2 * self.f + 1:
            return
        floor, expect = self._new_view_proposals(msg.view_changes)
        if expect != msg.proposals:
            return  # leader deviated from the deterministic re-proposal rule
        self.view = msg.view
        self.vc_target = max(self.vc_target, msg.view)
        for stale in [v for v in self.vcs if v <= msg.view]:
            del self.vcs[stale]
        self.node.sim.trace.add(self.node.sim.now, "view_change", self.node.nid,
                                "-", "ordering", view=msg.view)
        top = floor
        for s, _ in msg.proposals:
            top = max(top, s)
        proposed_seqs = {s for s, _ in msg.proposals}
        for d in [d for d, s in self.assigned.items()
                  if s not in self.commit_certs and s not in proposed_seqs]:
            del self.assigned[d]
        # abandoned proposals above the re-proposal top would leave holes:
        # proposing resumes contiguously (nothing can be committed above top)
        self.next_s = max(top, max(self.commit_certs, default=0)) + 1
        if self.is_leader:
            # re-proposals are real pre-prepares in the new view
            for s, batch in msg.proposals:
                if not self.phase.get(s, {}).get("committed"):
                    self._broadcast_preprepare(s, batch)
            self._propose()
        else:
            for d, req in list(self.pending.items()):
                self.node.send_signed(self.leader_of(msg.view), OracleSubmit(req))
                self._timers.discard(d)
                self._arm_timer(d)

    # -- dispatch ---------------------------------------------------------------

    def handle(self, src, msg, sig=None):
        if src not in self.members:
            return
        if isinstance(msg, OracleSubmit):
            if self.validate(msg.req):
                d = self.node.crypto.digest(msg.req)
                if d not in self.assigned:
                    self.pending.setdefault(d, msg.req)
                    if self.is_leader:
                        self._propose()
        elif isinstance(msg, ObPrePrepare):
            self._accept_preprepare(src, msg, sig)
        elif isinstance(msg, ObPrepare):
            self._accept_prepare(src, msg, sig)
        elif isinstance(msg, ObCommit):
            self._accept_commit(src, msg, sig)
        elif isinstance(msg, ObViewChange):
            self._on_view_change(src, msg, sig)
        elif isinstance(msg, ObNewView):
            self._adopt_new_view(src, msg)
        elif isinstance(msg, ObFetch):
            self._on_fetch(src, msg)
        elif isinstance(msg, ObSeqInfo):
            self._on_seqinfo(src, msg)
