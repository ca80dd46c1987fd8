"""Endpoint-level channel behavior for both implementations."""
import pytest

from geobft.core.messages import ChMove, ChSend
from geobft.irmc.base import Delivered, TooOld
from tests.conftest import Channel


def collect(results):
    def cb(outcome):
        results.append(outcome)
    return cb


class TestRcDelivery:
    def test_quorum_of_two_delivers(self, rc_channel):
        ch = rc_channel
        for ep in ch.s_eps:
            ep.send(7, 1, b"m")
        got = []
        for ep in ch.r_eps:
            ep.receive(7, 1, collect(got))
        ch.run()
        assert len(got) == 4
        assert all(isinstance(o, Delivered) and o.payload == b"m" for o in got)

    def test_single_faulty_sender_never_delivers(self, rc_channel):
        ch = rc_channel
        ch.s_eps[0].send(7, 1, b"evil")
        got = []
        ch.r_eps[0].receive(7, 1, collect(got))
        ch.run()
        assert got == []

    def test_send_beyond_window_blocks_until_moves(self, rc_channel):
        ch = rc_channel
        done = []
        ch.s_eps[0].send(0, 50, b"x", on_complete=lambda: done.append(50))
        ch.run(200)
        assert done == []
        for ep in ch.r_eps:
            ep.move_window(0, 50)
        ch.run(400)
        assert done == [50]

    def test_equivocation_first_send_wins(self, rc_channel):
        ch = rc_channel
        recv = ch.r_eps[0]
        sender = ch.senders[0]
        recv.handle(sender, ChSend(ch.cfg.channel, 0, 1, b"first"))
        recv.handle(sender, ChSend(ch.cfg.channel, 0, 1, b"second"))
        slot = recv.store[0][1]
        assert slot[sender][1] == b"first"

    def test_faulty_client_split_quorums(self, rc_channel):
        # two correct senders forward different requests for the same slot; the
        # third (faulty) echoes one version to half the receivers, the other
        # version to the rest: receivers may deliver either, but each delivered
        # value was vouched for by a correct sender
        ch = rc_channel
        ch.s_eps[0].send(9, 1, b"R1")
        ch.s_eps[1].send(9, 1, b"R2")
        faulty = ch.nodes[ch.senders[2]]
        for i, r in enumerate(ch.receivers):
            payload = b"R1" if i % 2 == 0 else b"R2"
            faulty.send_signed(r, ChSend(ch.cfg.channel, 9, 1, payload))
        got = {}
        for i, ep in enumerate(ch.r_eps):
            ep.receive(9, 1, collect(got.setdefault(i, [])))
        ch.run()
        values = {outs[0].payload for outs in got.values() if outs}
        assert values and values <= {b"R1", b"R2"}


class TestRcMoves:
    def test_receiver_quorum_moves_sender_windows(self, rc_channel):
        ch = rc_channel
        for ep in ch.r_eps:
            ep.move_window(0, 11)
        ch.run()
        for ep in ch.s_eps:
            assert ep.window(0).start == 11
            assert ep.window(0).end == 11 + ch.cfg.capacity - 1

    def test_single_receiver_move_changes_nothing(self, rc_channel):
        ch = rc_channel
        ch.r_eps[0].move_window(0, 11)
        ch.run()
        for ep in ch.s_eps:
            assert ep.window(0).start == 1

    def test_sender_moves_resolve_pending_receive_too_old(self, rc_channel):
        ch = rc_channel
        got = []
        ch.r_eps[0].receive(3, 5, collect(got))
        ch.s_eps[0].move_window(3, 8)
        ch.s_eps[1].move_window(3, 8)
        ch.run()
        assert got == [TooOld(8)]
        assert ch.r_eps[0].window(3).start == 8

    def test_replayed_move_ignored(self, rc_channel):
        ch = rc_channel
        recv = ch.r_eps[0]
        sender = ch.senders[0]
        recv.handle(sender, ChMove(ch.cfg.channel, 0, 9))
        assert recv.sender_moves[0][sender] == 9
        recv.handle(sender, ChMove(ch.cfg.channel, 0, 4))
        assert recv.sender_moves[0][sender] == 9


class TestScDelivery:
    def test_one_certificate_per_receiver(self, sc_channel):
        ch = sc_channel
        for ep in ch.s_eps:
            ep.send(0, 1, b"m")
        got = []
        for ep in ch.r_eps:
            ep.receive(0, 1, collect(got))
        ch.run()
        assert len(got) == 4
        assert all(o.payload == b"m" for o in got)
        certs = [r for r in ch.sim.trace.records
                 if r[1] == "deliver" and r[4] == "ChCert"]
        assert len(certs) == len(ch.receivers)

    def test_divergent_share_still_certifies(self, sc_channel):
        ch = sc_channel
        ch.s_eps[0].send(0, 1, b"m")
        ch.s_eps[1].send(0, 1, b"m")
        ch.s_eps[2].send(0, 1, b"different")
        got = []
        ch.r_eps[0].receive(0, 1, collect(got))
        ch.run()
        assert [o.payload for o in got] == [b"m"]

    def test_bad_inner_share_rejects_whole_certificate(self, sc_channel):
        ch = sc_channel
        recv = ch.r_eps[0]
        node = ch.nodes[ch.senders[0]]
        from geobft.core.messages import ChCert, ChShare
        sm_digest = node.crypto.digest(ChSend(ch.cfg.channel, 0, 1, b"m"))
        good = node.crypto.sign(ChShare(ch.cfg.channel, 0, 1, sm_digest))
        bad = node.crypto.sign(b"unrelated")
        cert = ChCert(ch.cfg.channel, 0, 1, b"m", (good, bad))
        recv._on_cert(ch.senders[0], cert)
        assert recv.delivered.get(0, {}).get(1) is None

    def test_trusted_progress_claim_is_second_largest(self, sc_channel):
        recv = sc_channel.r_eps[0]
        recv.progress_claims[0] = {sc_channel.senders[0]: 5,
                                   sc_channel.senders[1]: 5,
                                   sc_channel.senders[2]: 1}
        assert recv._trusted_claim(0) == 5
        recv.progress_claims[1] = {sc_channel.senders[0]: 9}
        assert recv._trusted_claim(1) == 0

    def test_withholding_collector_switched_after_timeout(self):
        from geobft.simnet import FaultPlan, NodeFault
        plan = FaultPlan()
        plan.faults[__import__("geobft.core", fromlist=["ReplicaId"]).ReplicaId("ex", 1, 0)] = \
            NodeFault("byzantine", strategy="lying-collector")
        ch = Channel("sc", fault_plan=plan, seed=5)
        for ep in ch.s_eps:
            ep.send(0, 1, b"m")
        got = {}
        for i, ep in enumerate(ch.r_eps):
            ep.receive(0, 1, collect(got.setdefault(i, [])))
        ch.run(4000)
        # receiver 0 initially selects sender 0 (the withholding collector)
        assert all(outs and outs[0].payload == b"m" for outs in got.values())
        switches = [r for r in ch.sim.trace.records if r[1] == "collector_switch"]
        assert switches

    def test_stale_move_counter_ignored(self, sc_channel):
        ch = sc_channel
        snd = ch.s_eps[0]
        r = ch.receivers[0]
        snd._on_move(r, ChMove(ch.cfg.channel, 0, 5, collector=0, counter=3))
        assert snd.recv_moves[0][r] == 5
        snd._on_move(r, ChMove(ch.cfg.channel, 0, 9, collector=0, counter=3))
        assert snd.recv_moves[0][r] == 5

    def test_receiver_move_quorum_advances_sender_windows(self, sc_channel):
        ch = sc_channel
        for ep in ch.r_eps:
            ep.move_window(0, 11)
        ch.run()
        for ep in ch.s_eps:
            assert ep.window(0).start == 11


class TestWideAreaEconomy:
    @pytest.mark.parametrize("variant,payload_kind,per_payload", [
        ("rc", "ChSend", 12), ("sc", "ChCert", 3)])
    def test_payload_transmissions_per_delivery(self, variant, payload_kind,
                                                per_payload):
        ch = Channel(variant, n_s=4, n_r=3, f_s=1, f_r=1, seed=9)
        positions = 3
        done = {}
        for p in range(1, positions + 1):
            for ep in ch.s_eps:
                ep.send(0, p, b"pay%d" % p)
            for i, ep in enumerate(ch.r_eps):
                ep.receive(0, p, collect(done.setdefault((i, p), [])))
        ch.run(1500)
        assert all(v for v in done.values())
        sent = [r for r in ch.sim.trace.records
                if r[1] == "net_send" and r[4] == payload_kind]
        assert len(sent) == per_payload * positions
