"""Checkpoint component: certification, monotone delivery, state transfer."""
from geobft.checkpoint import CheckpointComponent
from geobft.core import BoundCrypto, CryptoProvider, GroupKey, ReplicaId
from geobft.core.messages import Checkpoint, CpState
from geobft.protocol import ProtocolNode
from geobft.simnet import Simulator, Topology


class CpHost(ProtocolNode):
    def __init__(self, nid, sim, crypto, members, f):
        super().__init__(nid, sim, crypto)
        self.stable_calls = []
        self.cp = CheckpointComponent("ex", 1, members, f, self,
                                      on_stable=lambda s, st: self.stable_calls.append((s, st)))

    def on_payload(self, src, env):
        self.route_checkpoint(src, env)


def build_group(n=3, f=1, seed=1):
    topo = Topology(regions={"X": n}, wan_ms={}, inter_zone_ms=1.0)
    sim = Simulator(topo, seed)
    provider = CryptoProvider()
    members = tuple(ReplicaId("ex", 1, i) for i in range(n))
    provider.register_group(GroupKey("ex", 1), members)
    hosts = []
    for i, nid in enumerate(members):
        host = CpHost(nid, sim, BoundCrypto(provider, nid), members, f)
        sim.register(nid, host, "X", i)
        hosts.append(host)
    return sim, hosts


def test_three_correct_checkpoints_become_stable_everywhere():
    sim, hosts = build_group()
    state = b"state-at-10"
    for host in hosts:
        host.cp.gen_cp(10, state)
    sim.run_until(100)
    for host in hosts:
        assert host.stable_calls == [(10, state)]


def test_wrong_digest_never_certifies():
    sim, hosts = build_group()
    state = b"state-at-10"
    hosts[0].cp.gen_cp(10, state)
    hosts[1].cp.gen_cp(10, state)
    hosts[2].cp.gen_cp(10, b"divergent")  # faulty snapshot
    sim.run_until(200)
    for host in hosts[:2]:
        assert host.stable_calls == [(10, state)]
        # the divergent digest never got f+1 votes
        assert all(st == state for _, st in host.stable_calls)


def test_older_checkpoint_superseded():
    sim, hosts = build_group()
    for host in hosts:
        host.cp.gen_cp(10, b"ten")
    sim.run_until(50)
    for host in hosts:
        host.cp.gen_cp(5, b"five")
    sim.run_until(150)
    for host in hosts:
        assert host.stable_calls == [(10, b"ten")]


def test_certificate_without_state_fetches_from_signer():
    sim, hosts = build_group()
    # host 2 never creates its own snapshot but hears the votes
    hosts[0].cp.gen_cp(10, b"ten")
    hosts[1].cp.gen_cp(10, b"ten")
    sim.run_until(300)
    assert hosts[2].stable_calls == [(10, b"ten")]
    transfers = [r for r in sim.trace.events("cp_transfer")]
    assert transfers


def test_lying_state_server_rejected_then_honest_one_serves():
    sim, hosts = build_group()
    hosts[0].cp.gen_cp(10, b"ten")
    hosts[1].cp.gen_cp(10, b"ten")
    sim.run_until(2)  # votes out, state not yet transferred to host 2
    cert = hosts[0].cp.stable[10][1]
    # a transfer whose state does not match the certified digest is dropped
    bad = CpState("ex", 1, 10, b"lies", cert)
    hosts[2].cp.on_state(hosts[0].nid, bad, hosts[2].group_members_of)
    assert hosts[2].stable_calls == []
    good = CpState("ex", 1, 10, b"ten", cert)
    hosts[2].cp.on_state(hosts[1].nid, good, hosts[2].group_members_of)
    assert hosts[2].stable_calls == [(10, b"ten")]


def test_fetch_polls_until_available():
    sim, hosts = build_group()
    hosts[2].cp.fetch_cp(8)
    sim.run_until(100)
    assert hosts[2].stable_calls == []
    for host in hosts[:2]:
        host.cp.gen_cp(10, b"ten")
    sim.run_until(400)
    assert hosts[2].stable_calls == [(10, b"ten")]


def test_delivery_is_monotone_per_replica():
    sim, hosts = build_group()
    for host in hosts:
        host.cp.gen_cp(10, b"ten")
    sim.run_until(100)
    for host in hosts:
        host.cp.gen_cp(20, b"twenty")
    sim.run_until(200)
    for host in hosts:
        assert host.stable_calls == [(10, b"ten"), (20, b"twenty")]
        assert host.cp.latest_stable() == 20
