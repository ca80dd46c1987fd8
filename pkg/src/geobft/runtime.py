"""Builds a running system from a scenario and drives it to completion."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .agreement import AgreementReplica
from .client import AdminAction, ClientNode, Workload
from .core import (
    AGREEMENT,
    BoundCrypto,
    CryptoProvider,
    EXECUTION,
    GroupKey,
    ReplicaId,
)
from .core.messages import ChannelId
from .execution import ExecutionReplica
from .flatbft import FlatBftReplica
from .irmc import VARIANTS
from .irmc.base import ChannelConfig
from .ordering import MiniBft, SequencerOracle
from .scenario import ScenarioConfig
from .simnet import Simulator


class EndpointFactory:
    """Builds the request/commit channel endpoints for one IRMC variant."""

    def __init__(self, variant: str, cfg: ScenarioConfig):
        self.sender_cls, self.receiver_cls = VARIANTS[variant]
        self.cfg = cfg

    def channel_configs(self, gid: int, group_members: tuple):
        p = self.cfg.params
        fp = self.cfg.fault_params
        ag = self.cfg.agreement_members()
        req_fs, req_fr = fp.request_channel()
        com_fs, com_fr = fp.commit_channel()
        common = dict(
            retransmit_ms=p["retransmit_ms"],
            progress_ms=p["progress_ms"],
            collector_timeout_ms=p["collector_timeout_ms"],
        )
        req = ChannelConfig(ChannelId("req", gid), tuple(group_members), ag,
                            req_fs, req_fr, capacity=p["req_capacity"], **common)
        com = ChannelConfig(ChannelId("commit", gid), ag, tuple(group_members),
                            com_fs, com_fr, capacity=p["commit_capacity"], **common)
        return req, com

    def sender(self, channel_cfg, node):
        return self.sender_cls(channel_cfg, node)

    def receiver(self, channel_cfg, node):
        return self.receiver_cls(channel_cfg, node)


@dataclass
class System:
    sim: Simulator
    cfg: ScenarioConfig
    agreement: list
    executions: dict   # gid -> list of ExecutionReplica
    clients: list
    admin: Optional[ClientNode]
    flat: list

    def run(self):
        self.sim.run_until(self.cfg.duration_ms)
        return self.sim.trace


def build(cfg: ScenarioConfig, seed: int, mode: Optional[str] = None,
          irmc: Optional[str] = None) -> System:
    mode = mode or cfg.mode
    irmc = irmc or cfg.irmc
    sim = Simulator(cfg.topology, seed, cfg.fault_plan)
    provider = CryptoProvider()

    clients = cfg.client_ids()
    admin_id = cfg.admin_id
    authorized = frozenset(clients) | {admin_id}
    for c in list(authorized):
        provider.register_principal(c)

    if mode == "flat-bft":
        return _build_flat(cfg, seed, sim, provider, authorized, clients, admin_id)

    ag_members = cfg.agreement_members()
    provider.register_group(GroupKey(AGREEMENT, 0), ag_members)
    for gid in cfg.all_group_ids():
        provider.register_group(GroupKey(EXECUTION, gid), cfg.group_members(gid))

    p = cfg.params
    factory = EndpointFactory(irmc, cfg)
    zone_count = cfg.topology.regions[cfg.agreement_region]
    initial = {gid: (cfg.groups[gid], cfg.group_members(gid))
               for gid in sorted(cfg.groups)}

    def make_ordering(node):
        if mode == "oracle":
            return SequencerOracle(node, ag_members, cfg.fault_params.f_a,
                                   node.validate_request)
        return MiniBft(node, ag_members, cfg.fault_params.f_a,
                       node.validate_request,
                       view_timeout_ms=p["view_timeout_ms"],
                       batch_cap=p["batch_cap"])

    agreement = []
    for i, nid in enumerate(ag_members):
        node = AgreementReplica(
            nid, sim, BoundCrypto(provider, nid), ag_members,
            cfg.fault_params.f_a, cfg.fault_params.f_e, authorized, admin_id,
            make_ordering, factory, initial,
            k_a=p["k_a"], ag_win=p["ag_win"], z=p["z"],
            commit_capacity=p["commit_capacity"],
            cp_gossip_ms=p["cp_gossip_ms"], fetch_poll_ms=p["fetch_poll_ms"])
        sim.register(nid, node, cfg.agreement_region, i % zone_count)
        agreement.append(node)

    executions: dict = {}
    for gid in cfg.all_group_ids():
        region = cfg.region_of_group(gid)
        zones = cfg.topology.regions[region]
        group_members = cfg.group_members(gid)
        executions[gid] = []
        for i, nid in enumerate(group_members):
            node = ExecutionReplica(
                nid, sim, BoundCrypto(provider, nid), gid, group_members,
                authorized, cfg.fault_params.f_e, cfg.fault_params.f_a,
                ag_members, k_e=p["k_e"], cp_gossip_ms=p["cp_gossip_ms"],
                fetch_poll_ms=p["fetch_poll_ms"])
            req_cfg, com_cfg = factory.channel_configs(gid, group_members)
            node.req_send = factory.sender(req_cfg, node)
            node.commit_recv = factory.receiver(com_cfg, node)
            node.channels[req_cfg.channel] = node.req_send
            node.channels[com_cfg.channel] = node.commit_recv
            sim.register(nid, node, region, i % zones)
            executions[gid].append(node)

    client_nodes = []
    for i, spec in enumerate(cfg.clients):
        nid = clients[i]
        workload = Workload(
            strong_rate_per_s=spec.strong_rate_per_s,
            weak_rate_per_s=spec.weak_rate_per_s,
            write_fraction=spec.write_fraction,
            value_size=spec.value_size,
            key_space=spec.key_space,
            issue_until_ms=cfg.issue_until_ms,
            start_ms=spec.start_ms,
        )
        node = ClientNode(nid, sim, BoundCrypto(provider, nid),
                          cfg.fault_params.f_a, cfg.fault_params.f_e,
                          ag_members, workload, seed,
                          retry_limit=p["retry_limit"],
                          weak_rounds=p["weak_rounds"])
        sim.register(nid, node, spec.region, spec.zone % cfg.topology.regions[spec.region])
        client_nodes.append(node)

    admin_node = None
    if cfg.admin_actions:
        script = tuple(
            AdminAction(at_ms=a["at_ms"], action=a["action"], group=int(a["group"]),
                        region=cfg.region_of_group(int(a["group"]))
                        if a["action"] == "add" else "",
                        members=cfg.group_members(int(a["group"]))
                        if a["action"] == "add" else ())
            for a in cfg.admin_actions)
        workload = Workload(issue_until_ms=cfg.duration_ms)
        admin_node = ClientNode(admin_id, sim, BoundCrypto(provider, admin_id),
                                cfg.fault_params.f_a, cfg.fault_params.f_e,
                                ag_members, workload, seed,
                                retry_limit=p["retry_limit"],
                                admin_script=script)
        sim.register(admin_id, admin_node, cfg.agreement_region, 0)

    return System(sim, cfg, agreement, executions, client_nodes, admin_node, [])


def _build_flat(cfg, seed, sim, provider, authorized, clients, admin_id):
    p = cfg.params
    n = cfg.fault_params.agreement_size
    members = tuple(ReplicaId(AGREEMENT, 0, i) for i in range(n))
    provider.register_group(GroupKey(AGREEMENT, 0), members)
    regions = [cfg.agreement_region] + sorted(r for r in cfg.topology.regions
                                              if r != cfg.agreement_region)
    flat = []
    for i, nid in enumerate(members):
        region = regions[i % len(regions)]
        node = FlatBftReplica(nid, sim, BoundCrypto(provider, nid), members,
                              cfg.fault_params.f_a, authorized,
                              view_timeout_ms=p["flat_view_timeout_ms"])
        sim.register(nid, node, region, i // len(regions) % cfg.topology.regions[region])
        flat.append(node)

    client_nodes = []
    for i, spec in enumerate(cfg.clients):
        nid = clients[i]
        workload = Workload(
            strong_rate_per_s=spec.strong_rate_per_s,
            weak_rate_per_s=spec.weak_rate_per_s,
            write_fraction=spec.write_fraction,
            value_size=spec.value_size,
            key_space=spec.key_space,
            issue_until_ms=cfg.issue_until_ms,
            start_ms=spec.start_ms,
        )
        node = ClientNode(nid, sim, BoundCrypto(provider, nid),
                          cfg.fault_params.f_a, cfg.fault_params.f_e,
                          members, workload, seed,
                          retry_limit=p["retry_limit"],
                          weak_rounds=p["weak_rounds"],
                          static_group=(0, members, cfg.fault_params.f_a + 1))
        sim.register(nid, node, spec.region, spec.zone % cfg.topology.regions[spec.region])
        client_nodes.append(node)

    return System(sim, cfg, [], {}, client_nodes, None, flat)
