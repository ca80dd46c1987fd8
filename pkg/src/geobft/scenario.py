"""Scenario files: schema, validation, and the shipped catalogue.

A scenario is a JSON object (see README for the field-by-field schema)
describing topology, group layout, protocol parameters, client
workloads, the fault plan and reconfiguration timeline for one run.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import AGREEMENT, EXECUTION, ClientId, FaultParams, ReplicaId
from .simnet import FaultPlan, NodeFault, Topology

SCENARIO_DIR = Path(__file__).parent / "scenarios"

DEFAULT_PARAMS = {
    "k_a": 10,
    "k_e": 10,
    "ag_win": 20,
    "z": 0,
    "req_capacity": 2,
    "commit_capacity": 32,
    "batch_cap": 16,
    "cp_gossip_ms": 10.0,
    "fetch_poll_ms": 25.0,
    "progress_ms": 50.0,
    "collector_timeout_ms": 200.0,
    "view_timeout_ms": 16.0,
    "flat_view_timeout_ms": 600.0,
    "retransmit_ms": 0.0,
    "retry_limit": 4,
    "weak_rounds": 2,
}


class ScenarioError(ValueError):
    pass


@dataclass
class ClientSpec:
    region: str
    zone: int
    strong_rate_per_s: float
    weak_rate_per_s: float
    write_fraction: float
    value_size: int = 32
    key_space: int = 16
    start_ms: float = 0.0


@dataclass
class ScenarioConfig:
    name: str
    mode: str              # spider | flat-bft | oracle
    irmc: str              # rc | sc
    duration_ms: float
    issue_until_ms: float
    warmup_ms: float
    fault_params: FaultParams
    topology: Topology
    agreement_region: str
    groups: dict           # gid -> region (initial)
    pending_groups: dict   # gid -> region (available for AddGroup)
    clients: list          # list[ClientSpec]
    params: dict
    fault_plan: FaultPlan = field(default_factory=FaultPlan)
    admin_actions: list = field(default_factory=list)

    # -- derived layout -----------------------------------------------------

    def agreement_members(self) -> tuple:
        return tuple(ReplicaId(AGREEMENT, 0, i)
                     for i in range(self.fault_params.agreement_size))

    def group_members(self, gid: int) -> tuple:
        return tuple(ReplicaId(EXECUTION, gid, i)
                     for i in range(self.fault_params.execution_size))

    def all_group_ids(self):
        return sorted(set(self.groups) | set(self.pending_groups))

    def region_of_group(self, gid: int) -> str:
        return self.groups.get(gid) or self.pending_groups[gid]

    def client_ids(self):
        return [ClientId(i) for i in range(len(self.clients))]

    @property
    def admin_id(self):
        return ClientId(len(self.clients))

    def validate(self) -> None:
        issues = []
        if self.mode not in ("spider", "flat-bft", "oracle"):
            issues.append(f"mode: unknown mode {self.mode!r}")
        if self.irmc not in ("rc", "sc"):
            issues.append(f"irmc: unknown variant {self.irmc!r}")
        p = self.params
        if p["commit_capacity"] <= p["k_e"]:
            issues.append("commit_capacity: must exceed k_e for execution liveness")
        if p["ag_win"] < p["k_a"]:
            issues.append("ag_win: must be at least k_a to force periodic checkpoints")
        n_e = len(self.groups)
        if self.mode != "flat-bft" and not (0 <= p["z"] < max(n_e, 1)):
            issues.append(f"z: must satisfy 0 <= z < n_e (= {n_e})")
        if self.agreement_region not in self.topology.regions:
            issues.append(f"agreement_region: unknown region {self.agreement_region}")
        for gid, region in {**self.groups, **self.pending_groups}.items():
            if region not in self.topology.regions:
                issues.append(f"group {gid}: unknown region {region}")
        for spec in self.clients:
            if spec.region not in self.topology.regions:
                issues.append(f"client region {spec.region}: unknown")
        if not self.fault_plan.beyond_threshold:
            by_group: dict = {}
            for nid in self.fault_plan.faults:
                if isinstance(nid, ReplicaId):
                    by_group.setdefault((nid.role, nid.group), 0)
                    by_group[(nid.role, nid.group)] += 1
            for (role, gid), n in by_group.items():
                bound = self.fault_params.f_a if role == AGREEMENT else self.fault_params.f_e
                if n > bound:
                    issues.append(
                        f"fault plan: {n} faulty replicas in {role}{gid} exceeds "
                        f"threshold {bound} (mark beyond_threshold to allow)")
        if issues:
            raise ScenarioError("; ".join(issues))


def load_scenario(source) -> ScenarioConfig:
    """Accepts a path, a shipped scenario name, or a parsed dict."""
    if isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        if not path.exists():
            candidate = SCENARIO_DIR / f"{source}.json"
            if candidate.exists():
                path = candidate
            else:
                raise ScenarioError(f"no scenario at {source}")
        raw = json.loads(path.read_text())
    return _from_dict(raw)


def shipped_scenarios():
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))


def _from_dict(raw: dict) -> ScenarioConfig:
    try:
        topo_raw = raw["topology"]
        wan = {}
        for pair, delay in topo_raw.get("wan_ms", {}).items():
            a, b = pair.split("-")
            wan[frozenset((a, b))] = float(delay)
        topology = Topology(
            regions=dict(topo_raw["regions"]),
            wan_ms=wan,
            inter_zone_ms=float(topo_raw.get("inter_zone_ms", 1.0)),
            intra_zone_ms=float(topo_raw.get("intra_zone_ms", 0.1)),
            jitter_ms=float(topo_raw.get("jitter_ms", 0.0)),
            proc_ms=float(topo_raw.get("proc_ms", 0.0)),
        )
        params = dict(DEFAULT_PARAMS)
        params.update(raw.get("params", {}))
        duration = float(raw["duration_ms"])
        clients = []
        for spec in raw["clients"]:
            count = int(spec.get("count", 1))
            rate = float(spec.get("rate_per_s", 10.0))
            mix = spec.get("mix", {"write": 1.0})
            weak_frac = float(mix.get("read_weak", 0.0))
            strong_frac = 1.0 - weak_frac
            write_frac_of_strong = 1.0
            if strong_frac > 0:
                write_frac_of_strong = float(mix.get("write", strong_frac)) / strong_frac
            for i in range(count):
                clients.append(ClientSpec(
                    region=spec["region"],
                    zone=int(spec.get("zone", 0)),
                    strong_rate_per_s=rate * strong_frac,
                    weak_rate_per_s=rate * weak_frac,
                    write_fraction=min(1.0, write_frac_of_strong),
                    value_size=int(spec.get("value_size", 32)),
                    key_space=int(spec.get("key_space", 16)),
                    start_ms=float(spec.get("start_ms", 0.0)),
                ))
        plan = FaultPlan(beyond_threshold=bool(raw.get("beyond_threshold", False)))
        fp = FaultParams(int(raw["f_a"]), int(raw["f_e"]))
        for f in raw.get("faults", []):
            for nid in _expand_selector(f["node"], raw, fp):
                plan.faults[nid] = NodeFault(
                    kind=f["kind"],
                    at_ms=float(f.get("at_ms", 0.0)),
                    until_ms=float(f.get("until_ms", float("inf"))),
                    strategy=f.get("strategy"),
                    rate=float(f.get("rate", 0.0)),
                )
        admin = [dict(a) for a in raw.get("admin", [])]
        cfg = ScenarioConfig(
            name=raw.get("name", "unnamed"),
            mode=raw.get("mode", "spider"),
            irmc=raw.get("irmc", "rc"),
            duration_ms=duration,
            issue_until_ms=float(raw.get("issue_until_ms", duration * 0.7)),
            warmup_ms=float(raw.get("warmup_ms", 0.0)),
            fault_params=fp,
            topology=topology,
            agreement_region=raw["agreement_region"],
            groups={int(g["id"]): g["region"] for g in raw["groups"]},
            pending_groups={int(g["id"]): g["region"]
                            for g in raw.get("pending_groups", [])},
            clients=clients,
            params=params,
            fault_plan=plan,
            admin_actions=admin,
        )
    except KeyError as missing:
        raise ScenarioError(f"missing scenario field {missing}") from None
    cfg.validate()
    return cfg


def _expand_selector(sel: str, raw: dict, fp: FaultParams):
    """'ag:0:1', 'ex:2:*', 'client:3' or 'leader'."""
    if sel == "leader":
        return [ReplicaId(AGREEMENT, 0, 0)]
    parts = sel.split(":")
    if parts[0] == "client":
        return [ClientId(int(parts[1]))]
    role, gid, idx = parts[0], int(parts[1]), parts[2]
    size = fp.agreement_size if role == AGREEMENT else fp.execution_size
    if idx == "*":
        return [ReplicaId(role, gid, i) for i in range(size)]
    return [ReplicaId(role, gid, int(idx))]
