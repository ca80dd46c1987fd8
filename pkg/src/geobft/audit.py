"""Trace auditors: execution/agreement safety, at-most-once execution,
request authenticity, linearizability (real-time order plus replay on a
reference application), weak-read interval consistency, channel quorum
provenance, window monotonicity, and checkpoint-equivalence digests.

All checkers are pure functions of the trace plus the scenario facts
(fault plan, authorized clients); the linearization candidate is the
agreement order, with a brute-force search as a cross-check oracle for
tiny histories.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations

from .application import KvApplication
from .core import ClientId, hash_bytes
from .core.codec import canonical_decode


@dataclass
class Verdict:
    name: str
    ok: bool
    detail: str = ""

    def as_pair(self):
        return (self.ok, self.detail)


def _honest(plan, nid) -> bool:
    """Crashed or partitioned nodes stay honest; only byzantine ones lie."""
    fault = plan.for_node(nid)
    return fault is None or fault.kind != "byzantine"


def _correct(cfg):
    plan = cfg.fault_plan
    correct_clients = {f"c{i}" for i in range(len(cfg.clients))
                       if plan.is_correct(ClientId(i))}
    correct_clients.add(str(cfg.admin_id))
    correct_replicas = set()
    for gid in cfg.all_group_ids():
        for r in cfg.group_members(gid):
            if _honest(plan, r):
                correct_replicas.add(str(r))
    correct_ag = {str(r) for r in cfg.agreement_members() if _honest(plan, r)}
    return correct_clients, correct_replicas, correct_ag


def canonical_execution_order(trace, correct_replicas):
    """(s, idx) -> (c, t_c, op hex, kind) union over correct replicas,
    flagging any disagreement (the E-Safety core)."""
    order: dict = {}
    conflict = None
    per_replica_seen: dict = {}
    for t, event, src, dst, kind, digest, data in trace.records:
        if event != "execute" or src not in correct_replicas:
            continue
        key = (data["s"], data.get("idx", 0))
        value = (data["c"], data["t_c"], data["op"], kind)
        held = order.get(key)
        if held is None:
            order[key] = value
        elif held != value and conflict is None:
            conflict = f"position {key}: {held} vs {value} at {src}"
        seen = per_replica_seen.setdefault(src, {})
        pair = (data["c"], data["t_c"])
        if pair in seen and conflict is None:
            conflict = f"{src} executed {pair} twice (positions {seen[pair]}, {key})"
        seen[pair] = key
    return order, conflict


def check_execute_equality(trace, cfg) -> Verdict:
    _, correct_replicas, _ = _correct(cfg)
    order, conflict = canonical_execution_order(trace, correct_replicas)
    placements: dict = {}
    for key, (c, t_c, op, kind) in sorted(order.items()):
        held = placements.get((c, t_c))
        if held is not None:
            return Verdict("execute_equality", False,
                           f"({c},{t_c}) executed at {held} and {key}")
        placements[(c, t_c)] = key
    if conflict:
        return Verdict("execute_equality", False, conflict)
    return Verdict("execute_equality", True, f"{len(order)} executed positions")


def check_agreement_safety(trace, cfg) -> Verdict:
    """A-Safety and A-Order over the order_deliver trace of correct replicas."""
    _, _, correct_ag = _correct(cfg)
    per_s: dict = {}
    per_replica_last: dict = {}
    jumps: dict = {}
    for t, event, src, dst, kind, digest, data in trace.records:
        if src not in correct_ag:
            continue
        if event == "cp_stable" and kind == "ag":
            jumps.setdefault(src, []).append(data["s"])
        if event != "order_deliver":
            continue
        s = data["s"]
        held = per_s.get(s)
        if held is None:
            per_s[s] = digest
        elif held != digest:
            return Verdict("agreement_safety", False,
                           f"sequence {s}: conflicting batches delivered")
        last = per_replica_last.get(src, 0)
        if s <= last:
            return Verdict("agreement_safety", False,
                           f"{src} delivered {s} after {last}")
        if s > last + 1:
            covered = any(cp >= s - 1 for cp in jumps.get(src, ()))
            if not covered:
                return Verdict("agreement_safety", False,
                               f"{src} gap {last}->{s} without checkpoint")
        per_replica_last[src] = s
    return Verdict("agreement_safety", True, f"{len(per_s)} sequences")


def check_validity(trace, cfg) -> Verdict:
    """E-Validity: every executed request re-verifies against its authenticator."""
    authorized = {i for i in range(len(cfg.clients))} | {cfg.admin_id.index}
    _, correct_replicas, _ = _correct(cfg)
    checked = 0
    for t, event, src, dst, kind, digest, data in trace.records:
        if event != "execute" or src not in correct_replicas or "wr" not in data:
            continue
        write = canonical_decode(bytes.fromhex(data["wr"]))
        sig = canonical_decode(bytes.fromhex(data["sig"]))
        if write.client.index not in authorized:
            return Verdict("validity", False, f"unauthorized client {write.client}")
        if sig.signer != write.client:
            return Verdict("validity", False, f"signer mismatch at s={data['s']}")
        if sig.digest != hash_bytes(bytes.fromhex(data["wr"])):
            return Verdict("validity", False, f"bad signature at s={data['s']}")
        checked += 1
    return Verdict("validity", True, f"{checked} executions re-verified")


def _canon(msg):
    from .core.codec import canonical_encode
    return canonical_encode(msg)


def check_realtime_order(trace, cfg) -> Verdict:
    """Accepted-before-issued implies lower agreement sequence (E-Safety II core)."""
    correct_clients, correct_replicas, _ = _correct(cfg)
    order, _ = canonical_execution_order(trace, correct_replicas)
    seq_of = {}
    for key in sorted(order):
        c, t_c, op, kind = order[key]
        seq_of.setdefault((c, t_c), key)
    strong = ("write", "read_strong", "admin")
    events = []
    for t, event, src, dst, kind, digest, data in trace.records:
        if src not in correct_clients or kind not in strong:
            continue
        if event == "client_issue":
            events.append((t, 0, "issue", src, data["t_c"]))
        elif event == "client_accept":
            events.append((t, 1, "accept", src, data["t_c"]))
    events.sort(key=lambda e: (e[0], e[1]))
    max_accepted = None
    for t, _, what, src, t_c in events:
        key = seq_of.get((int(src[1:]), t_c))
        if what == "accept":
            if key is not None and (max_accepted is None or key > max_accepted):
                max_accepted = key
        else:
            if key is not None and max_accepted is not None and key <= max_accepted:
                return Verdict("realtime_order", False,
                               f"{src} t_c={t_c} at {key} issued after accept of {max_accepted}")
    return Verdict("realtime_order", True, f"{len(events)} ordered events")


def replay_reference(order):
    """Replays the canonical order; returns expected replies and key histories."""
    app = KvApplication()
    expected: dict = {}
    history: dict = {}  # key -> list of (s, value)
    for key_pos in sorted(order):
        c, t_c, op_hex, kind = order[key_pos]
        op = bytes.fromhex(op_hex)
        if kind == "read":
            reply = app.execute_readonly(op)
        else:
            reply = app.execute(op)
            decoded = _try_decode(op)
            if decoded is not None and decoded[0] == "put":
                history.setdefault(decoded[1], []).append((key_pos[0], decoded[2]))
        expected[(c, t_c)] = reply
    return app, expected, history


def _try_decode(op: bytes):
    try:
        return canonical_decode(op)
    except Exception:
        return None


def check_replay(trace, cfg) -> Verdict:
    """Every accepted strong reply equals the reply the replayed prefix computes."""
    correct_clients, correct_replicas, _ = _correct(cfg)
    order, _ = canonical_execution_order(trace, correct_replicas)
    _, expected, _ = replay_reference(order)
    checked = 0
    for t, event, src, dst, kind, digest, data in trace.records:
        if event != "client_accept" or kind not in ("write", "read_strong"):
            continue
        if src not in correct_clients:
            continue
        want = expected.get((int(src[1:]), data["t_c"]))
        if want is None:
            return Verdict("replay", False,
                           f"{src} accepted t_c={data['t_c']} never executed")
        if want.hex() != data["reply"]:
            return Verdict("replay", False,
                           f"{src} t_c={data['t_c']}: accepted {data['reply'][:16]} "
                           f"expected {want.hex()[:16]}")
        checked += 1
    return Verdict("replay", True, f"{checked} replies replayed")


def check_weak_reads(trace, cfg) -> Verdict:
    """Weak replies match the serving group's state at a point inside the
    read's issue-response interval (one-copy serializability at desk scale)."""
    correct_clients, correct_replicas, _ = _correct(cfg)
    order, _ = canonical_execution_order(trace, correct_replicas)
    history: dict = {}  # key -> [(s, value)] in replay order
    for key_pos in sorted(order):
        c, t_c, op_hex, kind = order[key_pos]
        if kind == "read":
            continue
        decoded = _try_decode(bytes.fromhex(op_hex))
        if decoded is not None and decoded[0] == "put":
            history.setdefault(decoded[1], []).append((key_pos[0], decoded[2]))

    def value_at_s(key, s):
        versions = history.get(key, ())
        value = None
        for vs, v in versions:
            if vs <= s:
                value = v
            else:
                break
        return value

    serves: dict = {}  # (client, nonce) -> [(time, s_n)] by correct replicas
    for t, event, src, dst, kind, digest, data in trace.records:
        if event == "weak_serve" and src in correct_replicas:
            serves.setdefault((dst, data["nonce"]), []).append((t, data["s_n"]))
    weak_ops: dict = {}  # (client, issue time) -> key read
    for t, event, src, dst, kind, digest, data in trace.records:
        if event == "client_issue" and kind == "read_weak":
            decoded = canonical_decode(bytes.fromhex(data["op"]))
            weak_ops[(src, round(t, 6))] = decoded[1]
    checked = 0
    from .application import ABSENT
    for t, event, src, dst, kind, digest, data in trace.records:
        if event != "client_accept" or kind != "read_weak" or src not in correct_clients:
            continue
        issued = round(data["issued"], 6)
        reply = bytes.fromhex(data["reply"])
        key = weak_ops.get((src, issued))
        if key is None:
            continue
        ok = False
        for ts, s_n in serves.get((src, data["t_c"]), ()):
            if not (issued <= ts <= t):
                continue
            want = value_at_s(key, s_n)
            if (want is None and reply == ABSENT) or want == reply:
                ok = True
                break
        if not ok:
            return Verdict("weak_reads", False,
                           f"{src} weak read of {key} at {t:.1f}: reply matches no "
                           f"serving state in interval")
        checked += 1
    return Verdict("weak_reads", True, f"{checked} weak reads verified")


def check_channel_quorums(trace, cfg) -> Verdict:
    """IRMC provenance: every delivery carries an f_s+1 quorum including a
    correct sender that actually sent that content."""
    plan = cfg.fault_plan
    f_by_kind = {"req": cfg.fault_params.f_e, "commit": cfg.fault_params.f_a}
    sent: dict = {}
    correct = set()
    for gid in cfg.all_group_ids():
        for r in cfg.group_members(gid):
            if _honest(plan, r):
                correct.add(str(r))
    for r in cfg.agreement_members():
        if _honest(plan, r):
            correct.add(str(r))
    for t, event, src, dst, kind, digest, data in trace.records:
        if event == "ch_send_call" and src in correct:
            sent.setdefault((kind, data["sc"], data["p"]), set()).add(digest)
    deliveries = 0
    for t, event, src, dst, kind, digest, data in trace.records:
        if event != "irmc_deliver" or src not in correct:
            continue
        f_s = f_by_kind["req" if kind.startswith("req") else "commit"]
        contributors = data["senders"].split(";")
        if len(contributors) < f_s + 1:
            return Verdict("channel_quorums", False,
                           f"{kind} p={data['p']}: quorum {len(contributors)}")
        correct_contrib = [x for x in contributors if x in correct]
        if not correct_contrib:
            return Verdict("channel_quorums", False,
                           f"{kind} p={data['p']}: no correct contributor")
        if digest not in sent.get((kind, data["sc"], data["p"]), set()):
            return Verdict("channel_quorums", False,
                           f"{kind} p={data['p']}: content never sent by a correct sender")
        deliveries += 1
    return Verdict("channel_quorums", True, f"{deliveries} deliveries vouched")


def check_commit_content(trace, cfg) -> Verdict:
    """Monotone commit-channel content: the payload sent at a position is
    identical across all correct agreement replicas (the projection lemma)."""
    _, _, correct_ag = _correct(cfg)
    sent: dict = {}
    for t, event, src, dst, kind, digest, data in trace.records:
        if event != "ch_send_call" or src not in correct_ag:
            continue
        if not kind.startswith("commit"):
            continue
        key = (kind, data["p"])
        held = sent.setdefault(key, digest)
        if held != digest:
            return Verdict("commit_content", False,
                           f"{kind} position {data['p']}: divergent payloads "
                           f"from correct agreement replicas")
    return Verdict("commit_content", True, f"{len(sent)} positions compared")


def check_window_monotonicity(trace, cfg) -> Verdict:
    last: dict = {}
    for t, event, src, dst, kind, digest, data in trace.records:
        if event != "win_move":
            continue
        key = (src, kind, data["sc"])
        if data["start"] < last.get(key, 0):
            return Verdict("window_monotonicity", False,
                           f"{src} {kind} sc={data['sc']} moved backwards")
        last[key] = data["start"]
    return Verdict("window_monotonicity", True, f"{len(last)} windows")


def check_cp_equivalence(trace, cfg) -> Verdict:
    """Checkpoint path and delivery path reach identical state digests."""
    _, correct_replicas, correct_ag = _correct(cfg)
    ag_digests: dict = {}
    ex_full: dict = {}
    ex_projected: dict = {}
    for t, event, src, dst, kind, digest, data in trace.records:
        if event != "state_digest":
            continue
        if kind == "ag" and src in correct_ag:
            held = ag_digests.setdefault(data["s"], digest)
            if held != digest:
                return Verdict("cp_equivalence", False,
                               f"agreement state divergence at s={data['s']}")
        elif kind == "ex" and src in correct_replicas:
            group = src.split(":")[0]
            held = ex_full.setdefault((group, data["s"]), digest)
            if held != digest:
                return Verdict("cp_equivalence", False,
                               f"execution state divergence in {group} at s={data['s']}")
            proj = data["projected"]
            heldp = ex_projected.setdefault(data["s"], proj)
            if heldp != proj:
                return Verdict("cp_equivalence", False,
                               f"cross-group execution divergence at s={data['s']}")
    n = len(ag_digests) + len(ex_full)
    return Verdict("cp_equivalence", True, f"{n} digest points compared")


def check_liveness(trace, cfg) -> Verdict:
    """Every correct-client request resolves within the horizon."""
    correct_clients, _, _ = _correct(cfg)
    strong_issued: dict = {}
    strong_done: set = set()
    weak_issued: set = set()
    weak_done: set = set()
    for t, event, src, dst, kind, digest, data in trace.records:
        if src not in correct_clients:
            continue
        if event == "client_issue":
            if kind == "read_weak":
                weak_issued.add((src, data["t_c"]))
            else:
                strong_issued[(src, data["t_c"])] = kind
        elif event == "client_accept":
            if kind == "read_weak":
                weak_done.add((src, round(data["issued"], 6)))
            else:
                strong_done.add((src, data["t_c"]))
        elif event == "client_resubmit":
            strong_done.add((src, data["t_c"]))
        elif event == "client_escalate":
            weak_done.add((src, round(data["issued"], 6)))
    missing = [k for k in strong_issued if k not in strong_done]
    if missing:
        return Verdict("liveness", False,
                       f"{len(missing)} strong requests unresolved, e.g. {missing[0]}")
    # weak issues are keyed by their first issue time
    weak_keys = set()
    for t, event, src, dst, kind, digest, data in trace.records:
        if event == "client_issue" and kind == "read_weak" and src in correct_clients:
            weak_keys.add((src, round(t, 6)))
    unresolved = [k for k in weak_keys if k not in weak_done]
    if unresolved:
        return Verdict("liveness", False,
                       f"{len(unresolved)} weak reads unresolved, e.g. {unresolved[0]}")
    return Verdict("liveness", True,
                   f"{len(strong_issued)} strong + {len(weak_keys)} weak resolved")


def linearizable_bruteforce(ops) -> bool:
    """Exhaustive check for tiny histories: ops are
    (issue, accept, op_bytes, reply_bytes); permutation must respect real time
    and replay against the reference application."""
    n = len(ops)
    if n > 8:
        raise ValueError("brute force limited to 8 operations")
    for perm in permutations(range(n)):
        # real-time: if a completes before b is issued, a must precede b
        ok = True
        pos = {op: i for i, op in enumerate(perm)}
        for a in range(n):
            for b in range(n):
                if ops[a][1] < ops[b][0] and pos[a] > pos[b]:
                    ok = False
                    break
            if not ok:
                break
        if not ok:
            continue
        app = KvApplication()
        if all(app.execute(ops[i][2]) == ops[i][3] for i in perm):
            return True
    return False


STANDARD_CHECKS = (
    check_agreement_safety,
    check_execute_equality,
    check_validity,
    check_realtime_order,
    check_replay,
    check_weak_reads,
    check_channel_quorums,
    check_commit_content,
    check_window_monotonicity,
    check_cp_equivalence,
    check_liveness,
)


def audit_trace(trace, cfg, skip_liveness: bool = False) -> dict:
    verdicts = {}
    for check in STANDARD_CHECKS:
        if skip_liveness and check is check_liveness:
            continue
        v = check(trace, cfg)
        verdicts[v.name] = v.as_pair()
    return verdicts
