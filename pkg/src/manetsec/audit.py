"""Post-run auditor: replays an event log and checks the security claims.

The auditor owns the run registry (every principal's key material and every
generated secret), so for any principal it can reconstruct the *knowledge
set*: the closure of what that principal generated itself plus everything
it could decrypt from the traffic it received or overheard.  Secrecy
checks are then literal: take the departed (or newly joined) node's
knowledge and brute-force it against every group ciphertext outside its
membership, expecting zero successful decryptions.

A sender can legitimately still use a retired key while its own copy of
the rekey is in flight (multi-hop delivery takes one tick per hop), so a
ciphertext under an old epoch only counts against backward secrecy if its
sender had already received newer key material when it spoke.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from . import encoding
from .crypto import DecryptionError, make_provider
from .messages import MessageKind, decode_message
from .routing import expected_chain
from .sim import EventLog, SimulationError

KEY_PROPAGATION_TICKS = 2

_REKEY_RE = re.compile(r"lineage=(?P<lineage>[^:]+):epoch=(?P<epoch>\d+)")
_SRC_SEQ_RE = re.compile(r"source=(?P<source>[^:]+):seq=(?P<seq>\d+)")
_TX_RE = re.compile(r"tx=(?P<tx>\d+)$")
_HOPS_RE = re.compile(r"hops=(?P<hops>\d+)")


@dataclass
class PropertyResult:
    name: str
    passed: bool
    counterexamples: list = field(default_factory=list)  # event indices

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = "" if self.passed else " at events " + ",".join(str(i) for i in self.counterexamples[:8])
        return f"{self.name}: {status}{where}"


@dataclass
class AuditReport:
    results: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_text(self) -> str:
        return "\n".join(r.line() for r in self.results) + "\n"

    def result(self, name: str) -> PropertyResult:
        return next(r for r in self.results if r.name == name)


@dataclass
class KnowledgeSet:
    principal: str
    sym_keys: dict  # key bytes -> label
    private_key: Optional[bytes]
    opened: set  # digests this principal could open

    def has_key_labelled(self, prefix: str) -> bool:
        return any(label.startswith(prefix) for label in self.sym_keys.values())


def _principal_of(event) -> str:
    return event.principals.split(":", 1)[0].split(">", 1)[0]


def _recipient_of(event) -> Optional[str]:
    if ">" in event.principals:
        return event.principals.split(">", 1)[1]
    return None


def _about_of(event) -> str:
    parts = event.principals.split(":", 1)
    return parts[1] if len(parts) > 1 else ""


# ---------------------------------------------------------------------------
# Knowledge sets
# ---------------------------------------------------------------------------

_HARVEST = {
    # message kind -> (seal mode, [(field index in decrypted payload, label pattern)])
    MessageKind.REKEY: None,  # handled specially (two modes)
    MessageKind.MEMBER_SET: ("sym", [(2, "group_key:{lineage}:{epoch}")]),
    MessageKind.ADMIT: ("pk", [(2, "member_key")]),
    MessageKind.SESSION_3: ("pk", [(3, "session_key")]),
    MessageKind.NONCE: ("sym", []),
    MessageKind.SESSION_1: ("pk", []),
    MessageKind.SESSION_2: ("pk", []),
    MessageKind.SESSION_4: ("sym", []),
    MessageKind.DATA: ("sym", []),
    MessageKind.GROUP_REQ: ("sym", []),
    MessageKind.GROUP_REP: ("sym", []),
    MessageKind.GROUP_NEG: ("sym", []),
    MessageKind.ROUTE_COMPOSED: ("sym", []),
}


def knowledge_set(principal: str, log: EventLog, tick: Optional[int] = None) -> KnowledgeSet:
    """Closure of everything the principal holds or could decrypt by `tick`."""
    registry = log.registry
    if principal not in registry.node_names and principal not in registry.adversary_names:
        raise SimulationError(f"unknown principal {principal!r}")
    provider = make_provider(registry.provider_name)
    horizon = tick if tick is not None else (log.events[-1].tick if log.events else 0)

    keypair = registry.keypairs.get(principal)
    private = keypair.private if keypair is not None else None
    sym_keys: dict[bytes, str] = {}
    for entry_tick, owner, label, value in registry.secrets:
        if owner == principal and entry_tick <= horizon and not label.startswith("member_secret"):
            sym_keys[value] = label

    seen_digests = []
    seen_set = set()
    for event in log.events:
        if event.tick > horizon or event.kind != "deliver":
            continue
        if _recipient_of(event) != principal or event.digest == "-":
            continue
        if event.digest not in seen_set:
            seen_set.add(event.digest)
            seen_digests.append(event.digest)

    opened: set[str] = set()
    progress = True
    while progress:
        progress = False
        for digest in seen_digests:
            if digest in opened:
                continue
            payload = log.payloads.get(digest)
            if payload is None:
                continue
            try:
                message = decode_message(payload)
            except Exception:
                continue
            plain = _try_open(provider, message, private, sym_keys)
            if plain is None:
                continue
            opened.add(digest)
            progress = True
            _harvest_keys(message, plain, sym_keys)
    return KnowledgeSet(principal=principal, sym_keys=sym_keys, private_key=private, opened=opened)


def _try_open(provider, message, private, sym_keys) -> Optional[list]:
    kind = message.kind
    if kind == MessageKind.REKEY:
        sealed = message["sealed"]
        if message["mode"] == "public":
            if private is not None:
                try:
                    return encoding.decode(provider.pk_decrypt(private, sealed))
                except Exception:
                    return None
            return None
        for key in list(sym_keys):
            try:
                return encoding.decode(provider.sym_decrypt(key, sealed))
            except DecryptionError:
                continue
        return None
    spec = _HARVEST.get(kind)
    if spec is None or "sealed" not in message.fields:
        return None
    mode, _ = spec
    sealed = message["sealed"]
    if mode == "pk":
        if private is None:
            return None
        try:
            return encoding.decode(provider.pk_decrypt(private, sealed))
        except Exception:
            return None
    for key in list(sym_keys):
        try:
            return encoding.decode(provider.sym_decrypt(key, sealed))
        except DecryptionError:
            continue
    return None


def _harvest_keys(message, plain, sym_keys) -> None:
    kind = message.kind
    if kind == MessageKind.REKEY:
        key_bytes, epoch, lineage = plain[0], plain[1], plain[2]
        sym_keys.setdefault(bytes(key_bytes), f"group_key:{lineage}:{epoch}")
        if message["mode"] == "public" and len(plain) >= 6 and plain[4]:
            sym_keys.setdefault(bytes(plain[4]), "member_key")
        return
    spec = _HARVEST.get(kind)
    if spec is None:
        return
    _, harvests = spec
    for index, label in harvests:
        if index < len(plain) and isinstance(plain[index], (bytes, bytearray)) and plain[index]:
            if "{lineage}" in label:
                label = label.format(lineage=plain[3], epoch=plain[4])
            sym_keys.setdefault(bytes(plain[index]), label)


# ---------------------------------------------------------------------------
# Log digests and timelines
# ---------------------------------------------------------------------------


@dataclass
class GroupCiphertext:
    event_index: int
    tick: int
    group: str
    lineage: str
    epoch: int
    sealed: bytes
    sender: str = ""


@dataclass
class PkCiphertext:
    event_index: int
    tick: int
    recipient: str
    sealed: bytes


def _collect_ciphertexts(log: EventLog):
    """Group-key-sealed and member-addressed ciphertexts, one per distinct
    payload, attributed to the first transmitter (re-flooded copies carry
    the same bytes and say nothing new)."""
    group_ct, pk_ct = [], []
    seen = set()
    for idx, event in enumerate(log.events):
        if event.kind != "send" or event.digest == "-" or event.digest in seen:
            continue
        payload = log.payloads.get(event.digest)
        if payload is None:
            continue
        try:
            message = decode_message(payload)
        except Exception:
            continue
        if message.kind == MessageKind.DATA and message["group"] != "ring":
            seen.add(event.digest)
            group_ct.append(
                GroupCiphertext(
                    idx, event.tick, message["group"], message["lineage"], message["epoch"],
                    message["sealed"], event.principals,
                )
            )
        elif message.kind == MessageKind.REKEY:
            seen.add(event.digest)
            if message["mode"] == "group":
                group_ct.append(
                    GroupCiphertext(
                        idx, event.tick, message["group"], message["lineage"], message["epoch"],
                        message["sealed"], event.principals,
                    )
                )
            else:
                to = event.detail.split("to=", 1)[-1].split(":", 1)[0]
                pk_ct.append(PkCiphertext(idx, event.tick, to, message["sealed"]))
    return group_ct, pk_ct


@dataclass
class RekeyPoint:
    index: int  # position in the group's rekey order
    event_index: int
    tick: int
    lineage: str
    epoch: int


def _rekey_timeline(log: EventLog) -> dict:
    """Per-group ordered rekey points; lineage prefix names the group."""
    timeline: dict[str, list] = {}
    for idx, event in enumerate(log.events):
        if event.kind != "rekey" or event.detail.startswith("ring:"):
            continue
        match = _REKEY_RE.search(event.detail)
        if not match:
            continue
        lineage = match.group("lineage")
        epoch = int(match.group("epoch"))
        group = lineage.rsplit("-", 1)[0]
        points = timeline.setdefault(group, [])
        points.append(RekeyPoint(len(points), idx, event.tick, lineage, epoch))
    return timeline


def _key_position(timeline: dict, group: str, lineage: str, epoch: int) -> Optional[int]:
    for point in timeline.get(group, []):
        if point.lineage == lineage and point.epoch == epoch:
            return point.index
    return None


def _rekey_deliveries(log: EventLog) -> dict:
    """recipient -> [(deliver tick, carried lineage, carried epoch)].

    A sealed-to-member rekey carries the epoch in its header; a rekey sealed
    under the previous group key carries that header epoch plus one.
    """
    out: dict = {}
    for event in log.events:
        if event.kind != "deliver" or event.digest == "-":
            continue
        payload = log.payloads.get(event.digest)
        if payload is None or not payload.startswith(bytes([MessageKind.REKEY])):
            continue
        message = decode_message(payload)
        carried = message["epoch"] + (1 if message["mode"] == "group" else 0)
        recipient = _recipient_of(event)
        out.setdefault(recipient, []).append((event.tick, message["lineage"], carried))
    return out


def _stale_sender_excused(
    deliveries: dict, timeline: dict, sender: str, group: str, lineage: str, epoch: int, tick: int
) -> bool:
    """True when speaking under (lineage, epoch) at `tick` was honest
    staleness: a newer key had been minted, but the sender's copy of that
    rekey had not reached it yet.  If no newer key exists at all, the
    missing rotation is precisely the violation and nothing is excused."""
    position = _key_position(timeline, group, lineage, epoch)
    points = timeline.get(group, [])
    if position is None or position >= len(points) - 1:
        return False
    for deliver_tick, got_lineage, got_epoch in deliveries.get(sender, []):
        if deliver_tick + 1 > tick:
            continue
        got_position = _key_position(timeline, group, got_lineage, got_epoch)
        if got_position is not None and got_position > position:
            return False  # it already held newer material and spoke old anyway
    return True


@dataclass
class MembershipChange:
    event_index: int
    tick: int
    node: str
    change: str  # "in" | "out"
    cause: str


def _membership_changes(log: EventLog) -> list:
    changes = []
    leaders: dict[str, str] = {}
    for idx, event in enumerate(log.events):
        if event.kind == "admit":
            changes.append(MembershipChange(idx, event.tick, _about_of(event), "in", event.detail))
        elif event.kind == "remove":
            changes.append(MembershipChange(idx, event.tick, _about_of(event), "out", event.detail))
        elif event.kind == "elect":
            group = event.detail.split("group=", 1)[-1].split(":", 1)[0]
            previous = leaders.get(group)
            if previous is not None and previous != event.principals:
                changes.append(MembershipChange(idx, event.tick, previous, "out", "leader_departure"))
            leaders[group] = event.principals
            changes.append(MembershipChange(idx, event.tick, event.principals, "in", "elected"))
    return changes


def _membership_intervals(log: EventLog) -> dict:
    """node -> list of (start tick, end tick or None)."""
    intervals: dict[str, list] = {}
    for change in _membership_changes(log):
        spans = intervals.setdefault(change.node, [])
        if change.change == "in":
            if not spans or spans[-1][1] is not None:
                spans.append([change.tick, None])
        else:
            if spans and spans[-1][1] is None:
                spans[-1][1] = change.tick
    return intervals


def _was_member_at(intervals: dict, node: str, tick: int) -> bool:
    for start, end in intervals.get(node, []):
        if start <= tick and (end is None or tick < end):
            return True
    return False


# ---------------------------------------------------------------------------
# The audit itself
# ---------------------------------------------------------------------------


def audit(log: EventLog) -> AuditReport:
    if not log.complete:
        raise SimulationError("event log is truncated (no completion marker)")
    provider = make_provider(log.registry.provider_name)
    results = [
        _check_backward_secrecy(log, provider),
        _check_forward_secrecy(log, provider),
        _check_mutual_auth(log),
        _check_chain_soundness(log, provider),
        _check_duplicate_suppression(log),
        _check_detection_outcomes(log),
        _check_epoch_monotonicity(log),
        _check_causality(log),
        _check_conservation(log),
        _check_secret_confinement(log),
    ]
    return AuditReport(results=results)


def _departures(log: EventLog) -> list:
    """(node, tick, event index) for every loss of membership."""
    out = []
    for change in _membership_changes(log):
        if change.change == "out":
            out.append((change.node, change.tick, change.event_index))
    return out


def _attempt_all(provider, knowledge: KnowledgeSet, sealed: bytes) -> bool:
    """True if any key in the knowledge set opens the ciphertext."""
    for key in knowledge.sym_keys:
        try:
            provider.sym_decrypt(key, sealed)
            return True
        except DecryptionError:
            continue
    return False


def _check_backward_secrecy(log: EventLog, provider) -> PropertyResult:
    group_ct, pk_ct = _collect_ciphertexts(log)
    timeline = _rekey_timeline(log)
    intervals = _membership_intervals(log)
    deliveries = _rekey_deliveries(log)
    failures = []
    for node, out_tick, out_idx in _departures(log):
        knowledge = knowledge_set(node, log)
        # Holding a group key minted after this departure is itself a leak,
        # unless a later re-admission covers it.
        for key, label in knowledge.sym_keys.items():
            if not label.startswith("group_key:"):
                continue
            _, lineage, epoch = label.split(":")
            group = lineage.rsplit("-", 1)[0]
            for point in timeline.get(group, []):
                if point.lineage == lineage and point.epoch == int(epoch):
                    if point.tick >= out_tick and not _was_member_at(intervals, node, point.tick):
                        failures.append(out_idx)
        for ct in group_ct:
            if ct.tick < out_tick + KEY_PROPAGATION_TICKS:
                continue
            if _was_member_at(intervals, node, ct.tick):
                continue
            # Only traffic a then-current member originated counts as group
            # traffic; stale chatter from an outsider is not protected data.
            if not _was_member_at(intervals, ct.sender, ct.tick):
                continue
            if _attempt_all(provider, knowledge, ct.sealed):
                if not _stale_sender_excused(
                    deliveries, timeline, ct.sender, ct.group, ct.lineage, ct.epoch, ct.tick
                ):
                    failures.append(ct.event_index)
        if knowledge.private_key is not None:
            for ct in pk_ct:
                if ct.tick < out_tick + KEY_PROPAGATION_TICKS or ct.recipient == node:
                    continue
                if _was_member_at(intervals, node, ct.tick):
                    continue
                try:
                    provider.pk_decrypt(knowledge.private_key, ct.sealed)
                    failures.append(ct.event_index)
                except Exception:
                    pass
    return PropertyResult("backward_secrecy", not failures, sorted(set(failures)))


def _check_forward_secrecy(log: EventLog, provider) -> PropertyResult:
    group_ct, _ = _collect_ciphertexts(log)
    timeline = _rekey_timeline(log)
    failures = []
    joins = [
        (idx, event)
        for idx, event in enumerate(log.events)
        if event.kind == "admit" and event.detail == "handshake"
    ]
    intervals = _membership_intervals(log)
    for join_idx, join_event in joins:
        node = _about_of(join_event)
        knowledge = knowledge_set(node, log)
        # Epochs inside earlier membership intervals of this node are its
        # own history, not "the past" this property protects.
        spans = [s for s in intervals.get(node, []) if s[0] < join_event.tick]
        for ct in group_ct:
            if ct.tick > join_event.tick:
                continue
            if not _was_member_at(intervals, ct.sender, ct.tick):
                continue
            legitimate = any(
                start <= ct.tick and (end is None or ct.tick < end) for start, end in spans
            )
            if legitimate:
                continue
            if _attempt_all(provider, knowledge, ct.sealed):
                failures.append(ct.event_index)
    return PropertyResult("forward_secrecy", not failures, sorted(set(failures)))


def _check_mutual_auth(log: EventLog) -> PropertyResult:
    zk_ok: set = set()
    cert_ok: set = set()
    failures = []
    for idx, event in enumerate(log.events):
        if event.kind == "verdict":
            if event.detail == "zk_ok":
                zk_ok.add(_about_of(event))
            elif event.detail == "cert_ok":
                cert_ok.add(_about_of(event))
        elif event.kind == "admit" and event.detail == "handshake":
            node = _about_of(event)
            if node not in zk_ok or node not in cert_ok:
                failures.append(idx)
            zk_ok.discard(node)
            cert_ok.discard(node)
    return PropertyResult("mutual_auth", not failures, failures)


def _check_chain_soundness(log: EventLog, provider) -> PropertyResult:
    failures = []
    for idx, event in enumerate(log.events):
        if event.kind != "verdict" or not event.detail.startswith("accept:") or event.digest == "-":
            continue
        payload = log.payloads.get(event.digest)
        if payload is None:
            failures.append(idx)
            continue
        message = decode_message(payload)
        expect = expected_chain(
            provider,
            message["source"],
            message["dest"],
            message["seq"],
            message["lifetime"],
            message["route"],
        )
        if expect != message["chain"]:
            failures.append(idx)
    return PropertyResult("chain_soundness", not failures, failures)


def _check_duplicate_suppression(log: EventLog) -> PropertyResult:
    seen = {}
    failures = []
    for idx, event in enumerate(log.events):
        if event.kind != "verdict" or not event.detail.startswith("rreq_processed:"):
            continue
        match = _SRC_SEQ_RE.search(event.detail)
        if not match:
            continue
        key = (_principal_of(event), match.group("source"), match.group("seq"))
        if key in seen:
            failures.append(idx)
        seen[key] = idx
    return PropertyResult("duplicate_suppression", not failures, failures)


def expectation_met(log: EventLog, expectation) -> tuple[bool, list]:
    kind, args = expectation.kind, expectation.args
    events = log.events

    def verdicts(node: str, prefix: str) -> list:
        return [
            i
            for i, e in enumerate(events)
            if e.kind == "verdict" and _principal_of(e) == node and e.detail.startswith(prefix)
        ]

    if kind == "route":
        source, dest = args
        hits = verdicts(source, f"route_installed:dest={dest}")
        return (bool(hits), hits)
    if kind == "no_route":
        source, dest = args
        hits = verdicts(source, f"route_installed:dest={dest}")
        return (not hits, hits)
    if kind == "verdict":
        node, prefix = args
        hits = verdicts(node, prefix)
        return (bool(hits), hits)
    if kind == "no_verdict":
        node, prefix = args
        hits = verdicts(node, prefix)
        return (not hits, hits)
    if kind == "admitted":
        (node,) = args
        hits = [
            i
            for i, e in enumerate(events)
            if e.kind == "admit" and _about_of(e) == node and e.detail == "handshake"
        ]
        return (bool(hits), hits)
    if kind == "not_admitted":
        (node,) = args
        hits = [
            i
            for i, e in enumerate(events)
            if e.kind == "admit" and _about_of(e) == node and e.detail == "handshake"
        ]
        return (not hits, hits)
    if kind == "session":
        a, b, status = args
        needle = f"session_{status}"
        hits = [
            i
            for i, e in enumerate(events)
            if e.kind == "verdict" and _about_of(e) == f"{a}-{b}" and e.detail.startswith(needle)
        ]
        return (bool(hits), hits)
    if kind == "alerted":
        (accused,) = args
        hits = [i for i, e in enumerate(events) if e.kind == "alert" and _about_of(e) == accused]
        return (bool(hits), hits)
    raise SimulationError(f"unknown expectation kind {kind!r}")


def _check_detection_outcomes(log: EventLog) -> PropertyResult:
    failures = []
    for n, expectation in enumerate(log.registry.expectations):
        ok, hits = expectation_met(log, expectation)
        if not ok:
            failures.append(hits[0] if hits else n)
    return PropertyResult("detection_outcomes", not failures, failures)


def _check_epoch_monotonicity(log: EventLog) -> PropertyResult:
    failures = []
    last: dict[str, int] = {}
    for idx, event in enumerate(log.events):
        if event.kind != "rekey" or event.detail.startswith("ring:"):
            continue
        match = _REKEY_RE.search(event.detail)
        if not match:
            continue
        lineage, epoch = match.group("lineage"), int(match.group("epoch"))
        if lineage in last and epoch <= last[lineage]:
            failures.append(idx)
        last[lineage] = epoch
    return PropertyResult("epoch_monotonicity", not failures, failures)


def _check_causality(log: EventLog) -> PropertyResult:
    sends = {}
    failures = []
    for idx, event in enumerate(log.events):
        match = _TX_RE.search(event.detail)
        if not match:
            continue
        tx = match.group("tx")
        if event.kind == "send":
            sends[tx] = (idx, event.tick)
        elif event.kind in ("deliver", "drop"):
            origin = sends.get(tx)
            hops_match = _HOPS_RE.search(event.detail)
            hops = int(hops_match.group("hops")) if hops_match else 1
            if origin is None or (event.kind == "deliver" and event.tick != origin[1] + hops):
                failures.append(idx)
    return PropertyResult("causality", not failures, failures)


def _check_conservation(log: EventLog) -> PropertyResult:
    outcomes: dict[tuple, int] = {}
    failures = []
    for idx, event in enumerate(log.events):
        if event.kind not in ("deliver", "drop"):
            continue
        match = _TX_RE.search(event.detail)
        if not match:
            continue
        key = (match.group("tx"), _recipient_of(event) or event.principals)
        if key in outcomes:
            failures.append(idx)
        outcomes[key] = idx
    return PropertyResult("conservation", not failures, failures)


def _check_secret_confinement(log: EventLog) -> PropertyResult:
    secrets = [
        value
        for _, _, label, value in log.registry.secrets
        if label.startswith("member_secret") and len(value) >= 8
    ]
    failures = []
    if secrets:
        for idx, event in enumerate(log.events):
            if event.digest == "-":
                continue
            payload = log.payloads.get(event.digest, b"")
            for secret in secrets:
                if secret in payload:
                    failures.append(idx)
                    break
    return PropertyResult("secret_confinement", not failures, failures)
