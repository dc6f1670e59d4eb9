import random

import pytest

from manetsec import encoding
from manetsec.crypto import DecryptionError, KeyKind
from manetsec.keymgmt import (
    Certificate,
    CertificateAuthority,
    JoinConfig,
    JoinPhase,
    LeaderKeyService,
    MemberKeyService,
    SessionPhase,
    SessionService,
    check_certificate,
    derive_member_key,
    generate_group_key,
    leader_ring_agree,
)
from manetsec.messages import MessageKind
from manetsec.runtime import Ctx


def make_ctx(name, now, rng, provider):
    return Ctx(name=name, now=now, rng=rng, provider=provider)


@pytest.fixture
def world(provider):
    rng = random.Random(1234)
    authority = CertificateAuthority(provider, rng)

    class World:
        pass

    w = World()
    w.provider = provider
    w.rng = rng
    w.authority = authority
    w.keys = {}
    w.certs = {}
    for name in ("L", "M1", "M2", "N"):
        w.keys[name] = provider.generate_keypair(rng)
        w.certs[name] = authority.issue(name, w.keys[name].public)
    w.leader = LeaderKeyService(
        "L", "g1", "g1-1", w.keys["L"], provider, rng, authority.public, capacity=8
    )
    return w


# ---------------------------------------------------------------------------
# Keys and certificates
# ---------------------------------------------------------------------------


def test_derive_member_key_deterministic(provider):
    a = derive_member_key(7, 123456789, provider)
    b = derive_member_key(7, 123456789, provider)
    assert a.bytes == b.bytes
    assert a.kind == KeyKind.MEMBER


def test_derive_member_key_distinct_across_ids(provider):
    secret = 987654321
    keys = {derive_member_key(i, secret, provider).bytes for i in range(1, 65)}
    assert len(keys) == 64


def test_derive_member_key_distinct_across_secrets(provider, rng):
    seen = set()
    for _ in range(1000):
        seen.add(derive_member_key(5, rng.getrandbits(128), provider).bytes)
    assert len(seen) == 1000


def test_group_key_freshness(provider, rng):
    k1 = generate_group_key(rng, provider)
    k2 = generate_group_key(rng, provider)
    assert k1.bytes != k2.bytes


def test_certificate_roundtrip(provider, rng):
    authority = CertificateAuthority(provider, rng)
    pair = provider.generate_keypair(rng)
    cert = authority.issue("node", pair.public)
    assert check_certificate(provider, authority.public, cert)
    forged = Certificate("node", pair.public, rng.randbytes(32))
    assert not check_certificate(provider, authority.public, forged)
    resubjected = Certificate("other", pair.public, cert.authority_sig)
    assert not check_certificate(provider, authority.public, resubjected)


# ---------------------------------------------------------------------------
# Join handshake (service level, messages ferried by hand)
# ---------------------------------------------------------------------------


def run_join(w, joiner_name, tamper=None, max_steps=20):
    """Ferry messages between leader and joiner; returns all envelopes."""
    member = MemberKeyService(
        joiner_name, w.keys[joiner_name], w.certs[joiner_name], w.provider
    )
    now = [0]
    transcript = []

    def deliver(envelopes):
        now[0] += 1
        for env in envelopes:
            if tamper is not None:
                env = tamper(env) or env
            transcript.append(env)
            ctx = make_ctx("?", now[0], w.rng, w.provider)
            if env.message.kind in (
                MessageKind.JOIN_REQ,
                MessageKind.ZK_CHALLENGE,
                MessageKind.CERT,
                MessageKind.NONCE,
            ):
                ctx.name = "L"
                w.leader.handle_join(env.message, ctx)
            elif env.message.kind in (
                MessageKind.ZK_PARAMS,
                MessageKind.ZK_RESPONSE,
                MessageKind.ADMIT,
                MessageKind.MEMBER_SET,
            ):
                ctx.name = joiner_name
                member.handle_join(env.message, ctx)
            else:
                continue
            deliver(ctx.outbound)

    ctx = make_ctx(joiner_name, 0, w.rng, w.provider)
    member.begin_join("L", ctx)
    deliver(ctx.outbound)
    return member, transcript


def test_honest_join_admits_and_rekeys(world):
    before_epoch = world.leader.hierarchy.epoch
    member, transcript = run_join(world, "N")
    assert member.join.phase == JoinPhase.ADMITTED
    assert world.leader.join_sessions["N"].phase == JoinPhase.ADMITTED
    assert "N" in world.leader.hierarchy.members()
    assert world.leader.hierarchy.epoch == before_epoch + 1
    kinds = [env.message.kind for env in transcript]
    assert kinds == [
        MessageKind.JOIN_REQ,
        MessageKind.ZK_PARAMS,
        MessageKind.ZK_CHALLENGE,
        MessageKind.ZK_RESPONSE,
        MessageKind.CERT,
        MessageKind.ADMIT,
        MessageKind.NONCE,
        MessageKind.MEMBER_SET,
        MessageKind.REKEY,
    ]
    # The joiner ends up holding the same group key the leader now uses.
    assert member.group_key.bytes == world.leader.hierarchy.group_key.bytes
    assert member.member_key.bytes == world.leader.hierarchy.member_keys["N"].bytes
    assert member.member_id == world.leader.hierarchy.member_ids["N"]


def test_join_rejected_on_forged_certificate(world):
    def tamper(env):
        if env.message.kind == MessageKind.CERT:
            return env.message and env.__class__(
                message=env.message.replace(authority_sig=b"\x00" * 32),
                sender=env.sender,
                to=env.to,
                channel=env.channel,
            )

    member, _ = run_join(world, "N", tamper=tamper)
    assert world.leader.join_sessions["N"].phase == JoinPhase.REJECTED
    assert "N" not in world.leader.hierarchy.members()


def test_join_rejected_at_capacity(world):
    world.leader.capacity = 1  # leader alone fills the group
    member, transcript = run_join(world, "N")
    assert world.leader.join_sessions["N"].phase == JoinPhase.REJECTED
    assert len(transcript) == 1  # nothing after the request


def test_join_aborts_when_response_invalid(world):
    def tamper(env):
        if env.message.kind == MessageKind.ZK_RESPONSE:
            bad = [r + 1 for r in env.message["responses"]]
            return env.__class__(
                message=env.message.replace(responses=bad),
                sender=env.sender,
                to=env.to,
                channel=env.channel,
            )

    member, transcript = run_join(world, "N", tamper=tamper)
    assert member.join.phase == JoinPhase.REJECTED
    kinds = [env.message.kind for env in transcript]
    assert MessageKind.CERT not in kinds  # node never reveals its certificate


def test_out_of_order_message_rejects_session(world):
    ctx = make_ctx("L", 0, world.rng, world.provider)
    from manetsec.messages import msg

    world.leader.handle_join(msg(MessageKind.JOIN_REQ, requester="N"), ctx)
    # Skipping the challenge: certificate arrives too early.
    cert = world.certs["N"]
    world.leader.handle_join(
        msg(
            MessageKind.CERT,
            subject="N",
            subject_public=cert.subject_public,
            authority_sig=cert.authority_sig,
        ),
        ctx,
    )
    assert world.leader.join_sessions["N"].phase == JoinPhase.REJECTED


def test_rekey_broadcast_decrypts_only_with_old_key(world, rng):
    # Founding member M1 follows the epoch chain; an outsider cannot.
    ctx = make_ctx("L", 0, rng, world.provider)
    world.leader.found_group([("M1", world.keys["M1"].public)], ctx, "founding")
    m1 = MemberKeyService("M1", world.keys["M1"], world.certs["M1"], world.provider)
    for env in ctx.outbound:
        if env.to == "M1":
            m1.handle_rekey(env.message, make_ctx("M1", 1, rng, world.provider))
    assert m1.group_key.bytes == world.leader.hierarchy.group_key.bytes

    _, transcript = run_join(world, "N")
    rekey = next(e for e in transcript if e.message.kind == MessageKind.REKEY)
    m1_ctx = make_ctx("M1", 2, rng, world.provider)
    m1.handle_rekey(rekey.message, m1_ctx)
    assert m1.epoch == world.leader.hierarchy.epoch
    assert m1.group_key.bytes == world.leader.hierarchy.group_key.bytes

    outsider = MemberKeyService("M2", world.keys["M2"], world.certs["M2"], world.provider)
    out_ctx = make_ctx("M2", 2, rng, world.provider)
    outsider.handle_rekey(rekey.message, out_ctx)
    assert outsider.group_key is None
    assert any("rekey_undecryptable" in n.detail for n in out_ctx.notes)


def test_remove_member_rotates_and_excludes(world, rng):
    ctx = make_ctx("L", 0, rng, world.provider)
    world.leader.found_group(
        [("M1", world.keys["M1"].public), ("M2", world.keys["M2"].public)], ctx, "founding"
    )
    epoch_before = world.leader.hierarchy.epoch
    ctx2 = make_ctx("L", 5, rng, world.provider)
    world.leader.remove_member("M2", "silent_timeout", ctx2)
    assert "M2" not in world.leader.hierarchy.members()
    assert world.leader.hierarchy.epoch == epoch_before + 1
    rekeys = [e for e in ctx2.outbound if e.message.kind == MessageKind.REKEY]
    assert [e.to for e in rekeys] == ["M1"]
    # M1 can open its copy; the removed member cannot.
    sealed = rekeys[0].message["sealed"]
    plain = world.provider.pk_decrypt(world.keys["M1"].private, sealed)
    fields = encoding.decode(plain)
    assert fields[0] == world.leader.hierarchy.group_key.bytes
    with pytest.raises(DecryptionError):
        world.provider.pk_decrypt(world.keys["M2"].private, sealed)


def test_remove_unknown_member_warns(world, rng):
    ctx = make_ctx("L", 0, rng, world.provider)
    world.leader.remove_member("ghost", "silent_timeout", ctx)
    assert any("remove_unknown_member" in n.detail for n in ctx.notes)
    assert not ctx.outbound


def test_misbehavior_removal_alerts_ring(world, rng):
    ctx = make_ctx("L", 0, rng, world.provider)
    world.leader.found_group([("M1", world.keys["M1"].public)], ctx, "founding")
    ctx2 = make_ctx("L", 5, rng, world.provider)
    world.leader.remove_member("M1", "misbehavior", ctx2)
    alerts = [e for e in ctx2.outbound if e.message.kind == MessageKind.MALICIOUS_ALERT]
    assert len(alerts) == 1 and alerts[0].channel == "ring"


def test_liveness_bookkeeping(world, rng):
    ctx = make_ctx("L", 0, rng, world.provider)
    world.leader.found_group([("M1", world.keys["M1"].public)], ctx, "founding")
    # Heartbeats every 10 ticks against a deadline of 30 never expire.
    for t in range(10, 101, 10):
        world.leader.record_heartbeat("M1", t)
        assert world.leader.check_liveness(t, 30) == []
    # 31 ticks of silence does.
    assert world.leader.check_liveness(131, 30) == ["M1"]
    assert world.leader.check_liveness(130, 30) == []


# ---------------------------------------------------------------------------
# Pairwise sessions
# ---------------------------------------------------------------------------


class SessionWorld:
    def __init__(self, provider):
        self.provider = provider
        self.rng = random.Random(777)
        self.authority = CertificateAuthority(provider, self.rng)
        self.keys = {n: provider.generate_keypair(self.rng) for n in ("A", "B", "L")}
        self.a = SessionService("A", self.keys["A"], provider, freshness_window=50)
        self.b = SessionService("B", self.keys["B"], provider, freshness_window=50)
        self.leader = LeaderKeyService(
            "L", "g1", "g1-1", self.keys["L"], provider, self.rng, self.authority.public, 8
        )
        ctx = make_ctx("L", 0, self.rng, provider)
        self.leader.found_group(
            [("A", self.keys["A"].public), ("B", self.keys["B"].public)], ctx, "founding"
        )
        self.leader_public = self.keys["L"].public

    def ctx(self, name, now):
        return make_ctx(name, now, self.rng, self.provider)

    def pump(self, envelopes, now):
        """One delivery round; returns the next outbound batch."""
        produced = []
        for env in envelopes:
            ctx = self.ctx(env.to, now)
            kind = env.message.kind
            if kind == MessageKind.PUBKEY_QUERY:
                self.leader.handle_pubkey_query(env.message, env.sender, ctx)
            elif kind == MessageKind.PUBKEY_ANSWER:
                target = self.a if env.to == "A" else self.b
                target.handle_pubkey_answer(env.message, self.leader_public, ctx)
            elif kind == MessageKind.SESSION_1:
                self.b.handle_session1(env.message, "L", ctx)
            elif kind == MessageKind.SESSION_2:
                self.a.handle_session2(env.message, ctx)
            elif kind == MessageKind.SESSION_3:
                self.b.handle_session3(env.message, ctx)
            elif kind == MessageKind.SESSION_4:
                self.a.handle_session4(env.message, ctx)
            produced.extend(ctx.outbound)
        return produced


@pytest.fixture
def sessions(provider):
    return SessionWorld(provider)


def test_session_confirms_with_leader_lookup(sessions):
    ctx = sessions.ctx("A", 10)
    sessions.a.initiate("B", "L", ctx)
    batch = ctx.outbound
    now = 10
    for _ in range(10):
        if not batch:
            break
        now += 1
        batch = sessions.pump(batch, now)
    sa = sessions.a.sessions[("A", "B")]
    sb = sessions.b.sessions[("A", "B")]
    assert sa.phase == SessionPhase.CONFIRMED
    assert sb.phase == SessionPhase.CONFIRMED
    assert sa.key.bytes == sb.key.bytes
    # Both sides resolved the peer key through the leader, not a priori.
    assert "B" in sessions.a.directory and "A" in sessions.b.directory


def test_session_stale_timestamp_aborts(sessions):
    ctx = sessions.ctx("A", 10)
    sessions.a.initiate("B", "L", ctx)
    batch = ctx.outbound
    batch = sessions.pump(batch, 11)  # query
    batch = sessions.pump(batch, 12)  # answer -> SESSION_1 emitted
    assert batch and batch[0].message.kind == MessageKind.SESSION_1
    late = sessions.pump(batch, 100)  # delivered past the freshness window
    sb = sessions.b.sessions[("A", "B")]
    assert sb.phase == SessionPhase.ABORTED
    assert not late or all(e.message.kind != MessageKind.SESSION_2 for e in late)


def test_session_replayed_key_message_aborts(sessions):
    ctx = sessions.ctx("A", 10)
    sessions.a.initiate("B", "L", ctx)
    batch = ctx.outbound
    now = 10
    captured_s3 = None
    for _ in range(10):
        if not batch:
            break
        now += 1
        for env in batch:
            if env.message.kind == MessageKind.SESSION_3:
                captured_s3 = env
        batch = sessions.pump(batch, now)
    assert captured_s3 is not None
    assert sessions.b.sessions[("A", "B")].phase == SessionPhase.CONFIRMED
    # A fresh exchange starts with the same initiation timestamp; replaying
    # the old key message matches on it but carries the old response
    # timestamp, which is the discriminator.
    old_t_a = sessions.a.sessions[("A", "B")].t_a
    ctx2 = sessions.ctx("A", old_t_a)
    sessions.a.initiate("B", "L", ctx2)
    batch = ctx2.outbound  # SESSION_1 directly; keys are cached now
    batch = sessions.pump(batch, 40)  # B responds with t_b = 40
    assert sessions.b.sessions[("A", "B")].phase == SessionPhase.RESPONDED
    replay_ctx = sessions.ctx("B", 41)
    sessions.b.handle_session3(captured_s3.message, replay_ctx)
    sb = sessions.b.sessions[("A", "B")]
    assert sb.phase == SessionPhase.ABORTED
    assert any("timestamp_mismatch" in n.detail for n in replay_ctx.notes)


def test_session_unmatched_key_message_ignored(sessions):
    # A key message for no live exchange is rejected outright.
    ctx = sessions.ctx("A", 10)
    sessions.a.initiate("B", "L", ctx)
    batch = ctx.outbound
    now = 10
    captured_s3 = None
    for _ in range(10):
        if not batch:
            break
        now += 1
        for env in batch:
            if env.message.kind == MessageKind.SESSION_3:
                captured_s3 = env
        batch = sessions.pump(batch, now)
    replay_ctx = sessions.ctx("B", 30)
    sessions.b.handle_session3(captured_s3.message, replay_ctx)
    assert any("no_matching_exchange" in n.detail for n in replay_ctx.notes)


def test_session_nonce_echo_mismatch_aborts(sessions):
    ctx = sessions.ctx("A", 10)
    sessions.a.initiate("B", "L", ctx)
    batch = ctx.outbound
    now = 10
    for _ in range(10):
        if not batch:
            break
        stop = None
        for env in batch:
            if env.message.kind == MessageKind.SESSION_4:
                # Corrupt the confirmation: re-encrypt wrong nonces.
                session = sessions.b.sessions[("A", "B")]
                bad = sessions.provider.sym_encrypt(
                    session.key, encoding.encode(session.nonce1 + 1, 5), sessions.rng
                )
                stop = env.message.replace(sealed=bad)
        if stop is not None:
            ctx4 = sessions.ctx("A", now + 1)
            sessions.a.handle_session4(stop, ctx4)
            assert sessions.a.sessions[("A", "B")].phase == SessionPhase.ABORTED
            return
        now += 1
        batch = sessions.pump(batch, now)
    pytest.fail("session never produced a confirmation message")


def test_leader_alert_for_unknown_peer(sessions):
    # B receives a session start from a name the leader does not know.
    rng = sessions.rng
    ghost_keys = sessions.provider.generate_keypair(rng)
    payload = encoding.encode("session1", "ghost", "B", 10)
    sig = sessions.provider.sign(ghost_keys.private, payload)
    plain = encoding.encode("ghost", "B", 10, sig.bytes)
    sealed = sessions.provider.pk_encrypt(sessions.keys["B"].public, plain, rng)
    from manetsec.messages import msg

    ctx = sessions.ctx("B", 11)
    sessions.b.handle_session1(msg(MessageKind.SESSION_1, sealed=sealed), "L", ctx)
    queries = [e for e in ctx.outbound if e.message.kind == MessageKind.PUBKEY_QUERY]
    assert queries
    leader_ctx = sessions.ctx("L", 12)
    sessions.leader.handle_pubkey_query(queries[0].message, "B", leader_ctx)
    alerts = [e for e in leader_ctx.outbound if e.message.kind == MessageKind.MALICIOUS_ALERT]
    assert alerts and alerts[0].message["accused"] == "ghost"
    alert_ctx = sessions.ctx("B", 13)
    sessions.b.handle_alert(alerts[0].message, sessions.leader_public, alert_ctx)
    assert sessions.b.sessions[("ghost", "B")].phase == SessionPhase.ABORTED
    assert "ghost" in sessions.b.distrusted


# ---------------------------------------------------------------------------
# Leader-ring agreement
# ---------------------------------------------------------------------------


def test_ring_two_leaders_matches_direct_exponentiation(provider):
    key = leader_ring_agree([("L1", 6), ("L2", 15)], provider, generator=5, modulus=23)
    # Independent oracle: both orders of direct exponentiation give 2.
    shared = pow(pow(5, 6, 23), 15, 23)
    assert shared == pow(pow(5, 15, 23), 6, 23) == 2
    expected = provider.hash(encoding.encode("ring-key", shared))[: provider.sym_key_size]
    assert key.bytes == expected
    assert key.kind == KeyKind.LEADER_RING


def test_ring_single_leader_degenerate(provider):
    key = leader_ring_agree([("L1", 6)], provider, generator=5, modulus=23)
    expected = provider.hash(encoding.encode("ring-key", pow(5, 6, 23)))[:32]
    assert key.bytes == expected


def test_ring_order_of_members_does_not_change_key(provider):
    a = leader_ring_agree([("L1", 6), ("L2", 15), ("L3", 11)], provider, 2, 1019)
    b = leader_ring_agree([("L3", 11), ("L1", 6), ("L2", 15)], provider, 2, 1019)
    assert a.bytes == b.bytes  # product of secrets is order-free
    # Oracle: three equal contributions nest to one exponent product.
    shared = pow(2, 6 * 15 * 11, 1019)
    assert a.bytes == provider.hash(encoding.encode("ring-key", shared))[:32]


def test_ring_key_changes_after_replacement(provider, rng):
    before = leader_ring_agree([("L1", 6), ("L2", 15)], provider, 5, 23)
    after = leader_ring_agree([("L1", 6), ("L3", 11)], provider, 5, 23)
    assert before.bytes != after.bytes


def test_ring_empty_rejected(provider):
    with pytest.raises(ValueError):
        leader_ring_agree([], provider)
