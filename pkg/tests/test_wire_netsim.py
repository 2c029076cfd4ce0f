import pytest
from hypothesis import given, settings, strategies as st

from sitan.consensus import Phase, make_bin_phase, make_mv_message, sign_vec_entry
from sitan.consensus.messages import BinDecided, Decision, ResultQuery, VecRow
from sitan.core import InstanceId, KeyDirectory, ProtocolTag, SimAuthenticator
from sitan.membership import GetNeighbors, Heartbeat, KnownSet
from sitan.netsim import LinkModel, Simulator, TopologyConfig
from sitan.wire import (AppMessage, SignedEnvelope, WireError, decode_envelope, decode_message,
                        encode_envelope)

KD = KeyDirectory(SimAuthenticator())
KEYS = [KD.create(i, seed=0) for i in range(4)]


def sample_messages():
    iid = InstanceId("w", ProtocolTag.BIN, 3)
    mid = InstanceId("w", ProtocolTag.MV)
    vid = InstanceId("w", ProtocolTag.VEC)
    conv = [make_bin_phase(KD.auth, KEYS[i], iid, 1, Phase.CONVERGE, 1, ()) for i in range(3)]
    lock = make_bin_phase(KD.auth, KEYS[3], iid, 1, Phase.LOCK, 1, conv)
    p0 = make_mv_message(KD.auth, KEYS[0], mid, 0, b"v")
    row = (sign_vec_entry(KD.auth, KEYS[0], vid, b"a"), None, sign_vec_entry(KD.auth, KEYS[2], vid, b""), None)
    return [
        AppMessage(b"hello"), Heartbeat(2, 7), GetNeighbors(1, (0, 2, 3)),
        KnownSet(0, 1, (0, 1, 2)), lock, BinDecided(iid, 3, 1, tuple(c.stripped for c in conv)),
        p0, make_mv_message(KD.auth, KEYS[1], mid, 1, b"v", [p0]),
        VecRow(vid, 0, (0, 1, 2, 3), row), Decision(mid, b"\x01v", 2, b"sig"), ResultQuery(mid, 1),
    ]


@pytest.mark.parametrize("msg", sample_messages(), ids=lambda m: type(m).__name__)
def test_message_roundtrip(msg):
    data = msg.encode()
    back = decode_message(data)
    assert back.encode() == data
    assert type(back) is type(msg)


def test_envelope_roundtrip_and_errors():
    env = SignedEnvelope(3, 99, ProtocolTag.RRB, AppMessage(b"x"), b"sig", (3, 1))
    data = encode_envelope(env)
    back = decode_envelope(data)
    assert (back.sender, back.seq, back.tag, back.visited, back.signature) == (3, 99, ProtocolTag.RRB, (3, 1), b"sig")
    with pytest.raises(WireError):
        decode_envelope(data + b"\x00")
    with pytest.raises(WireError):
        decode_envelope(b"\x02" + data[1:])
    with pytest.raises(WireError):
        decode_message(b"\xff")


@given(st.binary(max_size=200), st.integers(0, 2**32 - 1), st.integers(0, 2**64 - 1),
       st.lists(st.integers(0, 2**32 - 1), max_size=8))
def test_envelope_roundtrip_property(payload, sender, seq, visited):
    env = SignedEnvelope(sender, seq, ProtocolTag.BEB, AppMessage(payload), b"s" * 7, tuple(visited))
    back = decode_envelope(encode_envelope(env))
    assert encode_envelope(back) == encode_envelope(env)


# ---------------------------------------------------------------- simulator

def grid_sim(n=4, **link):
    sim = Simulator(n, TopologyConfig(), LinkModel(**link), seed=1, record_events=True)
    got = {i: [] for i in range(n)}
    for i in range(n):
        sim.attach(i, lambda env, i=i: got[i].append((sim.now, env)))
    return sim, got


def envelope(sender=0):
    return SignedEnvelope(sender, 1, ProtocolTag.BEB, AppMessage(b"m"), b"sig")


def test_four_node_room_gives_three_deliveries():
    sim, got = grid_sim()
    assert sim.radio_broadcast(0, envelope()) == 3
    sim.run()
    assert [len(got[i]) for i in range(4)] == [0, 1, 1, 1]
    for i in (1, 2, 3):
        t, _ = got[i][0]
        assert 1.0 <= t <= 5.0


def test_loss_and_duplication_extremes():
    sim, got = grid_sim(loss_probability=1.0)
    assert sim.radio_broadcast(0, envelope()) == 0
    sim, got = grid_sim(duplication_probability=1.0)
    assert sim.radio_broadcast(0, envelope()) == 6


def test_event_log_is_deterministic():
    logs = []
    for _ in range(2):
        sim, _ = grid_sim(loss_probability=0.3, duplication_probability=0.2)
        for k in range(20):
            sim.radio_broadcast(k % 4, envelope(k % 4))
        sim.run()
        logs.append(list(sim.event_log))
    assert logs[0] == logs[1] and logs[0]


def test_timers_periodic_one_shot_cancel_and_crash():
    sim = Simulator(2, seed=0)
    fired = []
    periodic = sim.set_timer(0, 10, True, lambda: fired.append(("p", sim.now)))
    sim.set_timer(0, 15, False, lambda: fired.append(("o", sim.now)))
    sim.set_timer(1, 5, True, lambda: fired.append(("crashed", sim.now)))
    sim.crash(1)
    sim.run(until=35)
    sim.cancel_timer(periodic)
    sim.run(until=100)
    assert fired == [("p", 10), ("o", 15), ("p", 20), ("p", 30)]
    with pytest.raises(ValueError):
        sim.set_timer(0, 0, False, lambda: None)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 20.0))
def test_mobility_stays_in_room(seed, speed):
    topo = TopologyConfig(kind="random_waypoint", width=6, height=4, radio_range=3, speed=speed)
    sim = Simulator(6, topo, seed=seed)
    for _ in range(50):
        pos = sim.mobility_step(100.0)
        assert (pos[:, 0] >= 0).all() and (pos[:, 0] <= 6).all()
        assert (pos[:, 1] >= 0).all() and (pos[:, 1] <= 4).all()
    adj = sim.adjacency
    assert (adj == adj.T).all() and not adj.diagonal().any()


def test_explicit_adjacency_override():
    sim = Simulator(4, seed=0)
    sim.set_adjacency([(0, 1), (1, 2)])
    assert sim.neighbors(1) == (0, 2) and sim.neighbors(3) == ()
    with pytest.raises(ValueError):
        Simulator(3, TopologyConfig(kind="explicit", positions=((0, 0),)))
