import numpy as np

from helpers import R64, run_op
from maskmpc import mult
from maskmpc.runtime import run
from maskmpc.transport import Action, AdversaryScript


def _session(program, fw="astra", **kw):
    return run(fw, program, **kw)


def test_send_is_metered_per_pair():
    def program(ctx):
        with ctx.gate("t"):
            if ctx.me == 1:
                ctx.send(2, np.zeros(1, dtype=np.uint64), R64)
            elif ctx.me == 2:
                ctx.recv_array(1, (1,), ring=R64)

    meter = _session(program).meter
    assert meter.pair("online", 1, 2) == 64
    assert meter.total("online") == 64


def test_independent_sends_take_one_round():
    def program(ctx):
        with ctx.gate("t"), ctx.round():
            if ctx.me in (1, 2):
                ctx.send(0, np.ones(2, dtype=np.uint64), R64)
            else:
                ctx.recv_array(1, (2,), ring=R64)
                ctx.recv_array(2, (2,), ring=R64)

    assert _session(program).meter.online_rounds == 1


def test_dependent_send_takes_two_rounds():
    def program(ctx):
        with ctx.gate("t"):
            if ctx.me == 1:
                ctx.send(2, np.ones(1, dtype=np.uint64), R64)
            elif ctx.me == 2:
                v = ctx.recv_array(1, (1,), ring=R64)
                ctx.send(0, v, R64)
            else:
                ctx.recv_array(2, (1,), ring=R64)

    assert _session(program).meter.online_rounds == 2


def test_empty_program_meters_nothing():
    meter = _session(lambda ctx: None).meter
    assert meter.summary() == {"pre": 0, "online": 0, "verify": 0, "provider": 0, "online_rounds": 0}


def _jsnd_program(calls):
    def program(ctx):
        got = None
        with ctx.gate("t"):
            for k in range(calls):
                v = np.full(1, 7 + k, dtype=np.uint64) if ctx.me in (1, 2) else None
                got = ctx.jsnd(1, 2, 3, v, (1,), R64, tag="v")
        return None if got is None else int(got[0])
    return program


def test_jsnd_delivers_and_amortizes_the_check():
    one = run("tetrad", _jsnd_program(1))
    many = run("tetrad", _jsnd_program(5))
    assert one.outputs[3] == 7 and many.outputs[3] == 11
    assert one.meter.total("online") == 64 and many.meter.total("online") == 5 * 64
    assert one.meter.total("verify") == many.meter.total("verify")


def test_jsnd_flipped_payload_aborts():
    script = AdversaryScript(1, [Action("flip", {"tag": "v"})])
    res = run("tetrad", _jsnd_program(1), script=script)
    assert {res.outcomes[p] for p in (0, 2, 3)} == {"abort"}


def test_jsnd_tampered_hash_aborts():
    script = AdversaryScript(2, [Action("flip", {"tag": "hashes", "receiver": 3})])
    res = run("tetrad", _jsnd_program(1), script=script)
    assert {res.outcomes[p] for p in (0, 1, 3)} == {"abort"}


def test_astra_mult_meter():
    a = np.arange(1, dtype=np.uint64) + 3
    _, res = run_op("astra", mult.mult, [a, a])
    assert res.meter.total("online") == 2 * 64


def test_tetrad_fair_silence_is_unanimous():
    a, b = np.array([3], dtype=np.uint64), np.array([5], dtype=np.uint64)
    script = AdversaryScript(2, [Action("silence", {"label": "frec", "tag": "alive"})])
    _, res = run_op("tetrad", mult.mult, [a, b], mode="fair", script=script)
    honest = {p: res.outcomes[p] for p in (0, 1, 3)}
    assert len(set(honest.values())) == 1
    if "ok" in honest.values():
        assert all(res.outputs[p][0] == 15 for p in honest)


def test_transcripts_are_deterministic():
    a = np.arange(4, dtype=np.uint64)
    lines = [run_op("swift", mult.mult, [a, a], record=True)[1].transcript_lines() for _ in range(2)]
    assert lines[0] == lines[1] and lines[0]
