"""Scripted single-party attacks on the actively secure frameworks.

Every scenario shares two vectors, multiplies them and opens the product,
with one party deviating as scripted. A scenario passes when the honest
parties agree on the outcome and none of them accepts a wrong value:
abort-mode openings must abort, fair-mode openings must end in a
unanimous bottom or the correct product.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mult
from .runtime import run
from .sharing import get_framework, reconstruct, share
from .transport import Action, AdversaryScript

OK, ABORT, BOTTOM = "ok", "abort", "fair-⊥"


@dataclass(frozen=True)
class Scenario:
    name: str
    framework: str
    mode: str  # abort | fair
    attacker: int
    actions: tuple
    description: str

    def script(self) -> AdversaryScript:
        return AdversaryScript(self.attacker, [Action(**a) for a in self.actions])


def _flip(**match) -> dict:
    return {"mutation": "flip", "match": match}


SCENARIOS = {s.name: s for s in [
    Scenario("tetrad-mult-tamper", "tetrad", "abort", 1, (_flip(label="mult", tag="y"),),
             "P1 sends a wrong y-share to P2"),
    Scenario("tetrad-mult-tamper-w", "tetrad", "abort", 0, (_flip(label="mult", tag="kw"),),
             "the helper sends a wrong w to the checking party"),
    Scenario("tetrad-jsnd-payload", "tetrad", "abort", 1, (_flip(label="mult", tag="m"),),
             "P1 forwards a wrong masked output in a joint send"),
    Scenario("swift-mult-tamper", "swift", "abort", 1, (_flip(label="mult", tag="y0"),),
             "P1 sends a wrong y-share to P2"),
    Scenario("swift-jsnd-payload", "swift", "abort", 1, (_flip(label="mult", tag="m"),),
             "P1 forwards a wrong masked output in a joint send"),
    Scenario("swift-open-payload", "swift", "abort", 2, (_flip(label="rec", tag="rec"),),
             "P2 sends a wrong share during opening"),
    Scenario("swift-fair-wrong-opening", "swift", "fair", 1, (_flip(label="frec", tag="open"),),
             "P1 opens a committed share to a different value"),
    Scenario("swift-fair-wrong-commitment", "swift", "fair", 1, (_flip(label="frec", tag="com"),),
             "P1 delivers a wrong commitment in preprocessing"),
    Scenario("swift-fair-silence", "swift", "fair", 1,
             ({"mutation": "silence", "match": {"label": "frec", "tag": "alive"}},),
             "P1 goes silent at the start of the fair opening"),
    Scenario("tetrad-fair-wrong-opening", "tetrad", "fair", 1, (_flip(label="frec", tag="fopen"),),
             "P1 sends a wrong share in the fair opening"),
    Scenario("tetrad-fair-wrong-hash", "tetrad", "fair", 3, (_flip(label="frec", tag="fopen-hash"),),
             "P3 sends a wrong hash in the fair opening"),
    Scenario("tetrad-fair-silence", "tetrad", "fair", 3,
             ({"mutation": "silence", "match": {"label": "frec", "tag": "alive"}},),
             "P3 goes silent at the start of the fair opening"),
    Scenario("tetrad-fair-tamper", "tetrad", "fair", 2, (_flip(label="mult", tag="y"),),
             "P2 tampers with a y-share before a fair opening"),
]}


@dataclass
class FaultResult:
    scenario: Scenario
    honest: dict  # party -> outcome
    correct: dict  # party -> output equals the product (ok outcomes only)
    fired: int

    @property
    def passed(self) -> bool:
        outcomes = set(self.honest.values())
        if self.fired == 0 or len(outcomes) != 1:
            return False
        if not all(self.correct.values()):
            return False
        outcome = outcomes.pop()
        if self.scenario.mode == "abort":
            return outcome == ABORT
        return outcome in (OK, BOTTOM)

    @property
    def outcome(self) -> str:
        outcomes = sorted(set(self.honest.values()))
        return outcomes[0] if len(outcomes) == 1 else "split:" + "/".join(outcomes)


def run_scenario(s: Scenario, seed: str = "0", size: int = 4) -> FaultResult:
    fw = get_framework(s.framework)
    rng = np.random.default_rng(7)
    a, b = (rng.integers(0, 1 << 20, size, dtype=np.uint64) for _ in range(2))
    p1, p2 = fw.online[0], fw.online[1]

    def program(ctx):
        with ctx.unmetered():
            x = share(ctx, p1, a if ctx.me == p1 else None, shape=a.shape)
            y = share(ctx, p2, b if ctx.me == p2 else None, shape=b.shape)
        z = mult.mult(ctx, x, y)
        return reconstruct(ctx, z, mode=s.mode)

    script = s.script()
    res = run(fw, program, seed=seed, script=script)
    want = (a * b).astype(np.uint64)
    honest = {p: res.outcomes[p] for p in fw.parties if p != s.attacker}
    correct = {p: np.array_equal(res.outputs[p], want) for p, o in honest.items() if o == OK}
    return FaultResult(s, honest, correct, script.fired)
