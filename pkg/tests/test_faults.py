import pytest

from maskmpc import faults


def test_enough_distinct_attacks():
    assert len(faults.SCENARIOS) >= 8
    assert {s.attacker for s in faults.SCENARIOS.values()} >= {0, 1, 2, 3}


@pytest.mark.parametrize("name", sorted(faults.SCENARIOS))
def test_scenario_outcome(name):
    scenario = faults.SCENARIOS[name]
    result = faults.run_scenario(scenario)
    assert result.fired > 0, "the script never matched a message"
    assert len(set(result.honest.values())) == 1, result.honest
    assert all(result.correct.values()), "an honest party accepted a wrong product"
    if scenario.mode == "abort":
        assert result.outcome == "abort"
    else:
        assert result.outcome in ("ok", "fair-⊥")
    assert result.passed


def test_seed_does_not_change_the_verdict():
    scenario = faults.SCENARIOS["swift-mult-tamper"]
    assert faults.run_scenario(scenario, seed="other").outcome == "abort"
