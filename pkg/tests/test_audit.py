import pytest

from manetsec.audit import audit, expectation_met, knowledge_set
from manetsec.sim import Action, Expectation, SimulationError, run
from topologies import churn_scenario, line_scenario, stealth_link_scenario


def test_clean_churn_run_passes_everything():
    report = audit(run(churn_scenario(seed=100)))
    assert report.passed, report.to_text()


def test_leaked_key_flagged_with_counterexample():
    report = audit(run(churn_scenario(seed=100, faults={"leak_key"})))
    result = report.result("backward_secrecy")
    assert not result.passed
    assert result.counterexamples


def test_skipped_rekey_flagged():
    report = audit(run(churn_scenario(seed=100, faults={"skip_rekey"})))
    assert not report.result("backward_secrecy").passed


def test_forged_admit_flagged():
    scenario = line_scenario(
        ["L", "M"],
        seed=9,
        script=[Action(3, "join", ("N", "g1"))],
        duration=30,
        faults={"forge_admit"},
    )
    from manetsec.sim import NodeSpec

    scenario.nodes.append(NodeSpec("N", [(50.0, 40.0)], 0.5))
    log = run(scenario)
    assert [e for e in log.events if e.kind == "admit" and e.detail == "handshake"]
    report = audit(log)
    result = report.result("mutual_auth")
    assert not result.passed and result.counterexamples


def test_truncated_log_rejected():
    log = run(stealth_link_scenario(seed=2))
    log.complete = False
    with pytest.raises(SimulationError):
        audit(log)


def test_unknown_principal_rejected():
    log = run(stealth_link_scenario(seed=2))
    with pytest.raises(SimulationError):
        knowledge_set("nobody", log)


def test_member_knowledge_contains_current_key_material():
    log = run(line_scenario(["L", "M1", "M2"], duration=20))
    k = knowledge_set("M1", log)
    assert k.has_key_labelled("group_key:g1-1:1")
    assert k.has_key_labelled("member_key")
    assert k.private_key is not None


def test_expectations_evaluate_against_log():
    scenario = stealth_link_scenario(seed=4)
    log = run(scenario)
    met, _ = expectation_met(log, Expectation("verdict", ("D", "reject:chain_mismatch")))
    assert met
    met, _ = expectation_met(log, Expectation("no_verdict", ("D", "accept:")))
    assert met
    met, _ = expectation_met(log, Expectation("route", ("S", "D")))
    assert not met
    met, _ = expectation_met(log, Expectation("no_route", ("S", "D")))
    assert met
    with pytest.raises(SimulationError):
        expectation_met(log, Expectation("wat", ()))


def test_detection_outcomes_uses_scenario_expectations():
    scenario = stealth_link_scenario(seed=4)
    scenario.expectations = [Expectation("verdict", ("D", "accept:"))]  # wrong on purpose
    report = audit(run(scenario))
    assert not report.result("detection_outcomes").passed


def test_report_text_has_one_line_per_property():
    report = audit(run(stealth_link_scenario(seed=4)))
    lines = report.to_text().strip().splitlines()
    assert len(lines) == len(report.results)
    assert all((": PASS" in line) or (": FAIL" in line) for line in lines)


def test_knowledge_is_tick_bounded():
    from manetsec.sim import Action, NodeSpec

    scenario = line_scenario(
        ["L", "M1"],
        seed=21,
        script=[Action(3, "join", ("N", "g1"))],
        duration=30,
    )
    scenario.nodes.append(NodeSpec("N", [(50.0, 40.0)], 0.5))
    log = run(scenario)
    admit = next(e for e in log.events if e.kind == "admit" and e.detail == "handshake")
    before = knowledge_set("N", log, tick=admit.tick - 5)
    after = knowledge_set("N", log)
    assert not before.has_key_labelled("group_key")
    assert after.has_key_labelled("group_key:g1-1:2")


def test_stale_sender_during_rekey_flight_is_not_a_violation():
    # The speaker sits many hops from the leader: its copy of the rekey is
    # still traveling when it chats under the retired epoch. The departed
    # node can read that chat, but nobody did anything wrong.
    from manetsec.sim import Action

    names = ["L", "a", "b", "c", "d", "e", "far"]
    scenario = line_scenario(
        names,
        seed=77,
        script=[
            Action(20, "leave", ("a",)),
            Action(23, "send_data", ("far", "*", "stale chat")),
            Action(40, "send_data", ("far", "*", "fresh chat")),
        ],
        duration=60,
    )
    scenario.nodes[0].battery = 1.0  # keep the leader at one end
    log = run(scenario)
    report = audit(log)
    assert report.result("backward_secrecy").passed, report.to_text()


def test_stale_sender_after_rekey_arrival_is_a_violation():
    # Same shape, but the leader skipped the rotation: the late chat is
    # sealed under a key the departed node holds and the sender has no
    # newer material coming, so this one must be flagged.
    from manetsec.sim import Action

    scenario = line_scenario(
        ["L", "a", "b"],
        seed=78,
        script=[
            Action(20, "leave", ("a",)),
            Action(35, "send_data", ("b", "*", "still old key")),
        ],
        duration=60,
        faults={"skip_rekey"},
    )
    scenario.nodes[0].battery = 1.0
    log = run(scenario)
    assert not audit(log).result("backward_secrecy").passed
