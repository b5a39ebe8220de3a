import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import freebsd_type_model, with_rule4
from helpers import FREEBSD_CPE, NaiveOracle, check_tree, random_model
from vulnposture.errors import InvalidModel, ModelError, NotApplicable
from vulnposture.model import (
    Component,
    ComponentType,
    Control,
    DesignModel,
    Link,
    Rule,
    Unlink,
    Upsert,
    Vulnerability,
    mutate,
)
from vulnposture.nvd import CveRecord, import_cves
from vulnposture.reasoner import (
    MAX_EXPLANATION_DEPTH,
    Basis,
    Evaluation,
    PostureReport,
    Verdict,
    check_design,
    cvulns,
    explain,
    mitigated,
    mitigated_v,
    vulnerable,
)

CVES = ("CVE-2011-2895", "CVE-2020-10565")


def _records():
    return [CveRecord(cid, "", ("CWE-119",), FREEBSD_CPE, None, "") for cid in CVES]


@pytest.fixture
def freebsd_model(scenario_a_mitigated):
    model = import_cves(freebsd_type_model(scenario_a_mitigated), _records(), FREEBSD_CPE)
    return mutate(model, Link("type", "OperatingSystem", FREEBSD_CPE))


# --- cvulns -----------------------------------------------------------------


def test_cvulns_application(scenario_a):
    assert cvulns(scenario_a, "Application") == ("CWE-119",)


def test_cvulns_empty_types():
    model = DesignModel(components=[Component("lonely")])
    assert cvulns(model, "lonely") == ()


def test_cvulns_operating_system_after_freebsd(freebsd_model):
    assert cvulns(freebsd_model, "OperatingSystem") == CVES


def test_cvulns_unknown_component(scenario_a):
    with pytest.raises(ModelError) as exc:
        cvulns(scenario_a, "Nope")
    assert exc.value.code == "unknown-component"


# --- mitigated_v / mitigated -------------------------------------------------


def test_mitigated_v_with_control(scenario_a_mitigated):
    witness = mitigated_v(scenario_a_mitigated, "CWE-119", "Application")
    assert witness == ("rule1", "internally_developed_application")


def test_mitigated_v_without_control(scenario_a):
    assert mitigated_v(scenario_a, "CWE-119", "Application") is None


def test_rule_without_controls_mitigates(scenario_a):
    model = mutate(scenario_a, Upsert(Rule("rule0", rvulns={"CWE-119"}, rtypes={"internally_developed_application"})))
    assert mitigated_v(model, "CWE-119", "Application").rule == "rule0"


def test_witness_is_lexicographically_first_rule(scenario_a_mitigated):
    model = mutate(
        scenario_a_mitigated,
        Upsert(Rule("a-rule", rvulns={"CWE-119"}, rtypes={"internally_developed_application"})),
    )
    assert mitigated_v(model, "CWE-119", "Application").rule == "a-rule"


def test_unknown_ids(scenario_a):
    with pytest.raises(ModelError) as exc:
        mitigated(scenario_a, "CWE-1", "Application")
    assert exc.value.code == "unknown-vulnerability"
    with pytest.raises(ModelError) as exc:
        mitigated(scenario_a, "CWE-119", "X")
    assert exc.value.code == "unknown-component"


def test_indirect_mitigation_through_cwe(freebsd_model):
    model = with_rule4(freebsd_model)
    assert mitigated_v(model, "CVE-2020-10565", "OperatingSystem") is None
    assert mitigated(model, "CVE-2020-10565", "OperatingSystem")


def test_parent_outside_cvulns_still_counts(freebsd_model):
    # CWE-119 is not in CVULNS(OperatingSystem) but its mitigation carries over to the CVEs
    model = with_rule4(freebsd_model)
    assert "CWE-119" not in cvulns(model, "OperatingSystem")
    assert not vulnerable(model, "OperatingSystem").flag


def test_no_parents_no_rule_is_unmitigated():
    model = DesignModel(
        components=[Component("c", types={"t"})],
        component_types=[ComponentType("t", vulns={"CWE-1"})],
        vulnerabilities=[Vulnerability("CWE-1")],
    )
    assert not mitigated(model, "CWE-1", "c")


def test_all_parents_required():
    model = DesignModel(
        components=[Component("c", types={"t"}, controls={"s"})],
        component_types=[ComponentType("t", vulns={"CVE-2000-0001"})],
        vulnerabilities=[
            Vulnerability("CVE-2000-0001", avulns={"CWE-1", "CWE-2"}),
            Vulnerability("CWE-1"),
            Vulnerability("CWE-2"),
        ],
        controls=[Control("s")],
        rules=[Rule("r", rvulns={"CWE-1"}, rtypes={"t"}, rcontrols={"s"})],
    )
    assert not mitigated(model, "CVE-2000-0001", "c")
    model = mutate(model, Link("rule-vuln", "r", "CWE-2"))
    assert mitigated(model, "CVE-2000-0001", "c")


def test_refuses_invalid_model():
    model = DesignModel(
        components=[Component("c")],
        vulnerabilities=[Vulnerability("A-1", avulns={"A-2"}), Vulnerability("A-2", avulns={"A-1"})],
    )
    with pytest.raises(InvalidModel):
        check_design(model)
    with pytest.raises(InvalidModel):
        mitigated(model, "A-1", "c")


def test_deep_chain_does_not_recurse():
    n = 5000
    vulns = [Vulnerability(f"W-{i}", avulns={f"W-{i + 1}"} if i < n - 1 else set()) for i in range(n)]
    model = DesignModel(
        components=[Component("c", types={"t"})],
        component_types=[ComponentType("t", vulns={"W-0"})],
        vulnerabilities=vulns,
        rules=[Rule("r", rvulns={f"W-{n - 1}"}, rtypes={"t"})],
    )
    assert mitigated(model, "W-0", "c")


# --- vulnerable / check_design -----------------------------------------------


def test_vulnerable_pre_and_post_control(scenario_a, scenario_a_mitigated):
    assert vulnerable(scenario_a, "Application") == (True, ("CWE-119",))
    assert vulnerable(scenario_a_mitigated, "Application") == (False, ())


def test_freebsd_patches(freebsd_model):
    assert vulnerable(freebsd_model, "OperatingSystem") == (True, CVES)
    model = freebsd_model
    for rule, cve, patch in (("rule2", "CVE-2020-10565", "patch_r525916"), ("rule3", "CVE-2011-2895", "patch_libxfont_lzw")):
        model = mutate(model, Upsert(Control(patch)))
        model = mutate(model, Upsert(Rule(rule, rvulns={cve}, rtypes={FREEBSD_CPE}, rcontrols={patch})))
        model = mutate(model, Link("control", "OperatingSystem", patch))
    assert vulnerable(model, "OperatingSystem") == (False, ())


def test_check_design_scenario_a(scenario_a):
    report = check_design(scenario_a)
    assert not report.property_holds
    assert report.counterexamples == [("Application", "CWE-119")]
    assert [p.component for p in report.per_component] == ["Application", "OperatingSystem"]


def test_check_design_empty():
    report = check_design(DesignModel())
    assert report.property_holds and report.per_component == ()


def test_check_design_final_model(freebsd_model):
    report = check_design(with_rule4(freebsd_model))
    assert report.property_holds
    assert set(report.explanations) == {
        ("Application", "CWE-119"),
        ("OperatingSystem", "CVE-2011-2895"),
        ("OperatingSystem", "CVE-2020-10565"),
    }


def test_report_round_trips_through_dict(freebsd_model):
    report = check_design(freebsd_model)
    assert PostureReport.from_dict(report.as_dict()) == report


def test_report_is_deterministic(freebsd_model):
    assert check_design(freebsd_model).as_dict() == check_design(freebsd_model).as_dict()


# --- explain -------------------------------------------------------------------


def test_explain_pre_control(scenario_a):
    node = explain(scenario_a, "Application", "CWE-119")
    assert node.verdict is Verdict.UNMITIGATED and node.basis is Basis.NONE
    (cand,) = node.candidates
    assert cand.rule == "rule1"
    assert cand.type_match == ("internally_developed_application",)
    assert cand.missing_controls == ("use_memory_safe_languages",)
    assert check_tree(node, scenario_a, "Application")


def test_explain_rule4(freebsd_model):
    model = with_rule4(freebsd_model)
    node = explain(model, "OperatingSystem", "CVE-2011-2895")
    assert node.verdict is Verdict.MITIGATED and node.basis is Basis.ABSTRACTION
    (child,) = node.children
    assert (child.vulnerability, child.verdict, child.basis, child.rule) == (
        "CWE-119",
        Verdict.MITIGATED,
        Basis.DIRECT_RULE,
        "rule4",
    )
    assert check_tree(node, model, "OperatingSystem")


def test_explain_fully_unaddressed():
    model = DesignModel(
        components=[Component("c", types={"t"})],
        component_types=[ComponentType("t", vulns={"CWE-1"})],
        vulnerabilities=[Vulnerability("CWE-1")],
    )
    node = explain(model, "c", "CWE-1")
    assert node.basis is Basis.NONE and node.candidates == () and node.children == ()


def test_explain_not_applicable(scenario_a):
    with pytest.raises(NotApplicable):
        explain(scenario_a, "OperatingSystem", "CWE-119")


def test_explanation_depth_cap():
    n = MAX_EXPLANATION_DEPTH + 5
    vulns = [Vulnerability(f"W-{i}", avulns={f"W-{i + 1}"} if i < n - 1 else set()) for i in range(n)]
    model = DesignModel(
        components=[Component("c", types={"t"})],
        component_types=[ComponentType("t", vulns={"W-0"})],
        vulnerabilities=vulns,
        rules=[Rule("r", rvulns={f"W-{n - 1}"}, rtypes={"t"})],
    )
    node = explain(model, "c", "W-0")
    depth = 0
    while node.children:
        (node,) = node.children
        depth += 1
    assert depth == MAX_EXPLANATION_DEPTH and node.truncated


# --- properties -------------------------------------------------------------------

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@settings(max_examples=150, deadline=None)
@given(seeds)
def test_memoised_matches_naive(seed):
    model = random_model(random.Random(seed))
    oracle = NaiveOracle(model)
    ev = Evaluation(model)
    for c in model.components:
        for v in model.vulnerabilities:
            assert ev.mitigated(v.id, c.id) == oracle.mitigated(v.id, c.id)


@settings(max_examples=150, deadline=None)
@given(seeds)
def test_explanations_are_sound(seed):
    model = random_model(random.Random(seed))
    report = check_design(model)
    for (c, _), node in report.explanations.items():
        assert check_tree(node, model, c)


@settings(max_examples=150, deadline=None)
@given(seeds)
def test_report_invariants(seed):
    report = check_design(random_model(random.Random(seed)))
    assert report.property_holds == all(not p.vulnerable for p in report.per_component)
    for p in report.per_component:
        assert set(p.unmitigated) <= set(p.cvulns)
        assert p.vulnerable == bool(p.unmitigated)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_unlinking_a_control_is_antitone(seed):
    rng = random.Random(seed)
    model = random_model(rng)
    comp = rng.choice(model.components)
    if not comp.controls:
        return
    reduced = mutate(model, Unlink("control", comp.id, rng.choice(sorted(comp.controls))))
    before, after = Evaluation(model), Evaluation(reduced)
    for v in model.vulnerabilities:
        if after.mitigated(v.id, comp.id):
            assert before.mitigated(v.id, comp.id)
