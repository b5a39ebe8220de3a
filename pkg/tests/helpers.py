"""Independent oracles and random model generation for the test suite.

The oracle works on plain dicts taken from the serialised document, not on
the reasoner's data structures, and evaluates the mitigation recursion
literally with no memoisation.
"""

from __future__ import annotations

import random
from pathlib import Path

from vulnposture.model import (
    Component,
    ComponentType,
    Control,
    Delete,
    DesignModel,
    Link,
    Rule,
    Unlink,
    Upsert,
    Vulnerability,
)
from vulnposture.persistence import model_to_document

FIXTURES = Path(__file__).parent / "fixtures"
FREEBSD_CPE = "cpe:2.3:o:freebsd:freebsd:14.0:-:*:*:*:*:*:*"


class NaiveOracle:
    def __init__(self, model: DesignModel) -> None:
        doc = model_to_document(model)
        self.types = {c["id"]: set(c["types"]) for c in doc["components"]}
        self.controls = {c["id"]: set(c["controls"]) for c in doc["components"]}
        self.vulns = {t["id"]: set(t["vulns"]) for t in doc["component_types"]}
        self.avulns = {v["id"]: set(v["avulns"]) for v in doc["vulnerabilities"]}
        self.rules = [(set(r["rvulns"]), set(r["rtypes"]), set(r["rcontrols"])) for r in doc["rules"]]
        self.rule_ids = [r["id"] for r in doc["rules"]]

    def cvulns(self, c):
        out = set()
        for t in self.types[c]:
            out |= self.vulns[t]
        return out

    def mitigated_v(self, v, c):
        return any(
            any(t in self.types[c] for t in rtypes)
            and v in rvulns
            and all(s in self.controls[c] for s in rcontrols)
            for rvulns, rtypes, rcontrols in self.rules
        )

    def mitigated(self, v, c):
        if self.mitigated_v(v, c):
            return True
        parents = self.avulns[v]
        return len(parents) > 0 and all(self.mitigated(p, c) for p in parents)

    def vulnerable(self, c):
        return any(not self.mitigated(v, c) for v in self.cvulns(c))

    def property_holds(self):
        return all(not self.vulnerable(c) for c in self.types)


def random_model(
    rng: random.Random,
    max_components: int = 8,
    max_vulns: int = 12,
    max_depth: int = 4,
    max_rules: int = 6,
    max_controls: int = 6,
    max_types: int = 5,
) -> DesignModel:
    """A valid random model whose abstraction DAG has longest path <= max_depth."""
    n_vulns = rng.randint(1, max_vulns)
    vids = [f"V{i:02d}" for i in range(n_vulns)]
    level = {v: rng.randint(0, max_depth) for v in vids}
    vulns = []
    for v in vids:
        higher = [p for p in vids if level[p] < level[v]]
        k = rng.randint(0, min(3, len(higher)))
        vulns.append(Vulnerability(v, avulns=rng.sample(higher, k)))

    tids = [f"T{i}" for i in range(rng.randint(1, max_types))]
    types = [ComponentType(t, vulns=rng.sample(vids, rng.randint(0, min(4, n_vulns)))) for t in tids]
    sids = [f"S{i}" for i in range(rng.randint(0, max_controls))]
    controls = [Control(s) for s in sids]

    rules = []
    for i in range(rng.randint(0, max_rules)):
        rules.append(
            Rule(
                f"R{i}",
                rvulns=rng.sample(vids, rng.randint(1, min(3, n_vulns))),
                rtypes=rng.sample(tids, rng.randint(0, min(2, len(tids)))),
                rcontrols=rng.sample(sids, rng.randint(0, min(2, len(sids)))),
            )
        )

    components = [
        Component(
            f"C{i}",
            types=rng.sample(tids, rng.randint(0, len(tids))),
            controls=rng.sample(sids, rng.randint(0, len(sids))),
        )
        for i in range(rng.randint(1, max_components))
    ]
    return DesignModel(components, types, vulns, controls, rules)


def random_change(rng: random.Random, model: DesignModel):
    """One arbitrary edit, often invalid; ids ending in 99 do not exist."""
    vids = [v.id for v in model.vulnerabilities] + ["V99"]
    tids = [t.id for t in model.component_types] + ["T99"]
    sids = [s.id for s in model.controls] + ["S99"]
    cids = [c.id for c in model.components] + ["C99"]
    rids = [r.id for r in model.rules] + ["R99"]
    pick = rng.choice
    choice = rng.randrange(9)
    if choice == 0:
        return Link("parent", pick(vids), pick(vids))
    if choice == 1:
        return Link(pick(["type", "control"]), pick(cids), pick(tids + sids))
    if choice == 2:
        return Link(pick(["rule-vuln", "rule-type", "rule-control"]), pick(rids), pick(vids + tids + sids))
    if choice == 3:
        return Unlink(pick(["parent", "vuln", "type"]), pick(vids + tids + cids), pick(vids + tids))
    if choice == 4:
        return Upsert(Vulnerability(pick(vids), avulns=rng.sample(vids, rng.randint(0, min(2, len(vids))))))
    if choice == 5:
        return Upsert(Component(pick(cids), types=rng.sample(tids, rng.randint(0, min(2, len(tids))))))
    if choice == 6:
        return Upsert(Rule(pick(rids), rvulns=rng.sample(vids, 1), rtypes=rng.sample(tids, 1), rcontrols=rng.sample(sids, 1)))
    if choice == 7:
        kind, pool = rng.choice([("vulnerability", vids), ("control", sids), ("component-type", tids)])
        return Delete(kind, pick(pool), cascade=rng.random() < 0.5)
    return Link("vuln", pick(tids), pick(vids))


def longest_abstraction_path(model: DesignModel) -> int:
    parents = {v.id: v.avulns for v in model.vulnerabilities}

    def depth(v):
        return max((1 + depth(p) for p in parents[v]), default=0)

    return max((depth(v) for v in parents), default=0)


def check_tree(node, model: DesignModel, component: str) -> bool:
    """Verify an explanation tree against the model independently of the reasoner.

    A ``mitigated`` tree must constitute a proof: a direct rule witness whose
    conditions hold, or an abstraction step over exactly the parent set with
    every child itself a valid mitigated proof.  An ``unmitigated`` tree must
    list every rule covering the vulnerability with an accurate failure
    reason and, if the vulnerability has parents, show at least one
    unmitigated parent subtree.
    """
    oracle = NaiveOracle(model)
    return _check(node, oracle, component)


def _check(node, oracle: NaiveOracle, c: str) -> bool:
    v = node.vulnerability
    basis = node.basis.value
    if node.verdict.value == "mitigated":
        if basis == "direct-rule":
            return any(
                rid == node.rule
                and v in rvulns
                and node.matched_type in rtypes
                and node.matched_type in oracle.types[c]
                and rcontrols <= oracle.controls[c]
                for rid, (rvulns, rtypes, rcontrols) in zip(oracle.rule_ids, oracle.rules)
            )
        if basis == "abstraction":
            parents = oracle.avulns[v]
            return (
                bool(parents)
                and {ch.vulnerability for ch in node.children} == parents
                and all(ch.verdict.value == "mitigated" and _check(ch, oracle, c) for ch in node.children)
            )
        return False

    if basis != "none":
        return False
    if oracle.mitigated_v(v, c):
        return False
    covering = {rid for rid, (rvulns, _, _) in zip(oracle.rule_ids, oracle.rules) if v in rvulns}
    if {cand.rule for cand in node.candidates} != covering:
        return False
    rules = dict(zip(oracle.rule_ids, oracle.rules))
    for cand in node.candidates:
        _, rtypes, rcontrols = rules[cand.rule]
        if set(cand.type_match) != rtypes & oracle.types[c]:
            return False
        if set(cand.missing_controls) != rcontrols - oracle.controls[c]:
            return False
    parents = oracle.avulns[v]
    if {ch.vulnerability for ch in node.children} != parents:
        return False
    if parents and all(ch.verdict.value == "mitigated" for ch in node.children):
        return False
    return all(_check(ch, oracle, c) for ch in node.children)
