"""Posture reasoning over a validated design model.

A vulnerability ``v`` of component ``c`` is *directly mitigated* when some
rule applies to ``v``, shares a type with ``c``, and every control the rule
requires is assigned to ``c``.  It is *mitigated* when it is directly
mitigated, or when it has at least one higher-abstraction parent and every
parent is mitigated for ``c``.  A component is vulnerable when one of the
vulnerabilities collected from its types is not mitigated, and the design
holds when no component is vulnerable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .errors import InvalidModel, ModelError, NotApplicable
from .model import Component, DesignModel, Rule

MAX_EXPLANATION_DEPTH = 32


class Witness(NamedTuple):
    rule: str
    matched_type: str


class _RuleIndex:
    """Rules grouped by the vulnerabilities they cover, in rule-id order."""

    def __init__(self, model: DesignModel) -> None:
        self.by_vuln: dict[str, list[Rule]] = {}
        for rule in model.rules:
            for vid in rule.rvulns:
                self.by_vuln.setdefault(vid, []).append(rule)


def _require_component(model: DesignModel, cid: str) -> Component:
    return model.component(cid)


def _require_vulnerability(model: DesignModel, vid: str):
    return model.vulnerability(vid)


def _direct(rules: Iterable[Rule], component: Component) -> Witness | None:
    for rule in rules:
        shared = rule.rtypes & component.types
        if shared and rule.rcontrols <= component.controls:
            return Witness(rule.id, min(shared))
    return None


class Evaluation:
    """One evaluation pass over a model snapshot.

    Mitigation verdicts are memoised per ``(component, vulnerability)`` for the
    lifetime of the object; create a new one per snapshot.
    """

    def __init__(self, model: DesignModel) -> None:
        self.model = model
        self._rules = _RuleIndex(model)
        self._memo: dict[tuple[str, str], bool] = {}
        self._direct_memo: dict[tuple[str, str], Witness | None] = {}

    def cvulns(self, cid: str) -> tuple[str, ...]:
        component = _require_component(self.model, cid)
        collected: set[str] = set()
        for tid in component.types:
            collected |= self.model.component_type(tid).vulns
        return tuple(sorted(collected))

    def mitigated_v(self, vid: str, cid: str) -> Witness | None:
        key = (cid, vid)
        if key not in self._direct_memo:
            component = _require_component(self.model, cid)
            _require_vulnerability(self.model, vid)
            self._direct_memo[key] = _direct(self._rules.by_vuln.get(vid, ()), component)
        return self._direct_memo[key]

    def mitigated(self, vid: str, cid: str) -> bool:
        if (cid, vid) in self._memo:
            return self._memo[(cid, vid)]
        _require_component(self.model, cid)
        _require_vulnerability(self.model, vid)

        # iterative post-order walk so deep catalogues cannot hit the recursion limit
        in_progress: set[str] = set()
        stack: list[tuple[str, bool]] = [(vid, False)]
        while stack:
            node, expanded = stack.pop()
            if (cid, node) in self._memo:
                continue
            if self.mitigated_v(node, cid) is not None:
                self._memo[(cid, node)] = True
                continue
            parents = sorted(self.model.vulnerability(node).avulns)
            if not expanded:
                if node in in_progress:
                    raise InvalidModel(f"abstraction cycle through {node!r}")
                in_progress.add(node)
                stack.append((node, True))
                stack.extend((p, False) for p in parents if (cid, p) not in self._memo)
                continue
            in_progress.discard(node)
            self._memo[(cid, node)] = bool(parents) and all(self._memo[(cid, p)] for p in parents)
        return self._memo[(cid, vid)]

    def unmitigated(self, cid: str) -> tuple[str, ...]:
        return tuple(v for v in self.cvulns(cid) if not self.mitigated(v, cid))

    def explain(self, cid: str, vid: str) -> ExplanationNode:
        if vid not in self.cvulns(cid):
            _require_vulnerability(self.model, vid)
            raise NotApplicable(f"{vid} does not apply to component {cid!r}")
        return self._explain(cid, vid, 0)

    def _explain(self, cid: str, vid: str, depth: int) -> ExplanationNode:
        mitigated = self.mitigated(vid, cid)
        verdict = Verdict.MITIGATED if mitigated else Verdict.UNMITIGATED
        if depth >= MAX_EXPLANATION_DEPTH:
            return ExplanationNode(vid, verdict, Basis.TRUNCATED)

        witness = self.mitigated_v(vid, cid)
        if witness is not None:
            return ExplanationNode(vid, verdict, Basis.DIRECT_RULE, rule=witness.rule, matched_type=witness.matched_type)

        parents = sorted(self.model.vulnerability(vid).avulns)
        children = tuple(self._explain(cid, p, depth + 1) for p in parents)
        if mitigated:
            return ExplanationNode(vid, verdict, Basis.ABSTRACTION, children=children)
        component = self.model.component(cid)
        candidates = tuple(
            CandidateRule(
                rule=rule.id,
                type_match=tuple(sorted(rule.rtypes & component.types)),
                missing_controls=tuple(sorted(rule.rcontrols - component.controls)),
            )
            for rule in self._rules.by_vuln.get(vid, ())
        )
        return ExplanationNode(vid, verdict, Basis.NONE, candidates=candidates, children=children)


# --------------------------------------------------------------------------
# explanations


class Verdict(str, enum.Enum):
    MITIGATED = "mitigated"
    UNMITIGATED = "unmitigated"


class Basis(str, enum.Enum):
    DIRECT_RULE = "direct-rule"
    ABSTRACTION = "abstraction"
    NONE = "none"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class CandidateRule:
    """A rule covering the vulnerability that failed to mitigate it for the component."""

    rule: str
    type_match: tuple[str, ...]
    missing_controls: tuple[str, ...]

    @property
    def failed_on_type(self) -> bool:
        return not self.type_match

    def as_dict(self) -> dict:
        return {
            "rule": self.rule,
            "type_match": list(self.type_match),
            "missing_controls": list(self.missing_controls),
        }


@dataclass(frozen=True)
class ExplanationNode:
    """Why a vulnerability is (not) mitigated for one component.

    ``direct-rule`` nodes name the witnessing rule and the shared type.
    ``abstraction`` nodes carry one mitigated child per parent vulnerability.
    ``none`` nodes list every candidate rule with what it lacked, plus the
    parent subtrees (at least one of which is unmitigated, if any exist).
    ``truncated`` marks the depth cap.
    """

    vulnerability: str
    verdict: Verdict
    basis: Basis
    rule: str | None = None
    matched_type: str | None = None
    children: tuple[ExplanationNode, ...] = ()
    candidates: tuple[CandidateRule, ...] = ()

    @property
    def truncated(self) -> bool:
        return self.basis is Basis.TRUNCATED

    def as_dict(self) -> dict:
        out: dict = {"vulnerability": self.vulnerability, "verdict": self.verdict.value, "basis": self.basis.value}
        if self.basis is Basis.DIRECT_RULE:
            out["rule"] = self.rule
            out["matched_type"] = self.matched_type
        if self.basis in (Basis.ABSTRACTION, Basis.NONE):
            out["children"] = [c.as_dict() for c in self.children]
        if self.basis is Basis.NONE:
            out["candidates"] = [c.as_dict() for c in self.candidates]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> ExplanationNode:
        return cls(
            vulnerability=data["vulnerability"],
            verdict=Verdict(data["verdict"]),
            basis=Basis(data["basis"]),
            rule=data.get("rule"),
            matched_type=data.get("matched_type"),
            children=tuple(cls.from_dict(c) for c in data.get("children", ())),
            candidates=tuple(
                CandidateRule(c["rule"], tuple(c["type_match"]), tuple(c["missing_controls"]))
                for c in data.get("candidates", ())
            ),
        )

    def outline(self, indent: str = "") -> list[str]:
        """Human-readable indented rendering, one line per node or candidate."""
        head = f"{indent}{self.vulnerability}: {self.verdict.value}"
        if self.basis is Basis.DIRECT_RULE:
            return [f"{head} by {self.rule} (type {self.matched_type})"]
        if self.basis is Basis.TRUNCATED:
            return [f"{head} (explanation truncated)"]
        lines = []
        if self.basis is Basis.ABSTRACTION:
            lines.append(f"{head} via all higher abstractions")
        else:
            lines.append(f"{head}; no rule applies")
            if not self.candidates:
                lines.append(f"{indent}  - no rule covers {self.vulnerability}")
            for cand in self.candidates:
                if cand.failed_on_type:
                    lines.append(f"{indent}  - {cand.rule}: no shared component type")
                else:
                    lines.append(f"{indent}  - {cand.rule}: missing controls {', '.join(cand.missing_controls)}")
            if self.children:
                lines.append(f"{indent}  higher abstractions:")
        for child in self.children:
            lines.extend(child.outline(indent + "    "))
        return lines


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ComponentPosture:
    component: str
    vulnerable: bool
    cvulns: tuple[str, ...]
    unmitigated: tuple[str, ...]

    def as_dict(self) -> dict:
        return {
            "component": self.component,
            "vulnerable": self.vulnerable,
            "cvulns": list(self.cvulns),
            "unmitigated": list(self.unmitigated),
        }


@dataclass(frozen=True)
class PostureReport:
    property_holds: bool
    per_component: tuple[ComponentPosture, ...]
    explanations: dict[tuple[str, str], ExplanationNode] = field(default_factory=dict, compare=True, hash=False)

    @property
    def counterexamples(self) -> list[tuple[str, str]]:
        return [(p.component, v) for p in self.per_component for v in p.unmitigated]

    def restricted(self, component_ids: Iterable[str]) -> PostureReport:
        """Limit the listing to some components; ``property_holds`` stays design-wide."""
        keep = set(component_ids)
        return PostureReport(
            self.property_holds,
            tuple(p for p in self.per_component if p.component in keep),
            {k: v for k, v in self.explanations.items() if k[0] in keep},
        )

    def as_dict(self) -> dict:
        return {
            "property_holds": self.property_holds,
            "components": [p.as_dict() for p in self.per_component],
            "counterexamples": [{"component": c, "vulnerability": v} for c, v in self.counterexamples],
            "explanations": [
                {"component": c, "vulnerability": v, "tree": node.as_dict()}
                for (c, v), node in sorted(self.explanations.items())
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> PostureReport:
        return cls(
            property_holds=data["property_holds"],
            per_component=tuple(
                ComponentPosture(p["component"], p["vulnerable"], tuple(p["cvulns"]), tuple(p["unmitigated"]))
                for p in data["components"]
            ),
            explanations={
                (e["component"], e["vulnerability"]): ExplanationNode.from_dict(e["tree"])
                for e in data["explanations"]
            },
        )


class VulnerableResult(NamedTuple):
    flag: bool
    unmitigated: tuple[str, ...]


# --------------------------------------------------------------------------
# public functions


def _checked(model: DesignModel) -> DesignModel:
    report = model.validation
    if not report.ok:
        raise InvalidModel(
            "model has validation errors: " + "; ".join(f.message for f in report.errors[:5]),
            report.errors,
        )
    return model


def cvulns(model: DesignModel, component: str) -> tuple[str, ...]:
    return Evaluation(model).cvulns(component)


def mitigated_v(model: DesignModel, vulnerability: str, component: str) -> Witness | None:
    """The first rule (by id) that directly mitigates ``vulnerability`` for ``component``, or None."""
    return Evaluation(model).mitigated_v(vulnerability, component)


def mitigated(model: DesignModel, vulnerability: str, component: str) -> bool:
    return Evaluation(_checked(model)).mitigated(vulnerability, component)


def vulnerable(model: DesignModel, component: str) -> VulnerableResult:
    unmitigated = Evaluation(_checked(model)).unmitigated(component)
    return VulnerableResult(bool(unmitigated), unmitigated)


def explain(model: DesignModel, component: str, vulnerability: str) -> ExplanationNode:
    return Evaluation(_checked(model)).explain(component, vulnerability)


def check_design(model: DesignModel, *, explanations: bool = True) -> PostureReport:
    """Evaluate every component and decide whether the design leaves nothing unmitigated."""
    ev = Evaluation(_checked(model))
    rows = []
    trees: dict[tuple[str, str], ExplanationNode] = {}
    for component in model.components:
        applicable = ev.cvulns(component.id)
        open_ = tuple(v for v in applicable if not ev.mitigated(v, component.id))
        rows.append(ComponentPosture(component.id, bool(open_), applicable, open_))
        if explanations:
            for vid in applicable:
                trees[(component.id, vid)] = ev._explain(component.id, vid, 0)
    return PostureReport(not any(r.vulnerable for r in rows), tuple(rows), trees)


__all__ = [
    "Basis",
    "CandidateRule",
    "ComponentPosture",
    "Evaluation",
    "ExplanationNode",
    "ModelError",
    "PostureReport",
    "Verdict",
    "VulnerableResult",
    "Witness",
    "check_design",
    "cvulns",
    "explain",
    "mitigated",
    "mitigated_v",
    "vulnerable",
]
