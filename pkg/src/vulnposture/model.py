"""Design model entities, validation and immutable mutation.

The model is a closed world of five entity kinds (components, component
types, vulnerabilities, controls and rules) whose relations are stored as
id sets on the owning entity.  ``DesignModel`` is a frozen value: every
mutation returns a new model.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping, Union

from .errors import ModelError
from .ids import id_problem

SCHEMA_VERSION = 2


class VulnKind(str, enum.Enum):
    MECHANISM = "mechanism"
    IMPLEMENTATION = "implementation"

    @classmethod
    def infer(cls, vuln_id: str) -> VulnKind:
        return cls.IMPLEMENTATION if vuln_id.startswith("CVE-") else cls.MECHANISM


class TypeOrigin(str, enum.Enum):
    MANUAL = "manual"
    NVD_IMPORT = "nvd-import"
    CWE_IMPORT = "cwe-import"


def _freeze(obj, *names: str) -> None:
    for name in names:
        value = getattr(obj, name)
        if isinstance(value, str):
            raise TypeError(f"{name} must be a collection of ids, not a string")
        object.__setattr__(obj, name, frozenset(value))


@dataclass(frozen=True)
class Component:
    id: str
    name: str = ""
    types: frozenset[str] = frozenset()
    controls: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        _freeze(self, "types", "controls")


@dataclass(frozen=True)
class ComponentType:
    id: str
    name: str = ""
    vulns: frozenset[str] = frozenset()
    origin: TypeOrigin = TypeOrigin.MANUAL

    def __post_init__(self) -> None:
        _freeze(self, "vulns")
        object.__setattr__(self, "origin", TypeOrigin(self.origin))


@dataclass(frozen=True)
class VulnMetadata:
    """Pass-through descriptive data. Never consulted by the reasoner."""

    description: str | None = None
    severity: str | None = None
    source_url: str | None = None
    abstraction: str | None = None
    status: str | None = None

    def as_dict(self) -> dict[str, str]:
        return {k: v for k, v in self.__dict__.items() if v is not None}


@dataclass(frozen=True)
class Vulnerability:
    id: str
    kind: VulnKind | None = None
    title: str = ""
    avulns: frozenset[str] = frozenset()
    metadata: VulnMetadata = field(default_factory=VulnMetadata)
    placeholder: bool = False

    def __post_init__(self) -> None:
        _freeze(self, "avulns")
        kind = VulnKind.infer(self.id) if self.kind is None else VulnKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if isinstance(self.metadata, Mapping):
            object.__setattr__(self, "metadata", VulnMetadata(**self.metadata))


@dataclass(frozen=True)
class Control:
    id: str
    name: str = ""
    description: str | None = None


@dataclass(frozen=True)
class Rule:
    id: str
    name: str = ""
    rvulns: frozenset[str] = frozenset()
    rtypes: frozenset[str] = frozenset()
    rcontrols: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        _freeze(self, "rvulns", "rtypes", "rcontrols")


Entity = Union[Component, ComponentType, Vulnerability, Control, Rule]

# entity kind -> (DesignModel field, entity class)
KINDS: dict[str, tuple[str, type]] = {
    "component": ("components", Component),
    "component-type": ("component_types", ComponentType),
    "vulnerability": ("vulnerabilities", Vulnerability),
    "control": ("controls", Control),
    "rule": ("rules", Rule),
}
_KIND_OF_CLASS = {cls: kind for kind, (_, cls) in KINDS.items()}

# relation name -> (owner kind, owner attribute, target kind)
RELATIONS: dict[str, tuple[str, str, str]] = {
    "type": ("component", "types", "component-type"),
    "control": ("component", "controls", "control"),
    "vuln": ("component-type", "vulns", "vulnerability"),
    "parent": ("vulnerability", "avulns", "vulnerability"),
    "rule-vuln": ("rule", "rvulns", "vulnerability"),
    "rule-type": ("rule", "rtypes", "component-type"),
    "rule-control": ("rule", "rcontrols", "control"),
}


def kind_of(entity: Entity) -> str:
    return _KIND_OF_CLASS[type(entity)]


def _sorted_by_id(items: Iterable[Entity]) -> tuple:
    return tuple(sorted(items, key=lambda e: e.id))


@dataclass(frozen=True)
class DesignModel:
    """Root container of a design and its vulnerability knowledge.

    Entity collections are tuples sorted by id.  Duplicate ids can be
    represented (for example when loading a hand-edited document with
    ``force``) so that validation is able to report them.
    """

    components: tuple[Component, ...] = ()
    component_types: tuple[ComponentType, ...] = ()
    vulnerabilities: tuple[Vulnerability, ...] = ()
    controls: tuple[Control, ...] = ()
    rules: tuple[Rule, ...] = ()
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        for fname, _ in KINDS.values():
            object.__setattr__(self, fname, _sorted_by_id(getattr(self, fname)))

    @cached_property
    def _index(self) -> dict[str, dict[str, Entity]]:
        return {kind: {e.id: e for e in getattr(self, fname)} for kind, (fname, _) in KINDS.items()}

    def ids(self, kind: str) -> Mapping[str, Entity]:
        return self._index[kind]

    def has(self, kind: str, entity_id: str) -> bool:
        return entity_id in self._index[kind]

    def get(self, kind: str, entity_id: str) -> Entity:
        try:
            return self._index[kind][entity_id]
        except KeyError:
            raise ModelError(f"no {kind} with id {entity_id!r}", code=f"unknown-{kind}") from None

    def component(self, cid: str) -> Component:
        return self.get("component", cid)

    def component_type(self, tid: str) -> ComponentType:
        return self.get("component-type", tid)

    def vulnerability(self, vid: str) -> Vulnerability:
        return self.get("vulnerability", vid)

    def control(self, sid: str) -> Control:
        return self.get("control", sid)

    def rule(self, rid: str) -> Rule:
        return self.get("rule", rid)

    def put(self, entity: Entity) -> DesignModel:
        """Return a copy with ``entity`` inserted or replacing the one with its id (no checks)."""
        fname, _ = KINDS[kind_of(entity)]
        others = [e for e in getattr(self, fname) if e.id != entity.id]
        return replace(self, **{fname: (*others, entity)})

    def drop(self, kind: str, entity_id: str) -> DesignModel:
        fname, _ = KINDS[kind]
        return replace(self, **{fname: tuple(e for e in getattr(self, fname) if e.id != entity_id)})

    @cached_property
    def validation(self) -> ValidationReport:
        return validate_model(self)


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" | "warning"
    code: str
    subject: str
    message: str
    related: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "severity": self.severity,
            "code": self.code,
            "subject": self.subject,
            "message": self.message,
            "related": list(self.related),
        }


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def codes(self) -> list[str]:
        return [f.code for f in self.findings]


# (owner kind, attribute, target kind) for every reference-carrying attribute
_REFERENCES = [(owner, attr, target) for owner, attr, target in RELATIONS.values()]


def validate_model(model: DesignModel) -> ValidationReport:
    findings: list[Finding] = []

    for kind, (fname, _) in KINDS.items():
        seen: set[str] = set()
        for entity in getattr(model, fname):
            if entity.id in seen:
                findings.append(Finding("error", "duplicate-id", entity.id, f"{kind} id {entity.id!r} is declared more than once"))
            seen.add(entity.id)
            problem = id_problem(entity.id)
            if problem:
                findings.append(Finding("error", "malformed-id", entity.id, f"{kind}: {problem}"))

    for owner_kind, attr, target_kind in _REFERENCES:
        fname, _ = KINDS[owner_kind]
        for entity in getattr(model, fname):
            for ref in sorted(getattr(entity, attr)):
                if not model.has(target_kind, ref):
                    findings.append(
                        Finding(
                            "error",
                            "dangling-reference",
                            entity.id,
                            f"{owner_kind} {entity.id!r}: {attr} references unknown {target_kind} {ref!r}",
                            (ref,),
                        )
                    )

    for cycle in abstraction_cycles(model):
        findings.append(
            Finding(
                "error",
                "abstraction-cycle",
                cycle[0],
                "abstraction edges form a cycle among " + ", ".join(cycle),
                tuple(cycle),
            )
        )

    for rule in model.rules:
        if not rule.rtypes or not rule.rvulns:
            empty = " and ".join(n for n, s in (("rvulns", rule.rvulns), ("rtypes", rule.rtypes)) if not s)
            findings.append(Finding("warning", "inert-rule", rule.id, f"rule {rule.id!r} can never apply: empty {empty}"))
        if not rule.rcontrols:
            findings.append(
                Finding(
                    "warning",
                    "rule-without-controls",
                    rule.id,
                    f"rule {rule.id!r} requires no controls; matching vulnerabilities are accepted as mitigated",
                )
            )

    findings.sort(key=lambda f: (f.severity != "error", f.code, f.subject, f.related))
    return ValidationReport(tuple(findings))


def abstraction_cycles(model: DesignModel) -> list[list[str]]:
    """Strongly connected components of the abstraction graph that contain a cycle.

    Each cycle is returned as a sorted id list; the list of cycles is sorted.
    """
    graph = {v.id: sorted(p for p in v.avulns if model.has("vulnerability", p)) for v in model.vulnerabilities}
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    counter = 0
    result: list[list[str]] = []

    for root in sorted(graph):
        if root in index:
            continue
        work = [(root, iter(graph[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            node, children = work[-1]
            advanced = False
            for child in children:
                if child not in index:
                    index[child] = low[child] = counter
                    counter += 1
                    stack.append(child)
                    on_stack.add(child)
                    work.append((child, iter(graph[child])))
                    advanced = True
                    break
                if child in on_stack:
                    low[node] = min(low[node], index[child])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                members = []
                while True:
                    member = stack.pop()
                    on_stack.discard(member)
                    members.append(member)
                    if member == node:
                        break
                if len(members) > 1 or node in graph[node]:
                    result.append(sorted(members))
    return sorted(result)


def reaches(model: DesignModel, start: str, goal: str) -> bool:
    """True if ``goal`` is reachable from ``start`` following abstraction edges."""
    seen: set[str] = set()
    frontier = [start]
    while frontier:
        node = frontier.pop()
        if node == goal:
            return True
        if node in seen:
            continue
        seen.add(node)
        vuln = model.ids("vulnerability").get(node)
        if vuln is not None:
            frontier.extend(vuln.avulns)
    return False


# --------------------------------------------------------------------------
# mutation


@dataclass(frozen=True)
class Upsert:
    entity: Entity
    create_only: bool = False


@dataclass(frozen=True)
class Delete:
    kind: str
    id: str
    cascade: bool = False


@dataclass(frozen=True)
class Link:
    relation: str
    owner: str
    target: str


@dataclass(frozen=True)
class Unlink:
    relation: str
    owner: str
    target: str


Change = Union[Upsert, Delete, Link, Unlink]


def mutate(model: DesignModel, change: Change) -> DesignModel:
    """Apply one change and return the new model.

    Raises :class:`ModelError` with code ``dangling-reference``,
    ``would-create-cycle``, ``duplicate-id`` or ``malformed-id`` and leaves
    ``model`` untouched when the change is rejected.
    """
    if isinstance(change, Upsert):
        result = _upsert(model, change)
    elif isinstance(change, Delete):
        result = _delete(model, change)
    elif isinstance(change, (Link, Unlink)):
        result = _link(model, change)
    else:
        raise TypeError(f"unsupported change {change!r}")

    if result is not model and model.validation.ok and not result.validation.ok:
        first = result.validation.errors[0]
        raise ModelError(first.message, code=first.code)
    return result


def mutate_all(model: DesignModel, changes: Iterable[Change]) -> DesignModel:
    for change in changes:
        model = mutate(model, change)
    return model


def _require(model: DesignModel, kind: str, entity_id: str, context: str) -> None:
    if not model.has(kind, entity_id):
        raise ModelError(f"{context}: unknown {kind} {entity_id!r}", code="dangling-reference")


def _upsert(model: DesignModel, change: Upsert) -> DesignModel:
    entity = change.entity
    kind = kind_of(entity)
    problem = id_problem(entity.id)
    if problem:
        raise ModelError(problem, code="malformed-id")
    if change.create_only and model.has(kind, entity.id):
        raise ModelError(f"{kind} {entity.id!r} already exists", code="duplicate-id")
    for owner_kind, attr, target_kind in _REFERENCES:
        if owner_kind != kind:
            continue
        for ref in sorted(getattr(entity, attr)):
            if kind == "vulnerability" and ref == entity.id:
                raise ModelError(f"{entity.id!r} cannot be its own abstraction", code="would-create-cycle")
            _require(model, target_kind, ref, f"{kind} {entity.id!r}")
    if kind == "vulnerability":
        for parent in sorted(entity.avulns):
            if reaches(model, parent, entity.id):
                raise ModelError(
                    f"adding {parent!r} as abstraction of {entity.id!r} closes a cycle",
                    code="would-create-cycle",
                )
    if model.has(kind, entity.id) and model.get(kind, entity.id) == entity:
        return model
    return model.put(entity)


def referrers(model: DesignModel, kind: str, entity_id: str) -> list[tuple[str, str, str]]:
    """(owner kind, owner id, attribute) triples that reference ``entity_id``."""
    found = []
    for owner_kind, attr, target_kind in _REFERENCES:
        if target_kind != kind:
            continue
        fname, _ = KINDS[owner_kind]
        for owner in getattr(model, fname):
            if entity_id in getattr(owner, attr):
                found.append((owner_kind, owner.id, attr))
    return found


def _delete(model: DesignModel, change: Delete) -> DesignModel:
    if change.kind not in KINDS:
        raise ModelError(f"unknown entity kind {change.kind!r}", code="unknown-kind")
    if not model.has(change.kind, change.id):
        raise ModelError(f"no {change.kind} with id {change.id!r}", code=f"unknown-{change.kind}")
    refs = [r for r in referrers(model, change.kind, change.id) if r[1] != change.id or r[0] != change.kind]
    if refs and not change.cascade:
        listing = ", ".join(f"{k} {i!r}.{a}" for k, i, a in refs)
        raise ModelError(
            f"{change.kind} {change.id!r} is still referenced by {listing}; pass cascade to remove the references",
            code="dangling-reference",
        )
    result = model.drop(change.kind, change.id)
    for owner_kind, owner_id, attr in refs:
        if attr == "rcontrols":
            # the rule can never fire again; relaxing it would mitigate unconditionally
            result = result.drop("rule", owner_id)
            continue
        owner = result.get(owner_kind, owner_id)
        result = result.put(replace(owner, **{attr: getattr(owner, attr) - {change.id}}))
    return result


def _link(model: DesignModel, change: Link | Unlink) -> DesignModel:
    try:
        owner_kind, attr, target_kind = RELATIONS[change.relation]
    except KeyError:
        raise ModelError(
            f"unknown relation {change.relation!r}; expected one of {', '.join(sorted(RELATIONS))}",
            code="unknown-relation",
        ) from None
    _require(model, owner_kind, change.owner, change.relation)
    owner = model.get(owner_kind, change.owner)
    current = getattr(owner, attr)
    if isinstance(change, Unlink):
        if change.target not in current:
            return model
        return model.put(replace(owner, **{attr: current - {change.target}}))

    _require(model, target_kind, change.target, change.relation)
    if change.target in current:
        return model
    if change.relation == "parent" and reaches(model, change.target, change.owner):
        raise ModelError(
            f"adding {change.target!r} as abstraction of {change.owner!r} closes a cycle",
            code="would-create-cycle",
        )
    return model.put(replace(owner, **{attr: current | {change.target}}))
