"""Canonical JSON documents for design models (``*.posture.json``).

Canonical form: every field present, entity lists and id arrays sorted,
object keys sorted, two-space indentation, UTF-8, trailing newline.  Equal
models therefore serialise to identical bytes.
"""

from __future__ import annotations

import json
import os
import tempfile
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import InvalidModel, ParseFailure, PersistenceError
from .model import (
    SCHEMA_VERSION,
    Component,
    ComponentType,
    Control,
    DesignModel,
    Rule,
    VulnKind,
    VulnMetadata,
    Vulnerability,
)

SUFFIX = ".posture.json"


@lru_cache(maxsize=1)
def document_schema() -> dict:
    text = resources.files("vulnposture").joinpath("schema/model.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _ids(values) -> list[str]:
    return sorted(values)


def model_to_document(model: DesignModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "components": [
            {"id": c.id, "name": c.name, "types": _ids(c.types), "controls": _ids(c.controls)}
            for c in model.components
        ],
        "component_types": [
            {"id": t.id, "name": t.name, "origin": t.origin.value, "vulns": _ids(t.vulns)}
            for t in model.component_types
        ],
        "vulnerabilities": [
            {
                "id": v.id,
                "kind": v.kind.value,
                "title": v.title,
                "avulns": _ids(v.avulns),
                "placeholder": v.placeholder,
                "metadata": v.metadata.as_dict(),
            }
            for v in model.vulnerabilities
        ],
        "controls": [{"id": s.id, "name": s.name, "description": s.description} for s in model.controls],
        "rules": [
            {
                "id": r.id,
                "name": r.name,
                "rvulns": _ids(r.rvulns),
                "rtypes": _ids(r.rtypes),
                "rcontrols": _ids(r.rcontrols),
            }
            for r in model.rules
        ],
    }


def document_to_model(doc: dict) -> DesignModel:
    return DesignModel(
        components=[
            Component(d["id"], d.get("name", ""), d.get("types", ()), d.get("controls", ()))
            for d in doc["components"]
        ],
        component_types=[
            ComponentType(d["id"], d.get("name", ""), d.get("vulns", ()), d.get("origin", "manual"))
            for d in doc["component_types"]
        ],
        vulnerabilities=[
            Vulnerability(
                d["id"],
                VulnKind(d["kind"]) if "kind" in d else None,
                d.get("title", ""),
                d.get("avulns", ()),
                VulnMetadata(**d.get("metadata", {})),
                d.get("placeholder", False),
            )
            for d in doc["vulnerabilities"]
        ],
        controls=[Control(d["id"], d.get("name", ""), d.get("description")) for d in doc["controls"]],
        rules=[
            Rule(d["id"], d.get("name", ""), d.get("rvulns", ()), d.get("rtypes", ()), d.get("rcontrols", ()))
            for d in doc["rules"]
        ],
    )


def dumps_model(model: DesignModel) -> str:
    return json.dumps(model_to_document(model), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _migrate_v1(doc: dict) -> dict:
    # v1 named the abstraction list "parents" and had no kind/origin/placeholder fields
    doc = dict(doc)
    vulns = []
    for v in doc.get("vulnerabilities", []):
        v = dict(v)
        if "parents" in v:
            v["avulns"] = v.pop("parents")
        vulns.append(v)
    doc["vulnerabilities"] = vulns
    doc["schema_version"] = 2
    return doc


MIGRATIONS = {1: _migrate_v1}


def migrate(doc: dict) -> dict:
    version = doc.get("schema_version")
    if not isinstance(version, int) or isinstance(version, bool):
        raise ParseFailure("schema_version must be an integer")
    if version > SCHEMA_VERSION:
        raise PersistenceError(
            f"document schema_version {version} is newer than supported version {SCHEMA_VERSION}",
            code="schema-too-new",
        )
    while version < SCHEMA_VERSION:
        step = MIGRATIONS.get(version)
        if step is None:
            raise ParseFailure(f"no migration from schema_version {version}")
        doc = step(doc)
        version = doc["schema_version"]
    return doc


def loads_model(text: str, *, force: bool = False) -> DesignModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseFailure(exc.msg, line=exc.lineno, column=exc.colno) from None
    if not isinstance(doc, dict):
        raise ParseFailure("document root must be an object")
    doc = migrate(doc)
    try:
        jsonschema.validate(doc, document_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ParseFailure(f"{where}: {exc.message}") from None
    model = document_to_model(doc)
    report = model.validation
    if not report.ok and not force:
        raise InvalidModel(
            "; ".join(f"{f.code} {f.subject}: {f.message}" for f in report.errors[:5]),
            report.errors,
        )
    return model


def load_model(path: str | os.PathLike, *, force: bool = False) -> DesignModel:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc.strerror or exc}") from None
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseFailure(f"not UTF-8 at byte {exc.start}") from None
    return loads_model(text, force=force)


def save_model(model: DesignModel, path: str | os.PathLike) -> None:
    """Write the canonical document atomically (temporary file, then rename)."""
    target = Path(path)
    data = dumps_model(model).encode("utf-8")
    try:
        fd, tmp = tempfile.mkstemp(dir=target.parent or Path("."), prefix=f".{target.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, target)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc.strerror or exc}") from None


def canonicalize(text: str) -> str:
    """Canonical form of a document (loaded with ``force`` so invalid models still round-trip)."""
    return dumps_model(loads_model(text, force=True))
