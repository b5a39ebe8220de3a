"""CWE catalogue ingestion.

Reads the official CWE XML export (``cwec_vX.Y.xml``, optionally still
zipped) and turns weaknesses into mechanism vulnerabilities.  Only
``ChildOf`` relations inside one view become abstraction edges; other
relation natures (``PeerOf``, ``CanPrecede`` ...) do not express
abstraction and are ignored.
"""

from __future__ import annotations

import io
import logging
import re
import zipfile
import xml.etree.ElementTree as ET
from dataclasses import dataclass, replace
from typing import Iterable

from .errors import CatalogError, ModelError
from .ids import canonical_cwe
from .model import DesignModel, VulnKind, VulnMetadata, Vulnerability

logger = logging.getLogger(__name__)

RESEARCH_VIEW = "1000"
_NS_RE = re.compile(r"^\{([^}]*)\}")


@dataclass(frozen=True)
class CweEntry:
    id: str
    name: str
    abstraction: str | None
    parents: tuple[str, ...]
    description: str
    status: str | None = None

    @property
    def deprecated(self) -> bool:
        return (self.status or "").lower() == "deprecated"


def _text(elem: ET.Element | None) -> str:
    if elem is None:
        return ""
    return " ".join("".join(elem.itertext()).split())


def _byte_offset(data: bytes, line: int, column: int) -> int:
    lines = data.split(b"\n")
    return sum(len(chunk) + 1 for chunk in lines[: max(line - 1, 0)]) + column


def _unzip(data: bytes) -> bytes:
    with zipfile.ZipFile(io.BytesIO(data)) as archive:
        xml_names = sorted(n for n in archive.namelist() if n.lower().endswith(".xml"))
        if not xml_names:
            raise CatalogError("zip archive contains no .xml catalogue", offset=0)
        return archive.read(xml_names[0])


def parse_cwe_catalog(
    source: bytes | io.IOBase,
    view: str | int = RESEARCH_VIEW,
    include_deprecated: bool = False,
) -> list[CweEntry]:
    """Parse a CWE catalogue export into entries ordered by numeric CWE id.

    ``parents`` holds the ``ChildOf`` targets whose ``View_ID`` equals ``view``.
    """
    data = source if isinstance(source, (bytes, bytearray)) else source.read()
    data = bytes(data)
    if data[:2] == b"PK":
        data = _unzip(data)
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, column = exc.position
        offset = _byte_offset(data, line, column)
        raise CatalogError(f"catalogue is not well-formed XML: {exc}", offset=offset) from None

    match = _NS_RE.match(root.tag)
    ns = match.group(1) if match else ""
    q = (lambda tag: f"{{{ns}}}{tag}") if ns else (lambda tag: tag)
    if root.tag != q("Weakness_Catalog"):
        raise CatalogError(f"unexpected root element {root.tag!r}", offset=0)

    view = str(view)
    weaknesses = root.findall(f"{q('Weaknesses')}/{q('Weakness')}")
    declared_views = {v.get("ID") for v in root.findall(f"{q('Views')}/{q('View')}")}
    referenced_views = {rel.get("View_ID") for rel in root.iter(q("Related_Weakness"))}
    if declared_views or referenced_views:
        if view not in declared_views and view not in referenced_views:
            raise CatalogError(f"view {view} is not present in the catalogue", code="unknown-view")

    entries = []
    for weakness in weaknesses:
        raw_id = weakness.get("ID")
        if raw_id is None:
            raise CatalogError("Weakness element without ID attribute")
        try:
            cwe_id = canonical_cwe(raw_id)
        except ValueError:
            raise CatalogError(f"weakness has non-numeric ID {raw_id!r}") from None
        parents = []
        for rel in weakness.iter(q("Related_Weakness")):
            if rel.get("Nature") == "ChildOf" and rel.get("View_ID") == view:
                parent = canonical_cwe(rel.get("CWE_ID", ""))
                if parent not in parents:
                    parents.append(parent)
        entry = CweEntry(
            id=cwe_id,
            name=weakness.get("Name", ""),
            abstraction=weakness.get("Abstraction"),
            parents=tuple(sorted(parents, key=_numeric)),
            description=_text(weakness.find(q("Description"))),
            status=weakness.get("Status"),
        )
        if entry.deprecated and not include_deprecated:
            continue
        entries.append(entry)
    entries.sort(key=lambda e: _numeric(e.id))
    return entries


def _numeric(cwe_id: str) -> int:
    return int(cwe_id.split("-", 1)[1])


def dangling_parents(entries: Iterable[CweEntry], model: DesignModel | None = None) -> list[tuple[str, str]]:
    """(child, parent) pairs whose parent is neither ingested nor already in ``model``."""
    entries = list(entries)
    known = {e.id for e in entries}
    out = []
    for entry in entries:
        for parent in entry.parents:
            if parent not in known and not (model is not None and model.has("vulnerability", parent)):
                out.append((entry.id, parent))
    return out


def import_cwe(model: DesignModel, entries: Iterable[CweEntry]) -> DesignModel:
    """Upsert each entry as a mechanism vulnerability with its catalogue parents.

    Existing vulnerabilities with the same id (including placeholders created
    by a CVE import) are replaced.  Parents that resolve nowhere are dropped
    and logged.  Raises ``would-create-cycle`` and leaves ``model`` unchanged
    if the resulting abstraction graph would be cyclic.
    """
    entries = list(entries)
    dangling = set(dangling_parents(entries, model))
    for child, parent in sorted(dangling):
        logger.warning("dropping ChildOf edge %s -> %s: parent not in catalogue or model", child, parent)

    vulns = dict(model.ids("vulnerability"))
    for entry in entries:
        parents = frozenset(p for p in entry.parents if (entry.id, p) not in dangling)
        metadata = VulnMetadata(
            description=entry.description or None,
            abstraction=entry.abstraction,
            status=entry.status,
            source_url=f"https://cwe.mitre.org/data/definitions/{_numeric(entry.id)}.html",
        )
        vulns[entry.id] = Vulnerability(
            id=entry.id,
            kind=VulnKind.MECHANISM,
            title=entry.name,
            avulns=parents,
            metadata=metadata,
        )
    result = replace(model, vulnerabilities=tuple(vulns.values()))
    if result == model:
        return model

    cycles = [f for f in result.validation.errors if f.code == "abstraction-cycle"]
    if cycles:
        raise ModelError(cycles[0].message, code="would-create-cycle")
    return result


def edge_count(model: DesignModel, ids: Iterable[str] | None = None) -> int:
    wanted = None if ids is None else set(ids)
    return sum(len(v.avulns) for v in model.vulnerabilities if wanted is None or v.id in wanted)


__all__ = ["CweEntry", "RESEARCH_VIEW", "dangling_parents", "edge_count", "import_cwe", "parse_cwe_catalog"]
