"""Identifier schemes: CWE and CVE ids, CPE 2.3 formatted strings."""

from __future__ import annotations

import re
from dataclasses import dataclass

CWE_RE = re.compile(r"^CWE-\d+$")
CVE_RE = re.compile(r"^CVE-\d{4}-\d{4,}$")

CPE_PREFIX = "cpe:2.3:"
CPE_ATTRIBUTES = (
    "part",
    "vendor",
    "product",
    "version",
    "update",
    "edition",
    "language",
    "sw_edition",
    "target_sw",
    "target_hw",
    "other",
)
_CPE_PARTS = {"a", "o", "h", "*", "-"}
# unescaped characters allowed inside a formatted-string component
_CPE_PLAIN = re.compile(r"^[A-Za-z0-9._\-*?]$")


class CpeError(ValueError):
    pass


@dataclass(frozen=True)
class Cpe:
    """A parsed CPE 2.3 formatted string.

    Components are kept in their escaped, bound form so that
    ``str(Cpe.parse(s)) == s`` for every accepted ``s``.
    """

    part: str
    vendor: str
    product: str
    version: str
    update: str
    edition: str
    language: str
    sw_edition: str
    target_sw: str
    target_hw: str
    other: str

    @classmethod
    def parse(cls, text: str) -> Cpe:
        if not text.startswith(CPE_PREFIX):
            raise CpeError(f"not a CPE 2.3 formatted string: {text!r}")
        fields = _split_components(text[len(CPE_PREFIX):])
        if len(fields) != len(CPE_ATTRIBUTES):
            raise CpeError(
                f"expected {len(CPE_ATTRIBUTES)} components after 'cpe:2.3:', got {len(fields)}: {text!r}"
            )
        for name, value in zip(CPE_ATTRIBUTES, fields):
            _check_component(name, value, text)
        if fields[0] not in _CPE_PARTS:
            raise CpeError(f"invalid part {fields[0]!r} in {text!r}")
        return cls(*fields)

    def __str__(self) -> str:
        return CPE_PREFIX + ":".join(getattr(self, name) for name in CPE_ATTRIBUTES)


def _split_components(body: str) -> list[str]:
    fields: list[str] = []
    current: list[str] = []
    chars = iter(body)
    for ch in chars:
        if ch == "\\":
            nxt = next(chars, None)
            if nxt is None:
                raise CpeError("dangling escape at end of CPE string")
            current.append(ch + nxt)
        elif ch == ":":
            fields.append("".join(current))
            current = []
        else:
            current.append(ch)
    fields.append("".join(current))
    return fields


def _check_component(name: str, value: str, text: str) -> None:
    if not value:
        raise CpeError(f"empty {name} component in {text!r}")
    i = 0
    while i < len(value):
        if value[i] == "\\":
            i += 2
            continue
        if not _CPE_PLAIN.match(value[i]):
            raise CpeError(f"character {value[i]!r} must be escaped in {name} of {text!r}")
        i += 1


def is_cpe(text: str) -> bool:
    try:
        Cpe.parse(text)
    except CpeError:
        return False
    return True


def scheme_of(entity_id: str) -> str | None:
    """Return the id scheme an identifier claims by its prefix, if any."""
    if entity_id.startswith("CWE-"):
        return "cwe"
    if entity_id.startswith("CVE-"):
        return "cve"
    if entity_id.lower().startswith("cpe:"):
        return "cpe"
    return None


def id_problem(entity_id: str) -> str | None:
    """Describe why ``entity_id`` is malformed, or return None if it is acceptable."""
    if not isinstance(entity_id, str) or not entity_id:
        return "identifier must be a non-empty string"
    if entity_id != entity_id.strip():
        return "identifier has surrounding whitespace"
    scheme = scheme_of(entity_id)
    if scheme == "cwe" and not CWE_RE.match(entity_id):
        return f"{entity_id!r} is not of the form CWE-<digits>"
    if scheme == "cve" and not CVE_RE.match(entity_id):
        return f"{entity_id!r} is not of the form CVE-<yyyy>-<nnnn>"
    if scheme == "cpe":
        try:
            Cpe.parse(entity_id)
        except CpeError as exc:
            return str(exc)
    return None


def canonical_cwe(raw: str | int) -> str:
    """Normalise ``119``, ``"119"``, ``"cwe-119"`` or ``"CWE-0119"`` to ``"CWE-119"``."""
    text = str(raw).strip()
    if text.upper().startswith("CWE-"):
        text = text[4:]
    if not text.isdigit():
        raise ValueError(f"not a CWE id: {raw!r}")
    return f"CWE-{int(text)}"


def canonical_cve(raw: str) -> str:
    text = raw.strip().upper()
    if not CVE_RE.match(text):
        raise ValueError(f"not a CVE id: {raw!r}")
    return text
