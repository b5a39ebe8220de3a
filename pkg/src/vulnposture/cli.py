"""Command-line interface.

Every command reads the model file, works on it, and (for mutating commands)
writes it back in canonical form.  Exit codes: 0 success / property holds,
1 tool or input error, 2 the design leaves a vulnerability unmitigated.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import cwe, nvd, persistence
from .errors import PostureError
from .model import (
    KINDS,
    RELATIONS,
    Component,
    ComponentType,
    Control,
    Delete,
    DesignModel,
    Link,
    Rule,
    TypeOrigin,
    Unlink,
    Upsert,
    VulnKind,
    Vulnerability,
    mutate,
    validate_model,
)
from .reasoner import PostureReport, check_design, explain

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATED = 2

log = logging.getLogger("vulnposture")


def _emit_json(data) -> None:
    sys.stdout.write(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_init(args) -> int:
    path = Path(args.model)
    if path.exists():
        raise PostureError(f"{path} already exists; refusing to overwrite", code="exists")
    persistence.save_model(DesignModel(), path)
    print(f"created {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    model = persistence.load_model(args.model, force=True)
    report = validate_model(model)
    if args.format == "machine":
        _emit_json({"ok": report.ok, "findings": [f.as_dict() for f in report.findings]})
    else:
        for f in report.findings:
            print(f"{f.severity}: {f.code}: {f.subject}: {f.message}")
        print(f"{len(report.errors)} error(s), {len(report.warnings)} warning(s)")
    return EXIT_OK if report.ok else EXIT_ERROR


def render_human(report: PostureReport) -> str:
    rows = [("COMPONENT", "VULNERABLE", "CVULNS", "UNMITIGATED")]
    for p in report.per_component:
        rows.append(
            (
                p.component,
                "yes" if p.vulnerable else "no",
                ", ".join(p.cvulns) or "-",
                ", ".join(p.unmitigated) or "-",
            )
        )
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.append("")
    lines.append("property DesignAddressesVulnerabilities: " + ("holds" if report.property_holds else "VIOLATED"))
    for comp, vuln in report.counterexamples:
        lines.append("")
        lines.append(f"counterexample: {vuln} is not mitigated for {comp}")
        lines.extend("  " + line for line in report.explanations[(comp, vuln)].outline())
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    model = persistence.load_model(args.model)
    report = check_design(model)
    shown = report
    if args.component:
        for cid in args.component:
            model.component(cid)
        shown = report.restricted(args.component)
    if args.format == "machine":
        _emit_json(shown.as_dict())
    else:
        sys.stdout.write(render_human(shown))
    return EXIT_OK if report.property_holds else EXIT_VIOLATED


def cmd_explain(args) -> int:
    model = persistence.load_model(args.model)
    node = explain(model, args.component, args.vulnerability)
    if args.format == "machine":
        _emit_json({"component": args.component, "vulnerability": args.vulnerability, "tree": node.as_dict()})
    else:
        print(f"{args.component} / {args.vulnerability}")
        for line in node.outline("  "):
            print(line)
    return EXIT_OK


def _read_source(source: str) -> bytes:
    if source.startswith(("http://", "https://")):
        import requests

        try:
            resp = requests.get(source, timeout=120)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise PostureError(f"cannot download {source}: {exc}", code="io-failure") from None
        return resp.content
    try:
        return Path(source).read_bytes()
    except OSError as exc:
        raise PostureError(f"cannot read {source}: {exc.strerror or exc}", code="io-failure") from None


def cmd_import_cwe(args) -> int:
    model = persistence.load_model(args.model)
    entries = cwe.parse_cwe_catalog(_read_source(args.source), view=args.view, include_deprecated=args.include_deprecated)
    existing = {e.id for e in entries if model.has("vulnerability", e.id)}
    updated_model = cwe.import_cwe(model, entries)
    edges = cwe.edge_count(updated_model, (e.id for e in entries))
    persistence.save_model(updated_model, args.model)
    print(f"added {len(entries) - len(existing)} updated {len(existing)} edges {edges}")
    return EXIT_OK


def cmd_fetch_cves(args) -> int:
    model = persistence.load_model(args.model)
    try:
        spec = nvd.QuerySpec(args.cpe, args.cwe, args.results_per_page)
    except ValueError as exc:
        raise PostureError(str(exc), code="invalid-query") from None

    cache = None
    if args.offline:
        transport = nvd.FixtureTransport(args.offline)
    else:
        transport = nvd.LiveTransport()
        if args.record:
            transport = nvd.RecordingTransport(transport, args.record)
        if not args.no_cache:
            cache = nvd.ResponseCache(args.cache_dir, ttl=args.ttl)
    records = nvd.NvdClient(transport, cache).fetch_cves(spec)

    type_id = args.type_id or args.cpe
    if not model.has("component-type", type_id):
        model = mutate(model, Upsert(ComponentType(type_id, name=args.cpe, origin=TypeOrigin.NVD_IMPORT)))
        log.info("created component type %s", type_id)
    already = model.component_type(type_id).vulns
    new = [r.id for r in records if r.id not in already]
    model = nvd.import_cves(model, records, type_id)
    persistence.save_model(model, args.model)
    print(f"fetched {len(records)} imported {len(records)} new {len(new)} onto {type_id}")
    for record in records:
        print(f"  {record.id}  {', '.join(record.cwes) or '(no CWE)'}")
    return EXIT_OK


def _edit_change(args):
    action = args.action
    if action == "add-component":
        return Upsert(Component(args.id, args.name or args.id, args.type, args.control), create_only=True)
    if action == "add-type":
        return Upsert(ComponentType(args.id, args.name or args.id, args.vuln), create_only=True)
    if action == "add-vuln":
        kind = VulnKind(args.kind) if args.kind else None
        return Upsert(Vulnerability(args.id, kind, args.title or "", args.parent), create_only=True)
    if action == "add-control":
        return Upsert(Control(args.id, args.name or args.id, args.description), create_only=True)
    if action == "add-rule":
        return Upsert(Rule(args.id, args.name or args.id, args.vuln, args.type, args.control), create_only=True)
    if action == "link":
        return Link(args.relation, args.owner, args.target)
    if action == "unlink":
        return Unlink(args.relation, args.owner, args.target)
    if action == "remove":
        return Delete(args.kind, args.id, cascade=args.cascade)
    raise AssertionError(action)


def cmd_edit(args) -> int:
    model = persistence.load_model(args.model)
    updated = mutate(model, _edit_change(args))
    if updated is model:
        print("no change")
    else:
        persistence.save_model(updated, args.model)
        print("updated")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    # usage errors must not collide with EXIT_VIOLATED, argparse's default
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vulnposture", description="Vulnerability posture reasoning for design models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create an empty model document")
    p.add_argument("model")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("validate", help="check referential integrity and abstraction acyclicity")
    p.add_argument("model")
    p.add_argument("--format", choices=("human", "machine"), default="human")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eval", help="evaluate the design; exit 2 if a vulnerability is left unmitigated")
    p.add_argument("model")
    p.add_argument("--format", choices=("human", "machine"), default="human")
    p.add_argument("--component", action="append", default=[], help="only list this component (repeatable)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="show why a vulnerability is or is not mitigated for a component")
    p.add_argument("model")
    p.add_argument("component")
    p.add_argument("vulnerability")
    p.add_argument("--format", choices=("human", "machine"), default="human")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("import-cwe", help="import a CWE catalogue XML export (file path or URL)")
    p.add_argument("model")
    p.add_argument("source")
    p.add_argument("--view", default=cwe.RESEARCH_VIEW, help="view whose ChildOf relations become abstraction edges")
    p.add_argument("--include-deprecated", action="store_true")
    p.set_defaults(func=cmd_import_cwe)

    p = sub.add_parser("fetch-cves", help="fetch CVEs for a CPE from the NVD and attach them to a component type")
    p.add_argument("model")
    p.add_argument("--cpe", required=True)
    p.add_argument("--cwe", help="only CVEs associated with this CWE")
    p.add_argument("--type-id", help="component type receiving the CVEs (default: the CPE string)")
    p.add_argument("--offline", metavar="DIR", help="replay recorded responses from DIR instead of the network")
    p.add_argument("--record", metavar="DIR", help="record live responses into DIR as replayable fixtures")
    p.add_argument("--cache-dir", default=str(Path.home() / ".cache" / "vulnposture"))
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--ttl", type=float, default=nvd.DEFAULT_TTL, help="cache time-to-live in seconds")
    p.add_argument("--results-per-page", type=int, default=nvd.MAX_PAGE_SIZE)
    p.set_defaults(func=cmd_fetch_cves)

    p = sub.add_parser("edit", help="change the model")
    p.add_argument("model")
    actions = p.add_subparsers(dest="action", required=True)

    a = actions.add_parser("add-component")
    a.add_argument("id")
    a.add_argument("--name")
    a.add_argument("--type", action="append", default=[])
    a.add_argument("--control", action="append", default=[])

    a = actions.add_parser("add-type")
    a.add_argument("id")
    a.add_argument("--name")
    a.add_argument("--vuln", action="append", default=[])

    a = actions.add_parser("add-vuln")
    a.add_argument("id")
    a.add_argument("--title")
    a.add_argument("--kind", choices=[k.value for k in VulnKind])
    a.add_argument("--parent", action="append", default=[])

    a = actions.add_parser("add-control")
    a.add_argument("id")
    a.add_argument("--name")
    a.add_argument("--description")

    a = actions.add_parser("add-rule")
    a.add_argument("id")
    a.add_argument("--name")
    a.add_argument("--vuln", action="append", default=[])
    a.add_argument("--type", action="append", default=[])
    a.add_argument("--control", action="append", default=[])

    for name in ("link", "unlink"):
        a = actions.add_parser(name, help="RELATION TARGET OWNER, e.g. 'control use_memory_safe_languages Application'")
        a.add_argument("relation", choices=sorted(RELATIONS))
        a.add_argument("target")
        a.add_argument("owner")

    a = actions.add_parser("remove")
    a.add_argument("kind", choices=sorted(KINDS))
    a.add_argument("id")
    a.add_argument("--cascade", action="store_true", help="also drop every reference to the entity")

    p.set_defaults(func=cmd_edit)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except PostureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
