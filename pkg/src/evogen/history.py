"""History serialization: snapshots, meta-data ledger, replay, validation.

Layout of a generated history directory:

    out/
      revisions/NNNN/     full codebase snapshot per committed revision
      ledger.ndjson       one operation record per line, in commit order
      traces.ndjson       one clone trace per line, append order
      features/NNNN.json  per-revision feature models and asset-to-feature map
      run.json            run configuration and summary
      debug.log           rolled-back and skipped attempts (not part of the
                          ledger contract)

All text is UTF-8 with LF line endings; identical inputs produce bit-identical
directories.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

from . import model
from .errors import (EvogenError, LedgerIoError, ReplayDivergence,
                     SnapshotIoError)
from .model import (AssetNode, AssetTree, FILE, FOLDER, Feature, FeatureModel,
                    REPOSITORY, _feature_to_dict)
from .operations import execute
from .refs import AssetRef, FeatureRef, make_asset_ref, resolve_asset_ref, resolve_feature_ref

SCHEMA_VERSION = 1


def _write_text(path: Path, lines: list[str]) -> None:
    data = "\n".join(lines) + "\n" if lines else ""
    path.write_text(data, encoding="utf-8", newline="\n")


# -- parsing codebases from disk ---------------------------------------------

def parse_directory(tree: AssetTree, path: Path, kind: str) -> AssetNode:
    """Read a directory into an asset node; children ordered by name."""
    node = tree.new_node(kind, path.name)
    for entry in sorted(path.iterdir(), key=lambda p: p.name):
        if entry.is_dir():
            node.children.append(parse_directory(tree, entry, FOLDER))
        elif entry.is_file():
            content = entry.read_text(encoding="utf-8").splitlines()
            node.children.append(tree.new_node(FILE, entry.name, content=content))
    return node


def parse_initial_system(path: Path) -> AssetTree:
    """The user-provided codebase becomes the single initial repository."""
    path = Path(path)
    if not path.is_dir():
        raise SnapshotIoError(f"not a directory: {path}")
    tree = AssetTree()
    repo = parse_directory(tree, path, REPOSITORY)
    repo.feature_model = FeatureModel(Feature(repo.name, origin=f"init:{repo.name}"))
    tree.root.children.append(repo)
    return tree


def parse_snapshot(path: Path) -> AssetTree:
    """Re-parse a materialized snapshot (repositories are top-level dirs)."""
    path = Path(path)
    if not path.is_dir():
        raise SnapshotIoError(f"not a directory: {path}")
    tree = AssetTree()
    for entry in sorted(path.iterdir(), key=lambda p: p.name):
        if entry.is_dir():
            repo = parse_directory(tree, entry, REPOSITORY)
            repo.kind = REPOSITORY
            repo.feature_model = FeatureModel(Feature(repo.name, origin=f"init:{repo.name}"))
            tree.root.children.append(repo)
    return tree


# -- snapshot writing --------------------------------------------------------

def materialize_tree(tree: AssetTree, dest: Path) -> None:
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    for repo in tree.repositories:
        _materialize_node(repo, dest / repo.name)


def _materialize_node(node: AssetNode, dest: Path) -> None:
    if node.kind == FILE:
        _write_text(dest, model.flatten_lines(node))
        return
    dest.mkdir(parents=True, exist_ok=True)
    for child in node.children:
        _materialize_node(child, dest / child.name)


def write_snapshot(tree: AssetTree, revision: int, out_dir: Path) -> Path:
    """Mirror the asset tree to out/revisions/NNNN; idempotent."""
    target = Path(out_dir) / "revisions" / f"{revision:04d}"
    try:
        if target.exists():
            shutil.rmtree(target)
        materialize_tree(tree, target)
    except OSError as exc:
        raise SnapshotIoError(str(exc)) from exc
    return target


# -- ledger and meta-data files ----------------------------------------------

def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def append_ledger(record_dict: dict, out_dir: Path) -> None:
    try:
        with open(Path(out_dir) / "ledger.ndjson", "a", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(_dump({"schema": SCHEMA_VERSION} | record_dict) + "\n")
    except OSError as exc:
        raise LedgerIoError(str(exc)) from exc


def append_traces(traces: list, out_dir: Path) -> None:
    try:
        with open(Path(out_dir) / "traces.ndjson", "a", encoding="utf-8",
                  newline="\n") as fh:
            for t in traces:
                fh.write(_dump({
                    "schema": SCHEMA_VERSION, "op": t.op_id,
                    "source": t.source_ref, "target": t.target_ref,
                    "source_node": t.source_node, "target_node": t.target_node,
                }) + "\n")
    except OSError as exc:
        raise LedgerIoError(str(exc)) from exc


def feature_state(tree: AssetTree) -> dict:
    repos = {}
    for repo in tree.repositories:
        mappings = []
        for node in repo.iter_nodes():
            if node.mapped_features:
                mappings.append({
                    "asset": make_asset_ref(tree, node).to_text(),
                    "features": sorted("/".join(p) for p in node.mapped_features),
                })
        mappings.sort(key=lambda m: m["asset"])
        repos[repo.name] = {
            "model": _feature_to_dict(repo.feature_model.root)
            if repo.feature_model else None,
            "mappings": mappings,
        }
    return {"schema": SCHEMA_VERSION, "revision": tree.revision, "repos": repos}


def write_feature_state(tree: AssetTree, out_dir: Path) -> None:
    features_dir = Path(out_dir) / "features"
    features_dir.mkdir(parents=True, exist_ok=True)
    path = features_dir / f"{tree.revision:04d}.json"
    path.write_text(json.dumps(feature_state(tree), sort_keys=True, indent=1)
                    + "\n", encoding="utf-8", newline="\n")


def read_ledger(out_dir: Path) -> list[dict]:
    path = Path(out_dir) / "ledger.ndjson"
    if not path.is_file():
        return []
    records = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ReplayDivergence(i, f"malformed ledger line: {exc}") from exc
    return records


# -- replay ------------------------------------------------------------------

def replay_history(out_dir: Path, adapter) -> Iterator[tuple[int, AssetTree]]:
    """Re-execute the ledger on top of revision 0, yielding every revision."""
    out_dir = Path(out_dir)
    tree = parse_snapshot(out_dir / "revisions" / "0000")
    yield 0, tree
    for i, record in enumerate(read_ledger(out_dir)):
        try:
            execute(tree, record["kind"], record["params"], record["op_id"],
                    adapter=adapter)
        except EvogenError as exc:
            raise ReplayDivergence(i, f"{type(exc).__name__}: {exc}") from exc
        tree.revision += 1
        if tree.revision != record["revision_after"]:
            raise ReplayDivergence(i, "revision counter mismatch")
        yield tree.revision, tree


def replay(revision0_dir: Path, ledger_path: Path, adapter) -> AssetTree:
    """Final tree after applying the full ledger to the initial snapshot."""
    tree = parse_snapshot(Path(revision0_dir))
    for i, line in enumerate(Path(ledger_path).read_text(encoding="utf-8").splitlines()):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ReplayDivergence(i, f"malformed ledger line: {exc}") from exc
        try:
            execute(tree, record["kind"], record["params"], record["op_id"],
                    adapter=adapter)
        except EvogenError as exc:
            raise ReplayDivergence(i, f"{type(exc).__name__}: {exc}") from exc
        tree.revision += 1
    return tree


# -- validation --------------------------------------------------------------

@dataclass
class ValidationReport:
    violations: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind: str, where: str, message: str) -> None:
        self.violations.append({"kind": kind, "where": where, "message": message})

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": self.violations}


def _dir_files(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def _ref_fields(record: dict) -> Iterator[tuple[str, str]]:
    params = record.get("params", {})
    for key in ("target", "source", "asset", "insertion_parent"):
        if key in params and isinstance(params[key], str):
            yield key, params[key]
    for key in ("feature", "target_parent"):
        if key in params and isinstance(params[key], str) and "!" in params[key]:
            yield key, params[key]
    for sub in record.get("sub_ops", []):
        yield from _ref_fields(sub)


def validate_history(out_dir: Path, adapter, checker=None) -> ValidationReport:
    """Cross-check replay fidelity, ref resolvability, compilability and
    trace/mapping consistency of a generated history."""
    from .minilang import check_snapshot_dir
    out_dir = Path(out_dir)
    report = ValidationReport()
    revisions_dir = out_dir / "revisions"
    if not revisions_dir.is_dir():
        report.add("layout", str(out_dir), "missing revisions directory")
        return report
    if checker is None:
        checker = lambda p: check_snapshot_dir(p, adapter)

    snapshots = sorted(p for p in revisions_dir.iterdir() if p.is_dir())
    expected = [f"{i:04d}" for i in range(len(snapshots))]
    if [p.name for p in snapshots] != expected:
        report.add("layout", str(revisions_dir), "revision directories not dense")
        return report

    try:
        records = read_ledger(out_dir)
    except ReplayDivergence as exc:
        report.add("ledger", "ledger.ndjson", str(exc))
        return report

    run_path = out_dir / "run.json"
    if run_path.is_file():
        summary = json.loads(run_path.read_text())
        committed = summary.get("summary", {}).get("committed_total")
        if committed is not None and committed != len(records):
            report.add("ledger", "run.json",
                       f"ledger has {len(records)} records, run.json says {committed}")

    trees: dict[int, AssetTree] = {}
    import tempfile
    try:
        for revision, tree in replay_history(out_dir, adapter):
            trees[revision] = tree.clone()
            snap = revisions_dir / f"{revision:04d}"
            if not snap.is_dir():
                report.add("replay", snap.name, "snapshot missing")
                continue
            tmp = Path(tempfile.mkdtemp(prefix="evogen-val-"))
            try:
                materialize_tree(tree, tmp)
                if _dir_files(tmp) != _dir_files(snap):
                    report.add("replay-fidelity", snap.name,
                               "replayed state differs from stored snapshot")
            finally:
                shutil.rmtree(tmp, ignore_errors=True)
            problems = checker(snap)
            for problem in problems:
                report.add("compilability", snap.name, problem)
            state_path = out_dir / "features" / f"{revision:04d}.json"
            if not state_path.is_file():
                report.add("layout", state_path.name, "feature state missing")
            else:
                stored = json.loads(state_path.read_text(encoding="utf-8"))
                if stored != feature_state(tree):
                    report.add("mapping-consistency", state_path.name,
                               "stored feature state differs from replayed state")
    except ReplayDivergence as exc:
        report.add("replay", "ledger.ndjson", str(exc))
        return report

    final = trees[max(trees)] if trees else None
    if final is not None:
        stored_traces = []
        traces_path = out_dir / "traces.ndjson"
        if traces_path.is_file():
            stored_traces = [json.loads(l) for l in
                             traces_path.read_text(encoding="utf-8").splitlines()]
        replayed = [{"schema": SCHEMA_VERSION, "op": t.op_id, "source": t.source_ref,
                     "target": t.target_ref, "source_node": t.source_node,
                     "target_node": t.target_node} for t in final.traces.traces]
        if stored_traces != replayed:
            report.add("trace-consistency", "traces.ndjson",
                       f"stored {len(stored_traces)} traces, replay yields {len(replayed)}")
        for line in stored_traces:
            for key in ("source", "target"):
                ref = AssetRef.from_text(line[key])
                tree = trees.get(ref.revision)
                if tree is None:
                    continue
                try:
                    resolve_asset_ref(tree, ref)
                except EvogenError:
                    report.add("ref-resolution", line["op"],
                               f"trace {key} {line[key]} does not resolve")

    for record in records:
        for key, text in _ref_fields(record):
            if "!" in text:
                tree = trees.get(record["revision_before"])
                if tree is None:
                    continue
                try:
                    resolve_feature_ref(tree, FeatureRef.from_text(text))
                except EvogenError:
                    if record["kind"] in ("RemoveFeature",) or key == "feature":
                        continue  # feature may be gone after its own removal
                    report.add("ref-resolution", record["op_id"],
                               f"{key} {text} does not resolve")
            else:
                ref = AssetRef.from_text(text)
                tree = trees.get(ref.revision)
                if tree is None:
                    continue
                try:
                    resolve_asset_ref(tree, ref)
                except EvogenError:
                    report.add("ref-resolution", record["op_id"],
                               f"{key} {text} does not resolve")
    return report
