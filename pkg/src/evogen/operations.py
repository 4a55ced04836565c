"""The five evolution operators as transactional asset-tree mutations.

Every applied change is captured in an OperationRecord whose parameters alone
suffice to re-execute it deterministically; low-level edits performed inside a
high-level operator are recorded as nested sub-operations.
"""

from __future__ import annotations

import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import model
from .errors import (AlreadyPresent, BadIndex, CannotRemoveRoot,
                     DuplicateRepository, EvogenError, NotMutable,
                     UnrelatedRepositories)
from .model import (AssetNode, AssetTree, CloneTrace, FILE, FOLDER, LINE,
                    MANIFEST_NAME, REPOSITORY)
from .refs import (AssetRef, FeatureRef, lpq_to_full_path, make_asset_ref,
                   resolve_asset_ref, resolve_feature_ref)

ADD_LINE = "addLine"
REPLACE_LINE = "replaceLine"
DELETE_LINE = "deleteLine"
MUTATION_KINDS = (ADD_LINE, REPLACE_LINE, DELETE_LINE)

SLICES_DIR = "slices"


@dataclass
class OperationRecord:
    op_id: str
    kind: str
    params: dict
    revision_before: int
    revision_after: int
    sub_ops: list["OperationRecord"] = field(default_factory=list)

    def add_sub(self, kind: str, params: dict) -> "OperationRecord":
        sub = OperationRecord(f"{self.op_id}.{len(self.sub_ops)}", kind, params,
                              self.revision_before, self.revision_after)
        self.sub_ops.append(sub)
        return sub

    def to_dict(self) -> dict:
        return {
            "op_id": self.op_id,
            "kind": self.kind,
            "revision_before": self.revision_before,
            "revision_after": self.revision_after,
            "params": self.params,
            "sub_ops": [s.to_dict() for s in self.sub_ops],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OperationRecord":
        rec = cls(data["op_id"], data["kind"], data["params"],
                  data["revision_before"], data["revision_after"])
        rec.sub_ops = [cls.from_dict(s) for s in data.get("sub_ops", [])]
        return rec


# -- shared helpers ----------------------------------------------------------

def detach_node(tree: AssetTree, node: AssetNode) -> None:
    trail = tree.path_to(node)
    if not trail or len(trail) < 2:
        raise EvogenError(f"cannot detach {node.name!r}")
    trail[-2].children.remove(node)


def slice_location(tree: AssetTree, repo: AssetNode,
                   node: AssetNode) -> Optional[tuple[str, str]]:
    """(donor id, donor-relative path) when `node` is a file inside a slice."""
    trail = tree.path_to(node)
    if not trail:
        return None
    names = [n.name for n in trail[trail.index(repo) + 1:]]
    if len(names) >= 3 and names[0] == SLICES_DIR:
        return names[1], "/".join(names[2:])
    return None


def drop_donor_inclusion(tree: AssetTree, repo: AssetNode, node: AssetNode) -> None:
    loc = slice_location(tree, repo, node)
    if loc:
        donor_id, rel = loc
        donor = tree.donors.get(donor_id)
        if donor and repo.name in donor.included_in:
            donor.included_in[repo.name].discard(rel)


def ensure_folder_path(tree: AssetTree, base: AssetNode, segments: list[str],
                       record: Optional[OperationRecord] = None) -> AssetNode:
    node = base
    for name in segments:
        child = node.child_named(name)
        if child is None:
            child = tree.new_node(FOLDER, name)
            node.children.append(child)
            if record is not None:
                record.add_sub("AddAsset", {
                    "asset": make_asset_ref(tree, child).at_revision(
                        record.revision_after).to_text(),
                    "kind": FOLDER, "name": name})
        node = child
    return node


def update_manifest_asset(tree: AssetTree, repo: AssetNode, adapter,
                          mutate: Callable, record: OperationRecord) -> None:
    """Parse, modify and re-emit a repository's manifest file asset."""
    manifest_node = repo.child_named(MANIFEST_NAME)
    if manifest_node is None:
        manifest_node = tree.new_node(FILE, MANIFEST_NAME, content=[])
        repo.children.append(manifest_node)
    manifest = adapter.manifest_parse(model.flatten_lines(manifest_node))
    if not manifest.name:
        manifest.name = repo.name
    mutate(manifest)
    new_lines = adapter.manifest_emit(manifest)
    manifest_node.content = new_lines
    manifest_node.children = []
    record.add_sub("UpdateManifest", {
        "asset": make_asset_ref(tree, manifest_node).at_revision(
            record.revision_after).to_text(),
        "content": new_lines})


def _record_subtree_traces(tree: AssetTree, source: AssetNode, target: AssetNode,
                           op_id: str, rev_after: int) -> int:
    """One trace for the pair plus one per corresponding descendant."""
    count = 0
    pairs = [(source, target)]
    while pairs:
        src, tgt = pairs.pop(0)
        tree.traces.add(CloneTrace(
            op_id,
            make_asset_ref(tree, src).at_revision(rev_after).to_text(),
            make_asset_ref(tree, tgt).at_revision(rev_after).to_text(),
            src.node_id, tgt.node_id))
        count += 1
        pairs.extend(zip(src.children, tgt.children))
    return count


# -- RemoveFeature -----------------------------------------------------------

def apply_remove_feature(tree: AssetTree, params: dict, op_id: str,
                         adapter=None) -> OperationRecord:
    rev_after = tree.revision + 1
    record = OperationRecord(op_id, "RemoveFeature", dict(params),
                             tree.revision, rev_after)
    ref = FeatureRef.from_text(params["feature"])
    repo, feature = resolve_feature_ref(tree, ref)
    assert repo.feature_model is not None
    feature_path = lpq_to_full_path(repo.feature_model, ref.lpq)
    if feature is repo.feature_model.root:
        raise CannotRemoveRoot(feature.name)

    removed_paths = {p for p in repo.feature_model.paths()
                     if p[:len(feature_path)] == feature_path}
    exclusive = model.feature_exclusive_assets(repo, feature_path)

    # refs cite the pre-state, so mint them before surgery shifts any index
    pre_refs = {a.node_id: make_asset_ref(tree, a).to_text() for a in exclusive}
    for asset in exclusive:
        if not tree.contains(asset):  # ancestor already removed
            continue
        record.add_sub("RemoveAsset", {"asset": pre_refs[asset.node_id]})
        drop_donor_inclusion(tree, repo, asset)
        for node in asset.iter_nodes():
            tree.traces.tombstone(node.node_id, rev_after)
        detach_node(tree, asset)

    for node in repo.iter_nodes():
        stale = node.mapped_features & removed_paths
        if stale:
            node.mapped_features -= stale
            record.add_sub("RemoveMapping", {
                "asset": make_asset_ref(tree, node).at_revision(rev_after).to_text(),
                "features": sorted("/".join(p) for p in stale)})

    repo.feature_model.remove(feature_path)
    return record


# -- MutateAsset -------------------------------------------------------------

def apply_mutate_asset(tree: AssetTree, params: dict, op_id: str,
                       adapter=None) -> OperationRecord:
    record = OperationRecord(op_id, "MutateAsset", dict(params),
                             tree.revision, tree.revision + 1)
    target = resolve_asset_ref(tree, AssetRef.from_text(params["target"]))
    if target.kind != FILE or target.name == MANIFEST_NAME:
        raise NotMutable(target.name)
    kind = params["mutation"]
    idx = params["line"]
    if kind not in MUTATION_KINDS:
        raise EvogenError(f"unknown mutation {kind!r}")
    if not 0 <= idx < model.file_line_count(target):
        raise BadIndex(f"{idx} in {target.name}")
    if kind == DELETE_LINE:
        model.delete_line(target, idx)
    elif kind == REPLACE_LINE:
        model.replace_line(target, idx, params["donor_line"])
    else:
        model.insert_line(tree, target, idx, params["donor_line"])
    return record


# -- CloneVariant ------------------------------------------------------------

def apply_clone_variant(tree: AssetTree, params: dict, op_id: str,
                        adapter=None) -> OperationRecord:
    rev_after = tree.revision + 1
    record = OperationRecord(op_id, "CloneVariant", dict(params),
                             tree.revision, rev_after)
    source = resolve_asset_ref(tree, AssetRef.from_text(params["source"]))
    if source.kind != REPOSITORY:
        raise EvogenError("clone source must be a repository")
    new_name = params["new_name"]
    if tree.find_repository(new_name) is not None:
        raise DuplicateRepository(new_name)
    clone = tree.deep_copy_node(source)
    clone.name = new_name
    tree.root.children.append(clone)
    _record_subtree_traces(tree, source, clone, op_id, rev_after)
    for donor in tree.donors.values():
        if source.name in donor.included_in:
            donor.included_in[new_name] = set(donor.included_in[source.name])
    return record


# -- CloneFeature ------------------------------------------------------------

def apply_clone_feature(tree: AssetTree, params: dict, op_id: str,
                        adapter=None) -> OperationRecord:
    rev_after = tree.revision + 1
    record = OperationRecord(op_id, "CloneFeature", dict(params),
                             tree.revision, rev_after)
    src_repo = tree.find_repository(params["source_repo"])
    tgt_repo = tree.find_repository(params["target_repo"])
    if src_repo is None or tgt_repo is None or not tree.repositories_related(src_repo, tgt_repo):
        raise UnrelatedRepositories(f"{params['source_repo']} / {params['target_repo']}")
    assert src_repo.feature_model is not None and tgt_repo.feature_model is not None

    feature_ref = FeatureRef.from_text(params["feature"])
    feature_path = lpq_to_full_path(src_repo.feature_model, feature_ref.lpq)
    feature = src_repo.feature_model.find(feature_path)
    parent_ref = FeatureRef.from_text(params["target_parent"])
    parent_path = lpq_to_full_path(tgt_repo.feature_model, parent_ref.lpq)
    parent_feature = tgt_repo.feature_model.find(parent_path)
    if parent_feature.child(feature.name) is not None or any(
            f.name == feature.name for f in tgt_repo.feature_model.root.iter_features()):
        raise AlreadyPresent(feature.name)

    parent_feature.children.append(feature.copy())
    target_feature_path = parent_path + (feature.name,)
    record.add_sub("AddFeature", {"feature": "/".join(target_feature_path)})

    def translate(path: tuple[str, ...]) -> tuple[str, ...]:
        return target_feature_path + path[len(feature_path):]

    cloned_paths = {p for p in src_repo.feature_model.paths()
                    if p[:len(feature_path)] == feature_path}
    plan: dict = params.get("plan") or {}
    new_slice_dirs: list[str] = []

    for asset in list(src_repo.iter_nodes()):
        relevant = asset.mapped_features & cloned_paths
        if not relevant:
            continue
        mapped_paths = sorted(translate(p) for p in relevant)
        twin = tree.corresponding_asset(asset, tgt_repo)
        if twin is not None:
            twin.mapped_features |= set(mapped_paths)
            record.add_sub("AddMapping", {
                "asset": make_asset_ref(tree, twin).at_revision(rev_after).to_text(),
                "features": ["/".join(p) for p in mapped_paths]})
            continue

        src_trail = tree.path_to(asset)
        src_parent = src_trail[-2]
        tgt_parent = tree.corresponding_asset(src_parent, tgt_repo)
        if tgt_parent is None:
            # parent chain exists only as folders (e.g. a slice directory)
            names = [n.name for n in src_trail[src_trail.index(src_repo) + 1:-1]]
            if any(n.kind not in (FOLDER, REPOSITORY) for n in src_trail[
                    src_trail.index(src_repo):-1]):
                raise EvogenError(f"no corresponding parent for {asset.name!r}")
            tgt_parent = ensure_folder_path(tree, tgt_repo, names, record)

        src_ref = make_asset_ref(tree, asset).to_text()
        if src_ref in plan:
            index = plan[src_ref]
        else:
            index = _default_integration_index(tree, src_parent, asset, tgt_parent, tgt_repo)
        clone = tree.deep_copy_node(asset)
        for node in clone.iter_nodes():
            node.mapped_features = set()
        clone.mapped_features = set(mapped_paths)
        tgt_parent.children.insert(index, clone)
        _record_subtree_traces(tree, asset, clone, op_id, rev_after)
        record.add_sub("CloneAsset", {
            "source": src_ref,
            "target": make_asset_ref(tree, clone).at_revision(rev_after).to_text(),
            "index": index,
            "features": ["/".join(p) for p in mapped_paths]})

        loc = slice_location(tree, tgt_repo, clone)
        if loc and clone.kind == FILE:
            donor_id, rel = loc
            donor = tree.donors.get(donor_id)
            if donor is not None:
                donor.included_in.setdefault(tgt_repo.name, set()).add(rel)
            slice_dir = f"{SLICES_DIR}/{donor_id}"
            if slice_dir not in new_slice_dirs:
                new_slice_dirs.append(slice_dir)

    _declare_slices(tree, src_repo, tgt_repo, new_slice_dirs, record, adapter, op_id, rev_after)
    return record


def _default_integration_index(tree: AssetTree, src_parent: AssetNode,
                               asset: AssetNode, tgt_parent: AssetNode,
                               tgt_repo: AssetNode) -> int:
    """Append after the last traced predecessor sibling, else append last."""
    tgt_positions = {c.node_id: i for i, c in enumerate(tgt_parent.children)}
    best = -1
    for sibling in src_parent.children:
        if sibling is asset:
            break
        try:
            twin = tree.corresponding_asset(sibling, tgt_repo)
        except UnrelatedRepositories:
            twin = None
        if twin is not None and twin.node_id in tgt_positions:
            best = max(best, tgt_positions[twin.node_id])
    return best + 1 if best >= 0 else len(tgt_parent.children)


def _declare_slices(tree: AssetTree, src_repo: AssetNode, tgt_repo: AssetNode,
                    new_slice_dirs: list[str], record: OperationRecord,
                    adapter, op_id: str, rev_after: int) -> None:
    """Make newly introduced slices buildable in the target repository."""
    if not new_slice_dirs or adapter is None:
        return
    manifest_node = tgt_repo.child_named(MANIFEST_NAME)
    declared = []
    if manifest_node is not None:
        declared = adapter.manifest_parse(model.flatten_lines(manifest_node)).slices
    missing = [s for s in new_slice_dirs if s not in declared]
    for slice_dir in missing:
        donor_id = slice_dir.split("/", 1)[1]
        tgt_slice = ensure_folder_path(tree, tgt_repo,
                                       [SLICES_DIR, donor_id], record)
        if tgt_slice.child_named(MANIFEST_NAME) is None:
            src_slice = src_repo.child_named(SLICES_DIR)
            src_mani = None
            if src_slice is not None and src_slice.child_named(donor_id) is not None:
                src_mani = src_slice.child_named(donor_id).child_named(MANIFEST_NAME)
            if src_mani is not None:
                clone = tree.deep_copy_node(src_mani)
                clone.mapped_features = set()
                tgt_slice.children.append(clone)
                _record_subtree_traces(tree, src_mani, clone, op_id, rev_after)
                record.add_sub("CloneAsset", {
                    "source": make_asset_ref(tree, src_mani).to_text(),
                    "target": make_asset_ref(tree, clone).at_revision(rev_after).to_text(),
                    "index": len(tgt_slice.children) - 1,
                    "features": []})
    if missing:
        def add_slices(manifest):
            for s in missing:
                if s not in manifest.slices:
                    manifest.slices.append(s)
        update_manifest_asset(tree, tgt_repo, adapter, add_slices, record)


# -- dispatch and transactions -----------------------------------------------

def execute(tree: AssetTree, kind: str, params: dict, op_id: str,
            adapter=None) -> OperationRecord:
    from .transplant import apply_transplant_feature
    handlers = {
        "RemoveFeature": apply_remove_feature,
        "MutateAsset": apply_mutate_asset,
        "CloneVariant": apply_clone_variant,
        "CloneFeature": apply_clone_feature,
        "TransplantFeature": apply_transplant_feature,
    }
    if kind not in handlers:
        raise EvogenError(f"unknown operation kind {kind!r}")
    return handlers[kind](tree, params, op_id, adapter=adapter)


@dataclass
class Committed:
    record: OperationRecord
    tree: AssetTree


@dataclass
class RolledBack:
    reason: str


def run_in_transaction(tree: AssetTree, kind: str, params: dict, op_id: str,
                       checker: Callable[[Path], list[str]],
                       adapter=None, scratch_dir: Optional[Path] = None):
    """Apply a candidate on a scratch copy, gate it on the checker.

    Returns Committed (with the new tree at revision + 1) or RolledBack; the
    input tree is never touched.
    """
    from .history import materialize_tree
    scratch = tree.clone()
    try:
        record = execute(scratch, kind, params, op_id, adapter=adapter)
    except EvogenError as exc:
        return RolledBack(f"{type(exc).__name__}: {exc}")
    tmp = tempfile.mkdtemp(prefix="evogen-txn-", dir=scratch_dir)
    try:
        materialize_tree(scratch, Path(tmp))
        try:
            problems = checker(Path(tmp))
        except Exception as exc:  # checker crash or timeout
            return RolledBack(f"checkerError: {exc}")
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    if problems:
        return RolledBack("; ".join(problems[:5]))
    scratch.revision += 1
    return Committed(record, scratch)
