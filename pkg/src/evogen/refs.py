"""Replayable references: filepath + index path for assets, LPQ for features.

Textual forms (these exact strings appear in the ledger):
  asset:   ``<revision>:<filesystemPath>#<i0.i1...>``  (``#...`` omitted when
           the index path is empty)
  feature: ``<repoPath>!<lpq>``
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DanglingRef, NotInTree, StaleRef, UnknownFeature
from .model import FS_KINDS, AssetNode, AssetTree, Feature, FeatureModel


@dataclass(frozen=True)
class AssetRef:
    revision: int
    fs_path: str  # forward-slash path from the synthetic root; root is "/"
    index_path: tuple[int, ...] = ()

    def to_text(self) -> str:
        text = f"{self.revision}:{self.fs_path}"
        if self.index_path:
            text += "#" + ".".join(str(i) for i in self.index_path)
        return text

    @classmethod
    def from_text(cls, text: str) -> "AssetRef":
        rev_part, _, rest = text.partition(":")
        path, _, idx = rest.partition("#")
        index_path = tuple(int(i) for i in idx.split(".")) if idx else ()
        return cls(int(rev_part), path, index_path)

    def at_revision(self, revision: int) -> "AssetRef":
        return AssetRef(revision, self.fs_path, self.index_path)


@dataclass(frozen=True)
class FeatureRef:
    repo_path: str
    lpq: tuple[str, ...]

    def to_text(self) -> str:
        return f"{self.repo_path}!{'/'.join(self.lpq)}"

    @classmethod
    def from_text(cls, text: str) -> "FeatureRef":
        repo, _, lpq = text.partition("!")
        return cls(repo, tuple(lpq.split("/")))


def make_asset_ref(tree: AssetTree, node: AssetNode) -> AssetRef:
    trail = tree.path_to(node)
    if trail is None:
        raise NotInTree(node.name)
    fs_segments: list[str] = []
    index_path: list[int] = []
    for parent, child in zip(trail, trail[1:]):
        if child.kind in FS_KINDS and not index_path:
            fs_segments.append(child.name)
        else:
            index_path.append(parent.children.index(child))
    fs_path = "/" + "/".join(fs_segments) if fs_segments else "/"
    return AssetRef(tree.revision, fs_path, tuple(index_path))


def resolve_asset_ref(tree: AssetTree, ref: AssetRef) -> AssetNode:
    if ref.revision != tree.revision:
        raise StaleRef(f"{ref.to_text()} against revision {tree.revision}")
    node = tree.root
    if ref.fs_path != "/":
        for segment in ref.fs_path.strip("/").split("/"):
            node = node.child_named(segment)
            if node is None or node.kind not in FS_KINDS:
                raise DanglingRef(ref.to_text())
    for idx in ref.index_path:
        if idx >= len(node.children):
            raise DanglingRef(ref.to_text())
        node = node.children[idx]
    return node


def repo_path_of(tree: AssetTree, repo: AssetNode) -> str:
    return make_asset_ref(tree, repo).fs_path


def make_feature_lpq(model: FeatureModel, feature: Feature) -> tuple[str, ...]:
    """Shortest name-path suffix identifying `feature` uniquely in `model`."""
    paths = model.paths()
    target = None
    for path in paths:
        if model.find(path) is feature:
            target = path
            break
    if target is None:
        raise UnknownFeature(feature.name)
    for k in range(1, len(target) + 1):
        suffix = target[-k:]
        if sum(1 for p in paths if p[-k:] == suffix) == 1:
            return suffix
    return target


def resolve_lpq(model: FeatureModel, lpq: tuple[str, ...]) -> Feature:
    matches = [p for p in model.paths() if p[-len(lpq):] == lpq]
    if len(matches) != 1:
        raise UnknownFeature("/".join(lpq))
    return model.find(matches[0])


def lpq_to_full_path(model: FeatureModel, lpq: tuple[str, ...]) -> tuple[str, ...]:
    matches = [p for p in model.paths() if p[-len(lpq):] == lpq]
    if len(matches) != 1:
        raise UnknownFeature("/".join(lpq))
    return matches[0]


def make_feature_ref(tree: AssetTree, repo: AssetNode, feature: Feature) -> FeatureRef:
    assert repo.feature_model is not None
    return FeatureRef(repo_path_of(tree, repo),
                      make_feature_lpq(repo.feature_model, feature))


def resolve_feature_ref(tree: AssetTree, ref: FeatureRef) -> tuple[AssetNode, Feature]:
    repo = resolve_asset_ref(tree, AssetRef(tree.revision, ref.repo_path))
    if repo.feature_model is None:
        raise UnknownFeature(ref.to_text())
    return repo, resolve_lpq(repo.feature_model, ref.lpq)
