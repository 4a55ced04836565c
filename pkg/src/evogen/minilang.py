"""Bundled toy-language adapter.

Minilang keeps desk-scale runs free of external toolchains while exercising
every language-specific hook the engine needs:

* source files end in ``.mini``; structure is brace-delimited (``{`` / ``}``)
* ``import a.b.c`` declares a dependency on module ``a.b.c`` (file ``a/b/c.mini``)
* ``def <name> {`` opens a named definition block
* ``@test`` on its own line marks the next brace-delimited ``test <name> {``
  block as a test case
* failure isolation wraps lines in a ``guard { ... }`` block
* the manifest is a ``project.manifest`` file of ``key: value`` lines with the
  keys ``name``, ``deps``, ``slices``, ``srcdir``, ``testdir``
"""

from __future__ import annotations

import re
from pathlib import Path

from .errors import ManifestParseError
from .model import MANIFEST_NAME, ManifestModel, TestCandidate

SOURCE_SUFFIX = ".mini"

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class MinilangAdapter:
    """Language adapter contract implementation for minilang."""

    name = "minilang"

    # -- basic lexical helpers ------------------------------------------

    def is_source_file(self, filename: str) -> bool:
        return filename.endswith(SOURCE_SUFFIX)

    def is_import(self, line: str) -> bool:
        return line.strip().startswith("import ")

    def import_module(self, line: str) -> str:
        return line.strip()[len("import "):].strip()

    def scan_imports(self, lines: list[str]) -> list[str]:
        return [ln.strip() for ln in lines if self.is_import(ln)]

    def module_to_relpath(self, module: str) -> str:
        return module.replace(".", "/") + SOURCE_SUFFIX

    def relpath_to_module(self, relpath: str) -> str:
        return relpath[:-len(SOURCE_SUFFIX)].replace("/", ".")

    # -- structure -------------------------------------------------------

    def defined_symbols(self, lines: list[str]) -> set[str]:
        out = set()
        for line in lines:
            stripped = line.strip()
            if stripped.startswith("def ") and stripped.endswith("{"):
                name = stripped[len("def "):-1].strip()
                if name:
                    out.add(name)
        return out

    def symbol_scan(self, body_lines: list[str]) -> set[str]:
        """All identifiers referenced in a test body."""
        out: set[str] = set()
        for line in body_lines:
            out.update(_IDENT.findall(line))
        return out

    def scan_tests(self, relpath: str, lines: list[str]) -> list[TestCandidate]:
        """Annotated test blocks of one file, in line order."""
        imports = self.scan_imports(lines)
        import_modules = {self.import_module(ln) for ln in imports}
        defs = self.defined_symbols(lines)
        candidates = []
        for i, line in enumerate(lines):
            if line.strip() != "@test" or i + 1 >= len(lines):
                continue
            header = lines[i + 1].strip()
            if not (header.startswith("test ") and header.endswith("{")):
                continue
            name = header[len("test "):-1].strip()
            end = self._matching_close(lines, i + 1)
            if end is None or not name:
                continue
            body = lines[i + 1:end + 1]
            referenced = self.symbol_scan(body)
            local_refs = (referenced & defs) - import_modules
            candidates.append(TestCandidate(
                id=f"{relpath}:{i}",
                file=relpath,
                name=name,
                marker_line=i,
                body_start=i + 1,
                body_end=end,
                imports=list(imports),
                modular=not local_refs,
            ))
        return candidates

    def _matching_close(self, lines: list[str], open_idx: int):
        depth = 0
        for j in range(open_idx, len(lines)):
            depth += lines[j].count("{") - lines[j].count("}")
            if depth <= 0:
                return j
        return None

    def insertion_points(self, lines: list[str]) -> list[int]:
        """Flat line indices at the end of each depth-1 block body.

        Organ blocks inserted there land inside a "method", keeping brace
        balance intact.
        """
        points = []
        depth = 0
        for i, line in enumerate(lines):
            depth_before = depth
            depth += line.count("{") - line.count("}")
            if depth_before == 1 and depth == 0:
                points.append(i)  # the closing line of a depth-1 block
        return points

    def guard_wrap(self, lines: list[str]) -> list[str]:
        return ["guard {"] + list(lines) + ["}"]

    # -- manifest --------------------------------------------------------

    def manifest_parse(self, lines: list[str]) -> ManifestModel:
        model = ManifestModel(name="")
        for i, raw in enumerate(lines):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition(":")
            if not sep:
                raise ManifestParseError(f"line {i}: {raw!r}")
            key, value = key.strip(), value.strip()
            if key == "name":
                model.name = value
            elif key == "deps":
                model.deps = _split_list(value)
            elif key == "slices":
                model.slices = _split_list(value)
            else:
                model.extras[key] = value
        return model

    def manifest_emit(self, model: ManifestModel) -> list[str]:
        lines = [f"name: {model.name}"]
        if model.deps:
            lines.append("deps: " + ", ".join(model.deps))
        if model.slices:
            lines.append("slices: " + ", ".join(model.slices))
        for key in sorted(model.extras):
            lines.append(f"{key}: {model.extras[key]}")
        return lines


def _split_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


# -- compilability checking over a materialized snapshot ---------------------

def _external_covers(externals: set[str], module: str) -> bool:
    parts = module.split(".")
    return any(".".join(parts[:k]) in externals for k in range(1, len(parts) + 1))


def check_repository_dir(repo_dir: Path, adapter: MinilangAdapter) -> list[str]:
    """Problems found in one materialized repository; empty means compilable.

    Checks brace balance per file and resolution of every import against the
    repository's own modules, its declared slice sets and declared externals.
    """
    problems: list[str] = []
    manifest_path = repo_dir / MANIFEST_NAME
    manifest = ManifestModel(name=repo_dir.name)
    if manifest_path.is_file():
        try:
            manifest = adapter.manifest_parse(manifest_path.read_text().splitlines())
        except ManifestParseError as exc:
            return [f"{manifest_path.name}: {exc}"]

    slice_dirs = [repo_dir / s for s in manifest.slices]
    src_root = repo_dir / manifest.extras["srcdir"] if "srcdir" in manifest.extras else repo_dir

    def modules_under(root: Path, exclude: list[Path] = ()) -> set[str]:
        out = set()
        if not root.is_dir():
            return out
        for path in root.rglob("*" + SOURCE_SUFFIX):
            if any(ex in path.parents for ex in exclude):
                continue
            out.add(adapter.relpath_to_module(path.relative_to(root).as_posix()))
        return out

    own_modules = modules_under(src_root, exclude=slice_dirs)
    slice_modules: set[str] = set()
    externals = set(manifest.deps)
    for sdir in slice_dirs:
        slice_modules |= modules_under(sdir)
        smani = sdir / MANIFEST_NAME
        if smani.is_file():
            try:
                externals |= set(adapter.manifest_parse(smani.read_text().splitlines()).deps)
            except ManifestParseError as exc:
                problems.append(f"{smani}: {exc}")

    for path in sorted(repo_dir.rglob("*" + SOURCE_SUFFIX)):
        rel = path.relative_to(repo_dir).as_posix()
        lines = path.read_text().splitlines()
        depth = 0
        for i, line in enumerate(lines):
            depth += line.count("{") - line.count("}")
            if depth < 0:
                problems.append(f"{rel}:{i}: unbalanced closing brace")
                break
        if depth > 0:
            problems.append(f"{rel}: unclosed brace")
        in_slice = any(sdir in path.parents for sdir in slice_dirs)
        resolvable = (slice_modules if in_slice else own_modules | slice_modules)
        for line in lines:
            if adapter.is_import(line):
                module = adapter.import_module(line)
                if module not in resolvable and not _external_covers(externals, module):
                    problems.append(f"{rel}: unresolved {line.strip()!r}")
    return problems


def check_snapshot_dir(snapshot_dir: Path, adapter: MinilangAdapter) -> list[str]:
    """Check every repository of a materialized snapshot."""
    problems = []
    for repo_dir in sorted(p for p in Path(snapshot_dir).iterdir() if p.is_dir()):
        problems.extend(f"{repo_dir.name}/{msg}" if not msg.startswith(repo_dir.name) else msg
                        for msg in check_repository_dir(repo_dir, adapter))
    return problems
