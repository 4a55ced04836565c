import random
from pathlib import Path

import pytest

from evogen.history import parse_initial_system
from evogen.minilang import MinilangAdapter
from evogen.model import (FILE, FOLDER, LINE, REPOSITORY, AssetTree, Feature,
                          FeatureModel)
from evogen.transplant import load_donor


@pytest.fixture
def adapter():
    return MinilangAdapter()


# -- on-disk fixtures --------------------------------------------------------

INITIAL_MAIN = [
    "def main {",
    "show greeting",
    "add numbers",
    "}",
    "def render {",
    "emit output",
    "}",
]

INITIAL_UTIL = [
    "def sum {",
    "loop over items",
    "}",
]


def write_initial_system(root: Path, name: str = "calc") -> Path:
    system = root / name
    system.mkdir(parents=True)
    (system / "project.manifest").write_text("name: " + name + "\n")
    (system / "main.mini").write_text("\n".join(INITIAL_MAIN) + "\n")
    (system / "util.mini").write_text("\n".join(INITIAL_UTIL) + "\n")
    return system


def write_donor(root: Path, name: str, tests: int = 4, modules: int = 3,
                with_nonmodular: bool = False) -> Path:
    """A donor with `modules` chained source modules and `tests` modular
    tests; test k depends on module (k mod modules)."""
    donor = root / name
    (donor / "src" / "lib").mkdir(parents=True)
    (donor / "tests").mkdir(parents=True)
    (donor / "project.manifest").write_text(
        f"name: {name}\ndeps: stdlib\nsrcdir: src\ntestdir: tests\n")
    for m in range(modules):
        lines = [f"def {name}_mod{m} {{", f"work step {m}", "}"]
        if m > 0:
            lines.insert(0, f"import lib.mod{m - 1}")
        (donor / "src" / "lib" / f"mod{m}.mini").write_text("\n".join(lines) + "\n")
    for t in range(tests):
        dep = t % modules
        lines = [
            f"import lib.mod{dep}",
            "import stdlib.io",
            "@test",
            f"test {name}_case{t} {{",
            f"exercise lib.mod{dep}",
            "check outcome",
            "}",
        ]
        (donor / "tests" / f"t{t}.mini").write_text("\n".join(lines) + "\n")
    if with_nonmodular:
        (donor / "tests" / "helper.mini").write_text("\n".join([
            "import stdlib.io",
            "def local_setup {",
            "prepare things",
            "}",
            "@test",
            f"test {name}_helper_case {{",
            "local_setup first",
            "}",
        ]) + "\n")
    return donor


@pytest.fixture
def initial_system(tmp_path):
    return write_initial_system(tmp_path)


@pytest.fixture
def donor_dir(tmp_path):
    return write_donor(tmp_path, "widget", tests=4, modules=3,
                       with_nonmodular=True)


@pytest.fixture
def loaded_tree(initial_system, donor_dir, adapter):
    tree = parse_initial_system(initial_system)
    donor = load_donor(donor_dir, adapter)
    tree.donors[donor.id] = donor
    return tree


# -- in-memory tree builders -------------------------------------------------

def build_repo(tree: AssetTree, name: str, files: dict[str, list[str]]):
    """Repository node with nested files given as path -> lines."""
    repo = tree.new_node(REPOSITORY, name)
    repo.feature_model = FeatureModel(Feature(name, origin=f"init:{name}"))
    for path, lines in files.items():
        parts = path.split("/")
        node = repo
        for part in parts[:-1]:
            nxt = node.child_named(part)
            if nxt is None:
                nxt = tree.new_node(FOLDER, part)
                node.children.append(nxt)
            node = nxt
        node.children.append(tree.new_node(FILE, parts[-1], content=list(lines)))
    tree.root.children.append(repo)
    return repo


def random_fs_tree(rng: random.Random, max_depth: int = 3) -> AssetTree:
    """Random repositories/folders/files tree (filesystem level only)."""
    tree = AssetTree()
    for r in range(rng.randint(1, 3)):
        repo = tree.new_node(REPOSITORY, f"repo{r}")
        repo.feature_model = FeatureModel(Feature(f"repo{r}", origin=f"init:repo{r}"))
        _fill_folder(tree, rng, repo, max_depth)
        tree.root.children.append(repo)
    return tree


def _fill_folder(tree, rng, node, depth):
    for i in range(rng.randint(0, 3)):
        if depth > 0 and rng.random() < 0.4:
            child = tree.new_node(FOLDER, f"d{i}")
            _fill_folder(tree, rng, child, depth - 1)
        else:
            lines = [f"line {j}" for j in range(rng.randint(0, 4))]
            child = tree.new_node(FILE, f"f{i}.mini", content=lines)
        node.children.append(child)


def random_structured_tree(rng: random.Random) -> AssetTree:
    """Like random_fs_tree but some files carry block/line structure."""
    tree = random_fs_tree(rng)
    for node in list(tree.root.iter_nodes()):
        if node.kind == FILE and rng.random() < 0.5:
            node.children = []
            for j in range(rng.randint(1, 3)):
                if rng.random() < 0.5:
                    block = tree.new_node("block", f"b{j}", children=[
                        tree.new_node(LINE, "", content=[f"inner {k}"])
                        for k in range(rng.randint(1, 3))])
                    node.children.append(block)
                else:
                    node.children.append(
                        tree.new_node(LINE, "", content=[f"flat {j}"]))
            node.content = None
    return tree
