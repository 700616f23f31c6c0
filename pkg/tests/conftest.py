import numpy as np
import pytest

from treeclime.data import Dataset, encode_categorical
from treeclime.tree import build_fixed_tree

TOY_ROWS = """young large yes harsh 1
young large no harsh 1
middle large yes harsh 1
old medium yes harsh 0
old small yes soft 0
old small no soft 1
middle small no soft 0
young medium yes harsh 1
young small yes soft 0
old medium yes soft 0
young medium no soft 0
middle medium no harsh 0
middle large yes soft 0
old medium no harsh 1"""

TOY_FEATURES = ["age", "hhsize", "mabr", "drought"]

# probabilities of the hand-built three-level tree on the toy rows
TOY_TREE_PROBS = [1, 1, 0.5, 0.4, 0.4, 0.4, 0, 1, 0, 0.4, 0, 0, 0.5, 0.4]

TOY_TREE = {
    "feature": "age",
    "children": {
        "young": {"feature": "drought", "children": {"harsh": None, "soft": None}},
        "old": None,
        "middle": {"feature": "mabr", "children": {"yes": None, "no": None}},
    },
}


def toy_dataset() -> Dataset:
    recs = [r.split() for r in TOY_ROWS.splitlines()]
    data = {c: [r[i] for r in recs] for i, c in enumerate(TOY_FEATURES)}
    data["move"] = [int(r[4]) for r in recs]
    roles = {c: "categorical" for c in TOY_FEATURES}
    roles["move"] = "target"
    return Dataset.from_dict(data, roles)


@pytest.fixture
def toy():
    return toy_dataset()


@pytest.fixture
def toy_tree(toy):
    return build_fixed_tree(TOY_TREE, toy)


@pytest.fixture
def toy_X(toy):
    X, _, _ = encode_categorical(toy, TOY_FEATURES)
    return X


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, filled in by test_acceptance.py and printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
