from pathlib import Path

import pytest

from premsel.ingest import (
    Application, ContextItem, DeBruijn, Literal, PTerm, Pi, RawFile, RawHole, RawScopeEntry,
    ScopeReference, Sort, TermPlus, load_file,
)

FIXTURES = Path(__file__).parent / "fixtures"


def tp(term, pretty="_"):
    return TermPlus(PTerm(pretty, term))


def entry(name, term, holes=()):
    return RawScopeEntry(name, tp(term), PTerm("_", Literal("x")), tuple(holes))


def hole(goal, context=(), premises=()):
    ctx = tuple(ContextItem(n, n, tp(t)) for n, t in context)
    return RawHole(ctx, tp(goal), tp(Literal("x")), tuple(premises))


def ref(name):
    return ScopeReference(name)


def app(head, *args):
    return Application(head, tuple(args))


@pytest.fixture
def nat_comm():
    return load_file(FIXTURES / "nat_comm.json")


@pytest.fixture
def tiny_file():
    """Two imports, two local lemmas, one hole that uses both lemmas."""
    return RawFile(
        "Tiny",
        (entry("A", Sort("Set")), entry("P", Pi("_", ref("A"), Sort("Set")))),
        (entry("a", ref("A")),
         entry("pa", app(ref("P"), ref("a")),
               [hole(app(ref("P"), DeBruijn(0)), [("x", ref("A"))], ["a", "P"])])),
    )


def oversized_file(tokens=2 ** 14):
    """One hole whose goal alone binarizes to more than ``tokens`` nodes."""
    from premsel.ingest import RawFile
    wide = app(ref("f"), *[ref("a")] * (tokens // 2 + 1))
    return RawFile("Oversized", (entry("A", Sort("Set")), entry("a", ref("A")),
                                 entry("f", Pi("_", ref("A"), ref("A")))),
                   (entry("t", ref("A"), [hole(wide, premises=["a"])]),))


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
