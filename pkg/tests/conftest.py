import pytest

from reasonpath.corpus import Corpus, Paragraph


def para(pid, text, links=(), intro=None):
    title, idx = pid.rsplit("/", 1)
    idx = int(idx)
    return Paragraph(pid, title, idx, text, tuple(links), idx == 0 if intro is None else intro)


@pytest.fixture
def xy_corpus():
    return Corpus([
        para("X/0", "x one about rivers", links=("Y",)),
        para("X/1", "x two about lakes"),
        para("Y/0", "y one about mountains"),
        para("Y/1", "y two about valleys"),
    ])


ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail):
    ACCEPTANCE_LINES.append(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
