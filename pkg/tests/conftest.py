import random

import pytest

from rankstego.model import BigramModel, bundled_corpus


@pytest.fixture(scope="session")
def corpus_text():
    return bundled_corpus()


@pytest.fixture(scope="session")
def corpus_lines(corpus_text):
    return [line for line in corpus_text.splitlines() if line]


@pytest.fixture(scope="session")
def ref_model(corpus_text):
    return BigramModel.from_corpus(corpus_text)


@pytest.fixture(scope="session")
def uniform_model():
    return BigramModel.from_corpus("")


@pytest.fixture
def rng():
    return random.Random(1234)


PRINTABLE = "".join(chr(c) for c in range(32, 127))


def random_printable(rng, n):
    return "".join(rng.choice(PRINTABLE) for _ in range(n))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
