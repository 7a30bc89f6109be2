import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"


def load_vectors():
    out = {}
    for line in (FIXTURES / "vectors.hex").read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, value = line.split()
        out[name] = bytes.fromhex(value)
    return out


@pytest.fixture(scope="session")
def vectors():
    return load_vectors()


SAMPLE_CAPTURE = """\
13:ac:57:35:3c:ea 59c62b86cdace1fe40446bc80689ccbd323588b8
33:5d:64:6b:cd:b7 3ad310dca4f810ef2b0a17968be47cb6ec59b6b6
09:b2:da:e9:eb:c6 6d5c54d1376e95b7872cfffc93425903102a1673
24:fe:37:59:2c:d6 0376829e0ebd180e82e5756e52ce7cbd7c465a03
04:2c:4d:b1:93:40 b5f1091b23a3871129a1225a6c3cebf175de28fa
"""


@pytest.fixture
def sample_capture():
    return SAMPLE_CAPTURE.splitlines()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
