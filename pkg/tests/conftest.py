import pytest

# Small enough that a full pipeline finishes in a few seconds.
TINY_CONFIG = """\
[task]
name = levy
dim = 3

[dataset]
n = 200

[surrogate]
hidden = 32
epochs = 5

[diffusion]
hidden = 32
epochs = 5

[edit]
K = 16
steps = 16

[run]
seeds = 0, 1
sweep_m = 0, 400
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_CONFIG)
    return path


# Acceptance verdicts, printed together at the end of the session.
VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str) -> bool:
        VERDICTS.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
