import pytest

from attachrec.corpus import Message
from attachrec.pipeline import Collection
from attachrec.synthetic import SyntheticSpec, generate_synthetic_corpus

FIXTURE_SEED = 7


def msg(mid, thread, ts, sender="u@x", to=("v@x",), subject="", body="", attachments=(), **kw):
    return Message(
        message_id=mid, thread_id=thread, timestamp=ts, sender=sender, recipients=tuple(to),
        subject=subject, body=body,
        attachments=tuple((a, a) if isinstance(a, str) else a for a in attachments), **kw,
    )


@pytest.fixture(scope="session")
def planted_corpus():
    return generate_synthetic_corpus(SyntheticSpec(), seed=FIXTURE_SEED)


@pytest.fixture(scope="session")
def planted(planted_corpus):
    return Collection(planted_corpus)


@pytest.fixture(scope="session")
def planted_silver(planted):
    return planted.silver(k=10, seed=0)


# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0].rstrip("ab")), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
