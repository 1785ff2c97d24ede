import numpy as np
import pytest

from shopdispatch.sim import JobSpec, ShopConfig, init_env

# desk-scale shop used by the training experiments (jobs up to T=8 long)
SMALL = ShopConfig(T=8, Z=3, n=5, m=10, traj_len=50, long_range=(6, 8))
TEST_SEEDS = list(range(100, 110))


@pytest.fixture
def small():
    return SMALL


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_state(config, schedule=(), slots=None, backlog=0, clock=0):
    """Hand-built state: ``schedule`` is a list of (start, p, due) blocks."""
    st = init_env(config, 0)
    st.clock = clock
    jid = 1000
    for start, p, due in schedule:
        job = JobSpec(jid, 0, p, due)
        st.schedule[start:start + p] = jid
        st.jobs[jid] = job
        st.completions[jid] = clock + start + p
        jid += 1
    for i, spec in (slots or {}).items():
        p, slack = spec
        st.slots[i - 1] = JobSpec(jid, clock, p, clock + p + slack)
        jid += 1
    for _ in range(backlog):
        st.backlog.append(JobSpec(jid, clock, 1, clock + 5))
        jid += 1
    return st


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


def record(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
