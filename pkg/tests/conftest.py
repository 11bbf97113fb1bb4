import numpy as np
import pytest

from coevolve.core import Instance, Kind
from coevolve.seeding import rng_from


def random_tsp(n, seed, name=None):
    return Instance(name or f"rand-{n}-{seed}", Kind.TSP, rng_from(seed).random((n, 2)))


def random_op(n, seed, max_len=None):
    rng = rng_from(seed)
    coords = rng.random((n, 2))
    prizes = rng.random(n)
    prizes[0] = 0.0
    if max_len is None:
        max_len = float(rng.uniform(0.8, 2.5))
    return Instance(f"op-{n}-{seed}", Kind.OP, coords, prizes, max_len)


@pytest.fixture
def square():
    return Instance("square", Kind.TSP, np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float))


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """Any socket connection attempt fails the test."""
    import socket

    def refuse(*args, **kwargs):
        raise AssertionError(f"network access attempted: {args!r}")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)


# ---------------------------------------------------------------- acceptance reporting

_ACCEPTANCE: dict[int, tuple[str, str, float, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed:
        msg = str(rep.longrepr.reprcrash.message) if hasattr(rep.longrepr, "reprcrash") else str(rep.longrepr)
        detail = (detail + "; " if detail else "") + msg.splitlines()[0][:160]
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    _ACCEPTANCE[number] = (title, status, rep.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, duration, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2} {status}  {title}  [{duration:.1f}s]  {detail}")
