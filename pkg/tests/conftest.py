import contextlib
import time

import pytest

_RESULTS = []


class AcceptanceReport:
    @contextlib.contextmanager
    def criterion(self, label, detail=""):
        start = time.perf_counter()
        info = {"detail": detail}
        try:
            yield info
        except BaseException:
            _RESULTS.append(("FAIL", label, info["detail"], time.perf_counter() - start))
            raise
        _RESULTS.append(("PASS", label, info["detail"], time.perf_counter() - start))


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceReport()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for status, label, detail, seconds in _RESULTS:
        line = f"[{status}] {label}"
        if detail:
            line += f" :: {detail}"
        terminalreporter.write_line(f"{line} ({seconds:.2f}s)")
