import contextlib
import time

import pytest

_RESULTS_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS_KEY] = []


@pytest.fixture
def criterion(request):
    """Context manager recording one PASS/FAIL line per acceptance criterion."""
    results = request.config.stash[_RESULTS_KEY]

    @contextlib.contextmanager
    def record(number, title):
        t0 = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            results.append(f"FAIL  [{number}] {title} ({time.perf_counter() - t0:.2f}s): "
                           f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
            raise
        results.append(f"PASS  [{number}] {title} ({time.perf_counter() - t0:.2f}s)")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS_KEY, [])
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)
