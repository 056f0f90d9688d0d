import contextlib
import time

import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Context manager recording one acceptance criterion's outcome for the terminal summary."""

    @contextlib.contextmanager
    def run(number, title):
        detail = {}
        t0 = time.perf_counter()
        try:
            yield detail
        except BaseException as err:
            ACCEPTANCE[number] = (False, title, time.perf_counter() - t0, detail, err)
            raise
        ACCEPTANCE[number] = (True, title, time.perf_counter() - t0, detail, None)

    return run


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, seconds, detail, err = ACCEPTANCE[n]
        extra = ", ".join(f"{k}={v}" for k, v in detail.items())
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title} ({seconds:.1f} s)"
        if extra:
            line += f"  [{extra}]"
        if err is not None:
            line += f"  {type(err).__name__}: {str(err).splitlines()[0] if str(err) else ''}"
        terminalreporter.write_line(line)
