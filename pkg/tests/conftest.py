"""Shared pytest hooks: a PASS/FAIL summary line per acceptance criterion."""

import contextlib

RESULTS: dict = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record the outcome of one acceptance criterion.

    The body sets ``box["ok"]`` and ``box["detail"]``; an exception or a
    missing verdict is recorded as a failure and re-raised.
    """
    box = {"ok": False, "detail": ""}
    try:
        yield box
    except BaseException as exc:
        box["ok"] = False
        box["detail"] = box["detail"] or f"{type(exc).__name__}: {exc}"
        raise
    finally:
        RESULTS[number] = (title, bool(box["ok"]), box["detail"])
        print(f"{'PASS' if box['ok'] else 'FAIL'} criterion {number}: {title} -- {box['detail']}")


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(RESULTS):
        title, ok, detail = RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {title} -- {detail}")
