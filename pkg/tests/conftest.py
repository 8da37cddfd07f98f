import pytest

from pacer.core import PacerConfig
from pacer.schedule import ScheduleTemplate
from pacer.simnet import Loss, Request, Scenario


def busy_scenario(epochs: int = 200, **kw) -> Scenario:
    """Two flows, three distinct templates, secret-sized responses and both loss kinds."""
    cfg = PacerConfig(delta_delay=900, n_flows=2, cwnd=6)
    d = cfg.delta
    base = dict(
        cfg=cfg, seed=11, epochs=epochs, rtt=250, rto=1500, max_response=30_000,
        schedules=(ScheduleTemplate(0, d, 120, 8), ScheduleTemplate(1, d + 240, 240, 5),
                   ScheduleTemplate(2, d + 60, 90, 14)),
        requests=(Request(100, 1, 0), Request(130, 2, 1), Request(4000, 1, 2), Request(5200, 2, 0),
                  Request(9000, 1, 1), Request(9100, 2, 2, False)),
        losses=(Loss(1, 3, "dupack"), Loss(2, 2, "timeout")),
        secret=5,
    )
    base.update(kw)
    return Scenario(**base)


@pytest.fixture
def busy():
    return busy_scenario()



_ACCEPTANCE: dict[int, list[tuple[str, bool]]] = {}


def pytest_runtest_logreport(report):
    if not report.nodeid.startswith("tests/test_acceptance.py::test_criterion_"):
        return
    if report.when == "call" or report.failed:
        name = report.nodeid.split("::")[-1]
        num = int(name.split("_")[2])
        _ACCEPTANCE.setdefault(num, []).append((name, report.passed))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        results = _ACCEPTANCE[num]
        failed = [name for name, ok in results if not ok]
        status = "FAIL" if failed else "PASS"
        detail = f"{len(results) - len(failed)}/{len(results)} checks"
        if failed:
            detail += " (failed: " + ", ".join(failed) + ")"
        terminalreporter.write_line(f"criterion {num}: {status}  {detail}")
