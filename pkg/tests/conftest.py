import pytest
import torch

from prdehaze.model import ModelConfig

torch.set_default_dtype(torch.float32)


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def tiny_config():
    """Narrow cascade for fast mechanics tests."""
    return ModelConfig(K=3, widths=(4, 8, 8), residual_width=4, light_width=4,
                       refine_width=4, refine_blocks=2)


# -- acceptance reporting -----------------------------------------------------
# Tests marked ``criterion(n, title)`` get one PASS/FAIL line in the terminal
# summary, with whatever measurements they recorded through ``measured``.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def measured(request):
    notes = []
    request.node.user_properties.append(("measured", notes))
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    notes = dict(item.user_properties).get("measured", [])
    status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
    _CRITERIA[item.nodeid] = (mark.args[0], mark.args[1], status, "; ".join(notes))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, notes in sorted(_CRITERIA.values(), key=lambda r: r[0]):
        line = f"[{status}] criterion {number}: {title}"
        terminalreporter.write_line(line + (f" -- {notes}" if notes else ""))
