import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scet.tensor import precision

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def test_images():
    """Three fixed 64x64 uint8 images cut from the bundled held-out tiles."""
    from scet import imaging
    from scet.training import corpus_dir

    d = corpus_dir("heldout")
    out = []
    for name, (y, x) in (("chelsea.png", (20, 40)), ("text.png", (10, 30)), ("coins.png", (50, 8))):
        img = imaging.load_png(os.path.join(d, name))
        out.append(np.ascontiguousarray(img[y:y + 64, x:x + 64]))
    return out


# -- acceptance reporting -----------------------------------------------------
# Tests marked ``criterion(n, title)`` get one summary line each at the end of
# the run; details come from ``record_property("detail", ...)``.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        detail = dict(item.user_properties).get("detail", "")
        _CRITERIA[n] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[n]
        line = f"criterion {n} [{title}]: {status}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
