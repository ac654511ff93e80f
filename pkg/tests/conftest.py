import math

import numpy as np
import pytest
from hypothesis import strategies as st

from risloc.codebook import build_ms_codebook, build_ris_codebook
from risloc.geometry import ScenarioGeometry
from risloc.training import Link


@pytest.fixture(scope="session")
def ref_geom():
    return ScenarioGeometry()


@pytest.fixture(scope="session")
def ris_cb(ref_geom):
    return build_ris_codebook(ref_geom)


@pytest.fixture(scope="session")
def ms_cb(ref_geom):
    return build_ms_codebook(ref_geom)


@pytest.fixture(scope="session")
def ref_link(ref_geom):
    return Link.from_geometry(ref_geom)


def random_scene(rng: np.random.Generator, base: ScenarioGeometry | None = None) -> ScenarioGeometry:
    """MS 5-90 m in front of the RIS: far field for 16 elements, inside one delay period."""
    base = base or ScenarioGeometry()
    d = rng.uniform(5.0, 90.0)
    theta = rng.uniform(-1.3, 1.3)
    alpha = rng.uniform(-0.2, 0.2)
    pos = (base.ris_position[0] + d * math.cos(theta), base.ris_position[1] + d * math.sin(theta))
    return base.with_ms(pos, alpha)


# hypothesis strategy for the same annulus
scene_strategy = st.builds(
    lambda d, th, a: ScenarioGeometry().with_ms((40 + d * math.cos(th), 60 + d * math.sin(th)), a),
    st.floats(5.0, 90.0),
    st.floats(-1.3, 1.3),
    st.floats(-0.2, 0.2),
)


# --- acceptance reporting: one PASS/FAIL line per criterion in the terminal summary -------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when == "teardown":
        return
    if rep.when == "setup" and rep.passed:
        return
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA[mark.args[0]] = ("PASS" if rep.passed else "FAIL", mark.args[1], detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        status, text, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}  {text}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
