import numpy as np
import pytest

from dmpc_manip.kinematics import builtin_model_path, load_model, planar_model

# PASS/FAIL lines appended by the acceptance suite
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def planar2():
    return planar_model(2, 1.0)


@pytest.fixture
def planar3():
    return planar_model(3, 0.7)


@pytest.fixture(scope="session")
def ur3():
    return load_model(builtin_model_path("ur3_like"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_diff(f, x, h=1e-6):
    """Central differences of a vector function, shape f(x).shape + x.shape."""
    x = np.asarray(x, float)
    f0 = np.asarray(f(x))
    out = np.zeros(f0.shape + x.shape)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        out[(...,) + idx] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return out


def assert_rel_close(a, b, rel=1e-5, floor=1e-6):
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    assert np.all(np.abs(a - b) <= rel * scale + 1e-9), np.max(np.abs(a - b) / scale)
