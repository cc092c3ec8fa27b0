import numpy as np
import pytest

from photonic_graybox.chip import ChipParams

ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def params():
    return ChipParams()


def random_hermitian(rng, n=3, scale=1.0, batch=None):
    shape = (n, n) if batch is None else (batch, n, n)
    a = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    return 0.5 * scale * (a + np.conj(np.swapaxes(a, -1, -2)))


def random_unitary(rng, n=3):
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
