import numpy as np
import pytest

from photonic_graybox import metrics
from photonic_graybox.chip import interferometer_readings
from photonic_graybox.errors import ContractViolation, ReconstructionError

from conftest import random_unitary


def test_mse():
    assert metrics.mse([1, 2], [1, 4]) == 2.0
    with pytest.raises(ContractViolation):
        metrics.mse([1], [1, 2])


def test_infidelity_values():
    x13 = np.array([[0, 0, 1], [0, 1, 0], [1, 0, 0]], complex)
    assert metrics.gate_infidelity(np.eye(3), np.eye(3)) == pytest.approx(0, abs=1e-15)
    # |tr X13|^2 / 9 = 1/9
    assert metrics.gate_infidelity(np.eye(3), x13) == pytest.approx(8 / 9)
    assert metrics.gate_infidelity(x13, 1j * x13) == pytest.approx(0, abs=1e-15)


def test_infidelity_rejects_non_unitary():
    with pytest.raises(ContractViolation):
        metrics.gate_infidelity(np.eye(3), 2 * np.eye(3))
    with pytest.raises(ContractViolation):
        metrics.gate_infidelity(np.eye(3), np.eye(2))


def test_reconstruct_examples():
    assert metrics.reconstruct_amplitude(metrics.InterferometerPair(1.0, 0.5)) == pytest.approx(1.0)
    assert metrics.reconstruct_amplitude(metrics.InterferometerPair(0.25, 0.25)) == pytest.approx(0.0)


def test_roundtrip_outside_mirror_region(rng):
    r = np.sqrt(rng.uniform(size=5000))
    alpha = r * np.exp(2j * np.pi * rng.uniform(size=5000))
    p0, ph = 0.25 * np.abs(alpha + 1) ** 2, 0.25 * np.abs(alpha + 1j) ** 2
    keep = ~metrics.ambiguous(p0, ph)
    got, _ = metrics.reconstruct_amplitudes(p0[keep], ph[keep])
    assert np.max(np.abs(got - alpha[keep])) < 1e-10


def test_mirror_pair_gives_same_readings():
    a = -0.4 - 0.4j  # mirror -0.6 - 0.6j also lies in the disk
    mirror = -1 - a.imag - 1j * (1 + a.real)  # reflection across Re + Im = -1
    pa, pm = metrics.interferometer_pair(a), metrics.interferometer_pair(mirror)
    assert pa.p0 == pytest.approx(pm.p0) and pa.p_half == pytest.approx(pm.p_half)
    assert metrics.ambiguous(pa.p0, pa.p_half)


def test_inconsistent_reading_raises():
    with pytest.raises(ReconstructionError) as err:
        metrics.reconstruct_amplitude(metrics.InterferometerPair(1.0, 1.0))
    assert err.value.residual > 1e-6
    _, res = metrics.reconstruct_amplitudes(1.0, 1.0, strict=False)
    assert res > 1e-6


def test_unitary_from_trace(rng):
    for _ in range(50):
        u = random_unitary(rng, 3)
        step = interferometer_readings(u).reshape(-1)
        rec = metrics.unitary_from_trace(step)
        assert not rec.flagged
        np.testing.assert_allclose(rec.matrix, u, atol=1e-9)


def test_unitaries_from_traces_shape(rng):
    u = np.stack([random_unitary(rng, 3) for _ in range(4)])
    traces = interferometer_readings(u).reshape(2, 2, 18)
    assert metrics.unitaries_from_traces(traces, 3).shape == (2, 2, 3, 3)


def test_wrong_reading_count():
    with pytest.raises(ContractViolation):
        metrics.unitary_from_trace(np.zeros(17), 3)
