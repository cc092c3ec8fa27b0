"""Randomized invariants over the whole stack."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from photonic_graybox import chip, linalg, metrics, nn
from photonic_graybox import controller as ctl
from photonic_graybox import dataset as ds
from photonic_graybox import model as gm
from photonic_graybox.chip import ChipParams, VoltageSequence

PARAMS = ChipParams()
FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])

finite = st.floats(-1e3, 1e3, allow_nan=False)
volts = st.floats(-5, 5, allow_nan=False)


def _hermitian(vals, n=3):
    m = (vals[: n * n] + 1j * vals[n * n:]).reshape(n, n)
    return m + m.conj().T


@FAST
@given(arrays(float, 18, elements=st.floats(-50, 50)), st.floats(1e-3, 10))
def test_exponential_is_unitary(vals, length):
    assert linalg.unitarity_error(linalg.mat_exp_unitary(_hermitian(vals), length)) < 1e-10


@FAST
@given(arrays(float, 18, elements=st.floats(-1, 1)), st.floats(-1e4, 1e4))
def test_eig_shift_equivariance(vals, c):
    h = _hermitian(vals)
    a = linalg.herm_eig(h).eigenvalues
    b = linalg.herm_eig(h + c * np.eye(3)).eigenvalues
    np.testing.assert_allclose(b, a + c, atol=1e-10 * max(1.0, abs(c)))


@FAST
@given(arrays(float, (4, 9), elements=finite), st.sampled_from(["classical", "quantum"]))
def test_constructed_hamiltonian_hermitian(vals, mode):
    k = gm.head_width(3, mode)
    h = gm.construct_hamiltonian(vals[:, :k], vals[0, :k], mode, n=3).data
    assert np.array_equal(h, np.conj(np.swapaxes(h, -1, -2)))


@FAST
@given(arrays(float, (6, 6), elements=volts), st.integers(0, 2**31))
def test_simulated_blocks_sum_to_one(v, seed):
    eps = np.random.default_rng(seed).uniform(0.1, 1.0, size=3)
    p = ChipParams(eps=tuple(eps))
    y = chip.simulate(VoltageSequence(0.2, v), p).channels
    assert np.allclose(y.reshape(6, 3, 3).sum(-1), 1.0, atol=1e-9)


@FAST
@given(arrays(float, (5, 6), elements=volts), st.integers(0, 2**31))
def test_model_blocks_sum_to_one_for_any_parameters(v, seed):
    m = gm.ModelState.init(gm.GrayboxConfig(hidden=4, seed=seed % 1000))
    rng = np.random.default_rng(seed)
    m.h0_params.data[:] = rng.normal(scale=3, size=6)
    m.eps_params.data[:] = rng.normal(size=3)
    y = gm.predict_outputs(v, m)
    assert np.allclose(y.reshape(5, 3, 3).sum(-1), 1.0, atol=1e-9)
    q = gm.ModelState.init(gm.GrayboxConfig(hidden=4, mode="quantum", seed=seed % 1000))
    q.h0_params.data[:] = rng.normal(scale=3, size=9)
    yq = gm.predict_outputs(v, q)
    assert yq.min() >= -1e-12 and yq.max() <= 1 + 1e-12


@FAST
@given(arrays(float, (6, 6), elements=volts), st.permutations(range(6)))
def test_pointwise_without_distortion(v, perm):
    p = PARAMS.with_distortion(gain=0.0)
    a = chip.simulate(VoltageSequence(0.2, v), p).channels
    b = chip.simulate(VoltageSequence(0.2, v[list(perm)]), p).channels
    np.testing.assert_allclose(b, a[list(perm)], atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(arrays(float, 4, elements=st.floats(0.5, 5)))
def test_memory_decays_after_pulse(amps):
    v = np.zeros((400, 6))
    v[:100, 1:5] = amps
    y = chip.simulate(VoltageSequence(0.2, v), PARAMS).channels
    rest = ds.zero_voltage_readings(PARAMS)
    dist = np.abs(y[100:] - rest).max(axis=1)
    assert dist[0] > 1e-6
    eff = chip.distort(VoltageSequence(0.2, v), PARAMS).samples[100:]
    assert np.all(np.diff(np.abs(eff).max(axis=1)) <= 0)


@FAST
@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_dataset_determinism_and_partition(seed, count):
    a = ds.generate_voltages(count, PARAMS, seed, 1.0, 0.2)
    b = ds.generate_voltages(count, PARAMS, seed, 1.0, 0.2)
    assert np.array_equal(a, b)
    assert np.abs(a).max() <= 5 and not a[..., [0, -1]].any()
    tr, te = ds.split_dataset(a, np.zeros(a.shape[:2] + (9,)), 0.7, PARAMS, "classical", seed, 1.0, 0.2)
    assert sorted([*tr.indices, *te.indices]) == list(range(count))
    assert len(tr) >= 1 and len(te) >= 1


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_stage2_leaves_whitebox_bit_identical(seed):
    rng = np.random.default_rng(seed)
    m = gm.ModelState.init(gm.GrayboxConfig(hidden=3, seed=seed))
    m.h0_params.data[:] = rng.normal(size=6)
    m.eps_params.data[:] = rng.normal(size=3)
    m.stage1_done = True
    before = m.h0_params.data.tobytes(), m.eps_params.data.tobytes()
    v = rng.uniform(-5, 5, size=(2, 3, 6))
    gm.train_stage2(m, v, rng.uniform(size=(2, 3, 9)), gm.TrainSettings(iterations=2, lr=0.1, log_every=0))
    assert (m.h0_params.data.tobytes(), m.eps_params.data.tobytes()) == before


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_controller_never_touches_frozen_model(seed):
    m = gm.ModelState.init(gm.GrayboxConfig(hidden=3, seed=seed))
    m.stage1_done = m.stage2_done = True
    digest = m.digest()
    c = ctl.build_controller(ctl.ControllerConfig(hidden=3, iterations=2, lr=1.0, seed=seed), m)
    sol = ctl.solve(c, ctl.TargetSchedule(0.2, 1.0, [ctl.Segment(0.2, 0.6, ctl.gate("H13"))]))
    assert m.digest() == digest
    v = sol.voltages.samples
    assert np.abs(v).max() <= 5.0 and not v[:, [0, -1]].any()


@FAST
@given(arrays(float, 7, elements=st.floats(-1e6, 1e6)), st.floats(0.1, 100))
def test_scaled_tanh_bound(x, vmax):
    assert np.all(np.abs(nn.scaled_tanh(x, vmax).data) <= vmax / 2)


@FAST
@given(arrays(float, 5, elements=finite))
def test_rmsprop_zero_lr_identity(g):
    p = nn.Parameter(np.arange(5.0), "p")
    nn.rmsprop_step(p, g, {}, lr=0.0)
    assert np.array_equal(p.data, np.arange(5.0))


@FAST
@given(st.integers(0, 2**31))
def test_infidelity_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    u = linalg.mat_exp_unitary(_hermitian(rng.normal(size=18)), 1.0)
    v = linalg.mat_exp_unitary(_hermitian(rng.normal(size=18)), 1.0)
    f = metrics.gate_infidelity(u, v)
    assert 0 <= f <= 1 and abs(f - metrics.gate_infidelity(v, u)) < 1e-14


@FAST
@given(st.integers(0, 2**31))
def test_quantum_trace_reassembles(seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-5, 5, size=(3, 6))
    channels, u = chip.simulate_samples(v, 0.2, PARAMS, "quantum")
    rec = metrics.unitaries_from_traces(channels, 3)
    assert np.all(metrics.infidelity_batch(rec, u) < 1e-10)
