import numpy as np
import pytest

from photonic_graybox import autodiff as ad
from photonic_graybox import chip
from photonic_graybox import model as gm
from photonic_graybox.autodiff import Tensor
from photonic_graybox.dataset import zero_voltage_readings
from photonic_graybox.errors import ContractViolation
from photonic_graybox.linalg import unitarity_error

STEP = 1e-6


def small_model(mode="classical", seed=0):
    return gm.ModelState.init(gm.GrayboxConfig(mode=mode, hidden=6, seed=seed))


@pytest.mark.parametrize("mode", ["classical", "quantum"])
def test_constructed_hamiltonian_is_hermitian(mode, rng):
    k = gm.head_width(3, mode)
    h = gm.construct_hamiltonian(rng.normal(size=(4, k)), rng.normal(size=k), mode).data
    np.testing.assert_allclose(h, np.conj(np.swapaxes(h, -1, -2)), atol=0)


def test_classical_assembly_layout():
    h = gm.construct_hamiltonian(np.arange(1.0, 7.0), mode="classical").data
    np.testing.assert_array_equal(h.real, [[2, 2, 3], [2, 8, 5], [3, 5, 12]])
    assert not h.imag.any()


def test_quantum_assembly_layout():
    vals = np.array([1, 2, 3, 4, 5, 6, 7, 8, 9.0])
    h = gm.construct_hamiltonian(vals, mode="quantum").data
    # lower-triangle entries enter as i*(7, 8, 9) at (1,0), (2,0), (2,1)
    assert h[1, 0] == 2 + 7j and h[0, 1] == 2 - 7j
    assert h[2, 1] == 5 + 9j
    np.testing.assert_array_equal(np.diag(h), [2, 8, 12])


def test_head_width_mismatch():
    with pytest.raises(ContractViolation):
        gm.construct_hamiltonian(np.zeros(5), mode="classical", n=3)
    with pytest.raises(ContractViolation):
        gm.GrayboxConfig(mode="other")


def test_classical_outputs_normalized(rng):
    m = small_model()
    m.eps_params.data[:] = rng.normal(size=3)
    y = gm.predict_outputs(rng.uniform(-5, 5, size=(2, 8, 6)), m)
    assert y.shape == (2, 8, 9)
    np.testing.assert_allclose(y.reshape(2, 8, 3, 3).sum(-1), 1.0, atol=1e-12)


def test_quantum_outputs_in_unit_interval(rng):
    m = small_model("quantum")
    y = gm.predict_outputs(rng.uniform(-5, 5, size=(2, 8, 6)), m)
    assert y.shape == (2, 8, 18)
    assert y.min() >= 0 and y.max() <= 1


def test_forward_bundle(rng):
    m = small_model()
    b = gm.forward(rng.uniform(-5, 5, size=(5, 6)), m)
    assert b.u.shape == (5, 3, 3) and b.ideal_outputs.shape == (5, 3, 3)
    assert unitarity_error(b.u) < 1e-10
    np.testing.assert_allclose(b.h_total - b.h_interaction, np.broadcast_to(m.h0(), (5, 3, 3)))


def test_composite_gradient():
    rng = np.random.default_rng(7)
    m = small_model(seed=3)
    m.h0_params.data[:] = rng.normal(size=6)
    m.eps_params.data[:] = rng.normal(scale=0.2, size=3)
    v = rng.uniform(-5, 5, size=(2, 4, 6))
    target = rng.uniform(size=(2, 4, 9))

    def loss_value():
        return float(ad.mse_loss(gm.forward_tensors(v, m)[3], target).data)

    ad.mse_loss(gm.forward_tensors(v, m)[3], target).backward()
    for p in m.parameters():
        num = np.zeros_like(p.data)
        for i in np.ndindex(p.shape):
            orig = p.data[i]
            p.data[i] = orig + STEP
            up = loss_value()
            p.data[i] = orig - STEP
            down = loss_value()
            p.data[i] = orig
            num[i] = (up - down) / (2 * STEP)
        err = np.linalg.norm(p.grad - num) / max(np.linalg.norm(num), 1e-12)
        assert err < 1e-4, (p.name, err)


def test_stage1_zero_iterations_keeps_parameters(params):
    m = small_model()
    before = m.digest()
    gm.train_stage1(m, zero_voltage_readings(params), iterations=0)
    assert m.digest() == before


def test_stage1_recovers_static_readings(params):
    m = small_model()
    gm.train_stage1(m, zero_voltage_readings(params), iterations=3000)
    assert m.history["stage1_mse"] < 1e-6
    np.testing.assert_allclose(m.eps_normalized(), np.array(params.eps) / max(params.eps), rtol=1e-2)
    assert not any(p.trainable for p in m.whitebox_parameters())


def test_stage2_requires_stage1():
    with pytest.raises(ContractViolation):
        gm.train_stage2(small_model(), np.zeros((1, 2, 6)), np.zeros((1, 2, 9)))


def test_stage2_freezes_whitebox_and_reduces_loss(params, rng):
    m = small_model()
    gm.train_stage1(m, zero_voltage_readings(params), iterations=200)
    h0, eps = m.h0_params.data.copy(), m.eps_params.data.copy()
    v = rng.uniform(-5, 5, size=(4, 10, 6))
    y, _ = chip.simulate_samples(v, 0.2, params)
    _, hist = gm.train_stage2(m, v, y, gm.TrainSettings(iterations=30, lr=1e-2, log_every=0))
    assert hist[-1] < hist[0]
    np.testing.assert_array_equal(m.h0_params.data, h0)
    np.testing.assert_array_equal(m.eps_params.data, eps)


def test_checkpoint_roundtrip(tmp_path, rng):
    m = small_model("quantum")
    m.stage1_done = True
    m.h0_params.data[:] = rng.normal(size=9)
    m.save(tmp_path / "m.pgbx")
    back = gm.ModelState.load(tmp_path / "m.pgbx")
    assert back.digest() == m.digest() and back.stage1_done and not back.stage2_done
    v = rng.normal(size=(3, 6))
    np.testing.assert_array_equal(gm.predict_outputs(v, back), gm.predict_outputs(v, m))


def test_freeze_all():
    m = small_model()
    m.freeze_all()
    assert not any(p.requires_grad for p in m.parameters())
    out = gm.forward_tensors(np.zeros((1, 2, 6)), m)[3]
    assert not out.requires_grad


def test_zero_head_starts_at_static_fit(rng):
    m = gm.ModelState.init(gm.GrayboxConfig(hidden=6, head_init="zero"))
    m.h0_params.data[:] = rng.normal(size=6)
    y = gm.predict_outputs(rng.uniform(-5, 5, size=(7, 6)), m)
    np.testing.assert_allclose(y, np.broadcast_to(gm.static_forward(m).data, y.shape), atol=1e-12)


def test_output_scale_multiplies_head(rng):
    a = gm.ModelState.init(gm.GrayboxConfig(hidden=4, seed=2))
    b = gm.ModelState.init(gm.GrayboxConfig(hidden=4, seed=2, output_scale=3.0))
    v = rng.uniform(-5, 5, size=(1, 5, 6))
    np.testing.assert_allclose(gm.blackbox(v, b).data, 3.0 * gm.blackbox(v, a).data)
