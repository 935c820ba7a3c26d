import numpy as np
import pytest

from mdncontrol import dual_models as dm, mdn, nn_core
from mdncontrol.dual_models import ForwardModel, InverseController, StateVector


def test_state_vector_from_history():
    z = StateVector.from_history([1.0, 2.0, 3.0], [0.5, 0.7], 2, 1)
    np.testing.assert_array_equal(z.vector(), [3.0, 2.0, 0.7])
    assert z.lags == (2, 1)
    short = StateVector.from_history([4.0], [], 3, 2)
    np.testing.assert_array_equal(short.vector(), [4.0, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        StateVector([np.nan], [])


def test_shapes_enforced(rng):
    fm = ForwardModel.create((2, 1), (5,), 3, rng)
    assert fm.net.layer_sizes == (4, 5, 9)
    ic = InverseController.create((2, 1), (5,), 3, rng)
    assert ic.net.layer_sizes == (4, 5, 6)
    with pytest.raises(ValueError):
        InverseController(nn_core.zero_network((4, 9)), 3, (2, 1))
    with pytest.raises(ValueError):
        ForwardModel(nn_core.zero_network((3, 9)), mdn.MdnHead(3), (2, 1))


def test_zero_forward_net_gives_uniform_unit_mixture():
    fm = ForwardModel(nn_core.zero_network((2, 4, 6)), mdn.MdnHead(2), (1, 0))
    p = dm.output_pdf(fm, [0.3], 1.0)
    np.testing.assert_allclose(p.alpha, [0.5, 0.5])
    np.testing.assert_allclose(p.mu, [0, 0])
    np.testing.assert_allclose(p.var, [1, 1])


def test_error_pdf_shifts_means(rng):
    p = mdn.mixture([0.2, 0.8], [1.0, 3.0], [0.1, 0.2])
    e = dm.error_pdf(p, 1.5)
    np.testing.assert_allclose(e.mu, [-0.5, 1.5])
    assert e.var is p.var and e.alpha is p.alpha
    assert mdn.density(e, 0.25) == pytest.approx(mdn.density(p, 1.75))


def test_control_pdf_uses_injected_priors(rng):
    ic = InverseController.create((1, 0), (4,), 2, rng)
    p = dm.control_pdf(ic, [0.1], 0.4, [0.9, 0.1])
    np.testing.assert_array_equal(p.alpha, [0.9, 0.1])
    with pytest.raises(ValueError):
        dm.control_pdf(ic, [0.1], 0.4, [0.9, 0.2])


def test_train_forward_reduces_nll(rng):
    fm = ForwardModel.create((1, 0), (8,), 2, rng)
    z = rng.uniform(-1, 1, size=(200, 1))
    u = rng.uniform(-1, 1, size=200)
    y = 0.5 * z[:, 0] + u + 0.05 * rng.normal(size=200)
    before = dm.forward_nll(fm, z, u, y)
    after = dm.train_forward(fm, z, u, y, iters=50)
    assert after < before
    assert after == pytest.approx(dm.forward_nll(fm, z, u, y), rel=1e-10)


def test_train_controller_keeps_priors_and_learns(rng):
    ic = InverseController.create((1, 0), (6,), 2, rng)
    z = rng.uniform(-1, 1, size=(150, 1))
    yd = rng.uniform(-1, 1, size=150)
    u = 2 * yd - z[:, 0]
    pri = np.tile([0.7, 0.3], (150, 1))
    first = dm.train_controller(ic, z, yd, u, pri, iters=1)
    last = dm.train_controller(ic, z, yd, u, pri, iters=80)
    assert last < first
    p = dm.control_pdf(ic, z[0], yd[0], pri[0])
    np.testing.assert_array_equal(p.alpha, pri[0])


def test_single_sample_training_step(rng):
    fm = ForwardModel.create((1, 0), (4,), 2, rng)
    before = dm.forward_nll(fm, [0.2], 0.1, 0.3)
    after = dm.train_forward(fm, [0.2], 0.1, 0.3)
    assert after <= before
