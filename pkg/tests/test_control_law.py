import numpy as np
import pytest

from mdncontrol import control_law as cl, mdn, nn_core
from mdncontrol.control_law import CostWeights
from mdncontrol.dual_models import ForwardModel


def random_fm(rng, lags=(1, 0), N=2, hidden=(6,)):
    fm = ForwardModel.create(lags, hidden, N, rng)
    fm.net.params[...] = rng.normal(scale=0.7, size=fm.net.params.size)
    return fm


def fd_phi(fm, z, u, yd, w, h=1e-5):
    """Finite-difference oracle: d(R Var + M Mean^2)/du of the error mixture."""
    w0 = CostWeights(w.R, w.M, 0.0)
    return (cl.cost_at(fm, z, yd, u + h, w0) - cl.cost_at(fm, z, yd, u - h, w0)) / (2 * h)


def test_cost_hand_case():
    p = mdn.mixture([0.5, 0.5], [1.0, -1.0], [0.1, 0.1])
    # mean 0, var 0.1 + 1
    assert cl.cost(p, 2.0, CostWeights(1.0, 3.0, 0.5)) == pytest.approx(1.1 + 0 + 2.0)
    with pytest.raises(ValueError):
        CostWeights(-1, 0, 0)


def test_phi_matches_finite_difference_oracle(rng):
    for _ in range(50):
        lags = (int(rng.integers(1, 3)), int(rng.integers(0, 2)))
        fm = random_fm(rng, lags, N=int(rng.integers(1, 4)))
        w = CostWeights(*rng.uniform(0.1, 1.0, size=3))
        z = rng.normal(size=sum(lags))
        u, yd = rng.normal(), rng.normal()
        assert abs(cl.phi(fm, z, u, yd, w) - fd_phi(fm, z, u, yd, w)) < 1e-4


def test_phi_zero_network_is_zero():
    fm = ForwardModel(nn_core.zero_network((2, 3, 6)), mdn.MdnHead(2), (1, 0))
    assert cl.phi(fm, [0.4], 0.3, 1.0, CostWeights(1, 1, 0)) == 0.0


def test_recursive_law_matches_quadratic_closed_form(rng):
    # phi(chi, u) = c . chi + q u  <=>  J quadratic; optimum u* = -(c . chi) / (2Q + q)
    for _ in range(50):
        d = int(rng.integers(1, 5))
        c, q, Q = rng.normal(size=d), rng.uniform(0.5, 2.0), rng.uniform(0.01, 1.0)
        phi_fn = lambda chi, u: float(c @ chi + q * u)
        opt = lambda chi: -(c @ chi) / (2 * Q + q)
        chi0, chi1 = rng.normal(size=d), rng.normal(size=d)
        step = cl.recursive_update(opt(chi0), chi0, chi1, phi_fn, Q)
        assert step.guard_ok
        assert abs(step.u - opt(chi1)) < 1e-8


def test_recursive_guard_holds_previous_u():
    phi_fn = lambda chi, u: float(chi.sum() - 0.02 * u)  # 2Q + dphi/du = 0
    step = cl.recursive_update(0.7, np.zeros(2), np.ones(2), phi_fn, 0.01)
    assert not step.guard_ok
    assert step.u == 0.7


def test_recursive_zero_delta_keeps_u(rng):
    fm = random_fm(rng)
    chi = np.array([0.2, 0.5])
    step = cl.recursive_u(0.3, chi, chi, fm, CostWeights(0.5, 1, 0.1))
    assert step.u == pytest.approx(0.3, abs=1e-15)


def test_direct_solve_quadratic():
    # forward model that is exactly a single Gaussian with mean = u: J = var + (u - yd)^2 + Q u^2
    W = np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    net = nn_core.Network((2, 3), np.concatenate((W.ravel(), [0.0, 0.0, np.log(0.3)])))
    fm = ForwardModel(net, mdn.MdnHead(1), (1, 0))
    w = CostWeights(1.0, 1.0, 0.25)
    u = cl.solve_u_direct(fm, [0.0], 1.0, w)
    assert u == pytest.approx(1.0 / 1.25, abs=1e-7)
    assert cl.phi(fm, [0.0], u, 1.0, w) + 2 * w.Q * u == pytest.approx(0, abs=1e-7)
    # bound active
    assert cl.solve_u_direct(fm, [0.0], 10.0, w, u_bounds=(-1, 2)) == pytest.approx(2.0)


def test_direct_solve_batch_matches_single(rng):
    fm = random_fm(rng)
    w = CostWeights(0.4, 1, 0.01)
    Z = rng.normal(size=(5, 1))
    yd = rng.normal(size=5)
    batch = cl.solve_u_direct_batch(fm, Z, yd, w)
    for i in range(5):
        single = cl.solve_u_direct(fm, Z[i], yd[i], w)
        assert cl.cost_at(fm, Z[i], yd[i], batch[i], w) == pytest.approx(
            cl.cost_at(fm, Z[i], yd[i], single, w), abs=1e-12)
        # no grid point is better
        grid = np.linspace(-5, 5, 401)
        assert cl.cost_at(fm, Z[i], yd[i], batch[i], w) <= cl.cost_at(fm, Z[i], yd[i], grid, w).min() + 1e-12


def test_grid_golden_multiple_problems():
    f = lambda U: (U - np.array([[0.3], [-2.2]])) ** 2
    np.testing.assert_allclose(cl.grid_golden_minimize(f, [-5, -5], [5, 5]), [0.3, -2.2], atol=1e-8)
    with pytest.raises(ValueError):
        cl.grid_golden_minimize(f, [1], [1])
