import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from idg.expr import ExprMatrix, parse
from idg.game import Dynamics
from idg.selfcheck import rk4_order_ratio
from idg.sim import (
    NSAE, SimulationDivergence, Trajectory, integrate_closed_loop, integrate_open_loop, nsae, sample,
)

SCALAR = Dynamics(ExprMatrix.parse([["0"]]), (ExprMatrix.parse([["1"]]),))


@pytest.mark.parametrize("k", [0.5, 1.0, 3.0])
def test_scalar_linear_closed_form(k):
    # xdot = -k x  =>  x(t) = x0 exp(-k t); RK4 local error O(h^5)
    tr = integrate_closed_loop(SCALAR, [ExprMatrix.parse([[f"{-k}*x1"]])], [[2.0]], 1.0, 1e-3)
    np.testing.assert_allclose(tr.x[:, 0], 2.0 * np.exp(-k * tr.t), rtol=1e-10)
    np.testing.assert_allclose(tr.u[:, 0], -k * tr.x[:, 0], rtol=1e-14)


def test_rk4_order(errorfree):
    assert 12.0 <= rk4_order_ratio(errorfree.model, (3.0, 1.0)) <= 20.0


def test_segments_and_csv_roundtrip(errorfree_gt):
    tr = errorfree_gt
    assert tr.x.shape == (16000, 2)
    assert tr.n_segments == 8
    np.testing.assert_array_equal(tr.x[tr.segment_slice(3)][0], [-1.0, 3.0])
    back = Trajectory.from_csv(tr.to_csv())
    np.testing.assert_array_equal(back.x, tr.x)
    np.testing.assert_array_equal(back.u, tr.u)
    np.testing.assert_array_equal(back.segment, tr.segment)
    assert math.isclose(back.h, tr.h)


def test_csv_header(errorfree_gt):
    assert errorfree_gt.to_csv().splitlines()[0] == "t,x1,x2,u1,u2,segment"


def test_open_loop_replay_matches(errorfree, errorfree_gt):
    x = integrate_open_loop(errorfree.model.dynamics, errorfree_gt)
    assert np.max(np.abs(x - errorfree_gt.x)) < 1e-4


def test_divergence_raises():
    dyn = Dynamics(ExprMatrix.parse([["x1^2"]]), (ExprMatrix.parse([["1"]]),))
    with pytest.raises(SimulationDivergence):
        integrate_closed_loop(dyn, [ExprMatrix.parse([["0"]])], [[10.0]], 2.0, 0.01)


@pytest.mark.parametrize("T, h", [(1.0, 0.3), (1.0, 0.0)])
def test_step_errors(T, h):
    with pytest.raises(ValueError):
        integrate_closed_loop(SCALAR, [ExprMatrix.parse([["-x1"]])], [[1.0]], T, h)


def test_sample_stride(errorfree_gt):
    d = sample(errorfree_gt, 0.01)
    assert d.D == 8
    assert d.K == 200
    np.testing.assert_array_equal(d.x[0][1], errorfree_gt.x[10])


def _traj(x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return Trajectory(0.0, 0.1, x, u, np.zeros(len(x), dtype=int))


def test_nsae_hand_computed():
    ref = _traj([[1.0, 0.0], [-2.0, 0.0]], [[4.0], [2.0]])
    est = _traj([[1.5, 1.0], [-1.0, 0.0]], [[3.0], [2.0]])
    # x1: (0.5 + 1)/2, x2: ref all zero so scale 1 and flagged, u1: 1/4
    assert nsae(ref, est) == NSAE(0.75 + 1.0, 0.25, ("x2",))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.floats(0.1, 100), st.integers(0, 1000))
def test_nsae_scale_invariant_and_zero_on_self(K, c, seed):
    rng = np.random.default_rng(seed)
    a = _traj(rng.standard_normal((K, 2)), rng.standard_normal((K, 1)))
    b = _traj(rng.standard_normal((K, 2)), rng.standard_normal((K, 1)))
    assert nsae(a, a).dx == 0.0
    ca = _traj(c * a.x, c * a.u)
    cb = _traj(c * b.x, c * b.u)
    assert nsae(ca, cb).dx == pytest.approx(nsae(a, b).dx, rel=1e-10)


def test_nsae_grid_mismatch():
    a = _traj([[1.0]], [[1.0]])
    with pytest.raises(ValueError):
        nsae(a, _traj([[1.0], [2.0]], [[1.0], [1.0]]))
