import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from idg.offline import (
    FULL, REDUCED, IdentificationError, SolutionSet, identify_fne, membership_residual,
    normalized_reduced_weights, select_parameters, solve_solution_set, split_basis,
)
from idg.selfcheck import hjb_system

# ground-truth (alpha, beta, theta_r-complement) rescaled so the reduced value weights are [0, 1]
GT_ETA = np.array([2.0, 2.0, 2.0, 0.0, 2.0, 0.5])
PARTICULAR = np.array([2.0, 2.0, 0.381, 0.810, 2.0, 0.095])
NULL_DIR = np.array([0.0, 0.0, 0.873, -0.436, 0.0, 0.218])


def test_basis_split(errorfree, errorfree_offline):
    for pl in errorfree_offline.players:
        assert pl.split.reduced == (1, 2)
        assert pl.split.vanishing == (0,)
        assert pl.split.evidence[0] == 0.0


def test_split_requires_visible_basis(errorfree):
    m = errorfree.model
    s = split_basis(m.players[0].phi[:1], m.dynamics.G[0], m.domain.grid())
    assert s.h_bar == 0


def test_strategy_weights(errorfree_offline):
    # theta_bar = reduced GT value weights divided by R_ii: [0, 1]/2 and [0, 0.5]/1
    for pl in errorfree_offline.players:
        assert pl.fne.rank == 2
        assert pl.fne.full_rank
        np.testing.assert_allclose(pl.fne.theta_bar, [0.0, 0.5], atol=1e-10)
        np.testing.assert_allclose(pl.fne.theta_r, [0.0, 1.0], atol=1e-10)
        assert pl.mode == REDUCED


def test_solution_set_matches_reference(errorfree_offline):
    for pl in errorfree_offline.players:
        s = pl.sset
        assert s.dim == 1
        assert not s.unique
        np.testing.assert_allclose(s.particular, PARTICULAR, atol=1e-3)
        np.testing.assert_allclose(s.null_basis[:, 0], NULL_DIR, atol=1e-3)


def test_ground_truth_lies_in_set(errorfree_offline):
    for pl in errorfree_offline.players:
        assert membership_residual(pl.sset, GT_ETA) <= 1e-8
        assert membership_residual(pl.sset, GT_ETA[:5]) <= 1e-8
        assert membership_residual(pl.sset, GT_ETA + [0, 0, 0, 0, 0.1, 0]) == pytest.approx(0.1, rel=1e-6)


def test_set_elements_solve_hjb(errorfree, errorfree_offline):
    rng = np.random.default_rng(1)
    for i, pl in enumerate(errorfree_offline.players):
        M, z = hjb_system(errorfree.model, errorfree_offline, i)
        for w in rng.uniform(-10, 10, 20):
            assert np.linalg.norm(M @ pl.sset.element([w]) - z) <= 1e-8 * max(1.0, np.linalg.norm(z))


def test_selection(errorfree, errorfree_offline):
    for pl in errorfree_offline.players:
        sel = pl.selection
        assert sel.valid
        assert sel.w == [0.0]
        np.testing.assert_allclose(sel.alpha, [2.0, 2.0], rtol=1e-9)
        assert sel.interval[0] == pytest.approx(-0.3, abs=0.011)
        assert sel.interval[1] == pytest.approx(10.0)


def test_explicit_w_recovers_ground_truth(errorfree, errorfree_offline):
    pl = errorfree_offline.players[0]
    w = float(pl.sset.null_basis[:, 0] @ (GT_ETA - pl.sset.particular))
    sel = select_parameters(pl.sset, errorfree.model, 0, errorfree.model.domain.grid(), [w])
    np.testing.assert_allclose(sel.beta, [2.0, 0.0, 2.0], atol=1e-8)
    assert sel.valid


def test_verified_nsae(errorfree_offline):
    nz = errorfree_offline.verification.nsae
    assert nz.dx <= 0.05
    assert nz.du <= 0.05
    assert errorfree_offline.verification.pi.converged
    assert errorfree_offline.ok


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.1, 5), min_size=4, max_size=4), st.floats(0.01, 100))
def test_normalized_weights_scale_invariant(tb, c):
    tb = np.array(tb)
    np.testing.assert_allclose(normalized_reduced_weights(c * tb, 2), normalized_reduced_weights(tb, 2), rtol=1e-12)


def test_normalized_weights_average_blocks():
    # blocks [3, 4] and [0, 2] normalize to [0.6, 0.8] and [0, 1]
    np.testing.assert_allclose(normalized_reduced_weights(np.array([3.0, 4.0, 0.0, 2.0]), 2), [0.3, 0.9])
    with pytest.raises(IdentificationError):
        normalized_reduced_weights(np.array([1.0, 0.0, 0.0]), 3)


def test_rank_deficient_identification():
    M = np.array([[1.0, 1.0], [2.0, 2.0], [0.5, 0.5]])
    res = identify_fne(M, M @ np.array([1.0, 0.0]), 1)
    assert res.rank == 1
    assert not res.full_rank
    assert res.theta_r is None
    np.testing.assert_allclose(res.theta_bar, [0.5, 0.5])  # minimum norm


def test_solution_set_roundtrip_and_errors():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((10, 4))
    M[:, 3] = M[:, 2]
    s = solve_solution_set(M, M @ np.ones(4), 2, FULL)
    t = SolutionSet.from_dict(s.to_dict())
    np.testing.assert_allclose(t.null_basis, s.null_basis)
    np.testing.assert_allclose(t.particular, s.particular)
    assert t.unique == s.unique is True
    with pytest.raises(ValueError):
        s.element([1.0, 2.0])
    with pytest.raises(ValueError):
        membership_residual(s, np.ones(3))
    with pytest.raises(IdentificationError):
        solve_solution_set(np.zeros((0, 3)), np.zeros(0), 2, FULL)


def test_value_approx_offline(repro_result):
    off = repro_result.runs["value_approx"].offline
    tb = [p.fne.theta_bar for p in off.players]
    assert [t.size for t in tb] == [1, 1]
    assert abs(tb[0][0] - 0.5) <= 0.02
    assert abs(tb[1][0] - 0.5) <= 1e-8


def test_cost_approx_offline(repro_result):
    off = repro_result.runs["cost_approx"].offline
    sel = off.players[0].selection
    np.testing.assert_allclose(sel.beta, [-3.568, -5.509, 3.301], atol=2e-3)
    np.testing.assert_allclose(sel.alpha, [1.415, 3.592], atol=2e-3)
    assert not sel.valid
    assert not off.ok
