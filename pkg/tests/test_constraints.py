import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fiberent.constraints import (FeatureSet, LeftFaceError, NoRightInverseError, build_constraint_system,
                                  context_indicator, context_marginal_fixed, empty_features, find_feasible_point,
                                  local_feasible_continuation, marginal_pinning, mean_features, moment_right_inverse,
                                  r_block_features, symbol_indicator, tangent_space_basis)
from fiberent.core import SupportFace, block_law, is_stationary_consistent

from helpers import random_stationary_law


def test_row_counts():
    s = build_constraint_system(mean_features(0.5))
    assert s.row_kinds.count("normalization") == 1
    assert s.row_kinds.count("moment") == 1
    assert s.row_kinds.count("stationarity") == 2
    s = build_constraint_system(empty_features(2, 1))
    assert s.row_kinds == ("normalization", "stationarity", "stationarity")


def test_tangent_dimensions():
    assert tangent_space_basis(build_constraint_system(mean_features(0.5))).dimension == 1
    T = np.eye(4)
    pinned = FeatureSet(2, 1, T, [0.49, 0.21, 0.21, 0.09])
    assert tangent_space_basis(build_constraint_system(pinned)).dimension == 0
    face = SupportFace([True, True, True, False])
    s = build_constraint_system(empty_features(2, 1), face)
    rank = np.linalg.matrix_rank(s.matrix[:, face.mask])
    assert tangent_space_basis(s).dimension == 3 - rank == 1


@given(st.integers(2, 3), st.integers(1, 2), st.integers(0, 3), st.integers(0, 2 ** 32 - 1))
def test_tangent_basis_invariants(n, r, m, seed):
    rng = np.random.default_rng(seed)
    N = n ** (r + 1)
    tables = rng.normal(size=(m, N))
    u = random_stationary_law(rng, n, r)
    feats = FeatureSet(n, r, tables, tables @ u)
    mask = rng.random(N) < 0.8
    mask[0] = True
    s = build_constraint_system(feats, SupportFace(mask))
    B = tangent_space_basis(s)
    for h in B.vectors:
        assert abs(h.sum()) <= 1e-12
        assert np.all(np.abs(tables @ h) <= 1e-12)
        t = h.reshape(-1, n)
        left = h.reshape(n, -1).sum(axis=0)
        assert np.max(np.abs(t.sum(axis=1) - left)) <= 1e-12
        assert np.all(h[~mask] == 0)
    if B.dimension:
        assert np.linalg.matrix_rank(B.vectors) == B.dimension


def test_context_marginal_fixed_examples():
    ind0 = FeatureSet(2, 1, context_indicator(2, 1, 0)[None, :], [0.7])
    eta = context_marginal_fixed(build_constraint_system(ind0))
    assert np.allclose(eta.masses, [0.7, 0.3])
    s = build_constraint_system(mean_features(0.3))
    assert context_marginal_fixed(s) is None
    assert np.allclose(context_marginal_fixed(s, augmented=True).masses, [0.7, 0.3])
    pin = marginal_pinning(build_constraint_system(empty_features(2, 1)))
    assert pin.span_test is None and pin.augmented_test is None


def test_full_indicator_span_pins_marginal():
    mu = [0.1, 0.2, 0.3, 0.4]
    eta = context_marginal_fixed(build_constraint_system(r_block_features(mu, 2)))
    assert np.allclose(eta.masses, mu)


def test_feasible_point_examples():
    fp = find_feasible_point(build_constraint_system(mean_features(0.5)))
    assert fp.feasible
    q = fp.law.probs[1]
    assert 0 < q < 0.5
    contradictory = FeatureSet(2, 1, np.vstack([symbol_indicator(2, 1, 1)] * 2), [0.5, 0.7])
    fp = find_feasible_point(build_constraint_system(contradictory))
    assert fp.status == "infeasible" and fp.law is None and fp.residual > 1e-3
    fp = find_feasible_point(build_constraint_system(empty_features(3, 1)))
    assert np.allclose(fp.law.probs, 1 / 9)


@given(st.integers(2, 3), st.integers(1, 2), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_feasible_point_postconditions(n, r, m, seed):
    rng = np.random.default_rng(seed)
    N = n ** (r + 1)
    tables = rng.normal(size=(m, N))
    u = random_stationary_law(rng, n, r)
    s = build_constraint_system(FeatureSet(n, r, tables, tables @ u))
    fp = find_feasible_point(s)
    assert fp.feasible
    assert is_stationary_consistent(fp.law, 1e-10)[0]
    assert np.max(np.abs(tables @ fp.law.probs - tables @ u)) <= 1e-10


def test_boundary_only_feasible_set():
    # mean 1 forces all mass on 11
    fp = find_feasible_point(build_constraint_system(mean_features(1.0)))
    assert fp.feasible and np.allclose(fp.law.probs, [0, 0, 0, 1])


def test_continuation_examples():
    s = build_constraint_system(mean_features(0.5))
    u = block_law([0.25] * 4, 2, 1)
    assert np.array_equal(local_feasible_continuation(u, s, [0.5]).probs, u.probs)
    v = local_feasible_continuation(u, s, [0.51])
    assert abs(v.probs[1] + v.probs[3] - 0.51) <= 1e-12
    assert is_stationary_consistent(v, 1e-12)[0]


def test_continuation_lipschitz_bound():
    rng = np.random.default_rng(4)
    u = random_stationary_law(rng, 3, 1)
    tables = rng.normal(size=(2, 9))
    s = build_constraint_system(FeatureSet(3, 1, tables, tables @ u))
    R = moment_right_inverse(s)
    assert R.norm == pytest.approx(np.linalg.svd(R.operator, compute_uv=False)[0])
    law = block_law(u, 3, 1)
    for _ in range(50):
        db = rng.normal(size=2) * 1e-3
        v = local_feasible_continuation(law, s, tables @ u + db)
        assert np.max(np.abs(tables @ v.probs - (tables @ u + db))) <= 1e-10
        assert np.linalg.norm(v.probs - u) <= R.norm * np.linalg.norm(db) + 1e-15


def test_continuation_errors():
    s = build_constraint_system(mean_features(0.5))
    with pytest.raises(LeftFaceError, match="left face"):
        local_feasible_continuation(block_law([0.25] * 4, 2, 1), s, [0.9])
    dup = FeatureSet(2, 1, np.vstack([symbol_indicator(2, 1, 1)] * 2), [0.5, 0.5])
    with pytest.raises(NoRightInverseError, match="no right inverse"):
        local_feasible_continuation(block_law([0.25] * 4, 2, 1), build_constraint_system(dup), [0.5, 0.5])


def test_feature_json_round_trip_and_errors():
    f = mean_features(0.3)
    g = FeatureSet.from_json(f.to_json())
    assert np.array_equal(g.tables, f.tables) and g.names == ("mean",)
    bad = json.loads(f.to_json())
    del bad["targets"]
    with pytest.raises(ValueError, match="targets"):
        FeatureSet.from_dict(bad)
    bad = json.loads(f.to_json())
    bad["features"][0]["table"] = [0, 1]
    with pytest.raises(ValueError, match=r"features\[0\]\.table"):
        FeatureSet.from_dict(bad)


def test_constraint_report():
    s = build_constraint_system(mean_features(0.3))
    rep = s.report(block_law([0.49, 0.21, 0.21, 0.09], 2, 1))
    assert max(abs(x) for x in s.residuals([0.49, 0.21, 0.21, 0.09])) <= 1e-15
    assert isinstance(rep, dict)
