import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hyprec import geometry as geo
from hyprec import losses
from hyprec.errors import ConfigError, DomainError

from conftest import central_difference, random_points, rel_error

MODES = [("hyperboloid", "neg_inner"), ("hyperboloid", "neg_distance"),
         ("euclidean", "neg_inner"), ("euclidean", "neg_distance")]


def sample(rng, geometry, count, dim, radius=1.5):
    if geometry == "hyperboloid":
        return random_points(rng, count, dim, radius)
    return rng.uniform(-1, 1, size=(count, dim))


# -- scores ------------------------------------------------------------------------

def test_score_examples(rng):
    x = random_points(rng, 5, 3)
    np.testing.assert_array_equal(losses.score(x, x, "neg_distance"), 0.0)
    np.testing.assert_allclose(losses.score(x, x, "neg_inner"), -1.0, atol=1e-12)
    with pytest.raises(ConfigError):
        losses.score(x, x, "cosine")


def test_score_modes_rank_identically(rng):
    for _ in range(20):
        u = random_points(rng, 1, 4)[0]
        items = random_points(rng, 100, 4)
        a = np.lexsort((np.arange(100), -losses.score(u, items, "neg_inner")))
        b = np.lexsort((np.arange(100), -losses.score(u, items, "neg_distance")))
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("geometry,mode", MODES)
def test_score_gradients_finite_differences(rng, geometry, mode):
    for _ in range(100):
        u, v = sample(rng, geometry, 2, 3)
        gu, gv = losses.score_gradients(u, v, mode, geometry)
        fu = central_difference(lambda z: losses.score(z, v, mode, geometry), u.copy())
        fv = central_difference(lambda z: losses.score(u, z, mode, geometry), v.copy())
        assert rel_error(gu, fu) < 1e-4
        assert rel_error(gv, fv) < 1e-4


# -- BPR ----------------------------------------------------------------------------

def test_bpr_loss_examples():
    assert losses.bpr_loss(0.3, 0.3) == np.log(2.0)
    assert losses.bpr_loss(2.0, 0.0) == pytest.approx(0.12693, abs=1e-5)
    assert losses.bpr_loss(1e6, 0.0, lam=0.5, reg_term=3.0) == pytest.approx(1.5)
    assert np.isfinite(losses.bpr_loss(-1e6, 0.0))


@pytest.mark.parametrize("geometry,mode", MODES)
def test_bpr_gradients_finite_differences(rng, geometry, mode):
    for _ in range(100):
        u, vp, vn = sample(rng, geometry, 3, 3)
        loss, gu, gp, gn = losses.bpr_gradients(u, vp, vn, mode, geometry)

        def f(a, b, c):
            return losses.bpr_loss(losses.score(a, b, mode, geometry),
                                   losses.score(a, c, mode, geometry))

        assert loss == pytest.approx(f(u, vp, vn))
        assert rel_error(gu, central_difference(lambda z: f(z, vp, vn), u.copy())) < 1e-4
        assert rel_error(gp, central_difference(lambda z: f(u, z, vn), vp.copy())) < 1e-4
        assert rel_error(gn, central_difference(lambda z: f(u, vp, z), vn.copy())) < 1e-4


# -- WMRB ---------------------------------------------------------------------------

def test_wmrb_rank_examples():
    assert losses.wmrb_rank(0.0, [2.0, 3.0]) == 0.0
    assert losses.wmrb_rank(2.0, [1.0, 4.0], slack=1.0) == 2.0
    assert losses.wmrb_loss(2.0, [1.0, 4.0]) == pytest.approx(1.09861, abs=1e-5)
    with pytest.raises(DomainError):
        losses.wmrb_rank(0.0, [1.0], slack=0.0)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=20), st.floats(0, 10), st.randoms())
def test_wmrb_rank_permutation_and_duplication(d_negs, d_pos, rnd):
    r = losses.wmrb_rank(d_pos, d_negs)
    shuffled = list(d_negs)
    rnd.shuffle(shuffled)
    assert losses.wmrb_rank(d_pos, shuffled) == pytest.approx(r)
    assert losses.wmrb_rank(d_pos, d_negs + d_negs) == pytest.approx(2 * r)


def test_wmrb_gradients_inactive_are_zero(rng):
    u = geo.origin(3)[None]
    far = geo.lift_spatial(5.0 + rng.uniform(0, 1, size=(4, 3)))
    loss, gu, gp, gn = losses.wmrb_gradients_arrays(u, u, far[None], 1.0, "neg_distance")
    assert loss[0] == 0.0
    assert not gu.any() and not gp.any() and not gn.any()


def test_wmrb_single_active_negative_scale_factors(rng):
    # one active negative: positive gradient is -1/(1+r) ds/dv, negative +1/(1+r) ds/dv
    u = geo.origin(2)
    vp = geo.exp_map(u, [0, 0.5, 0])
    vn = np.stack([geo.exp_map(u, [0, 0, 0.8]), geo.exp_map(u, [0, 0, 5.0])])
    loss, gu, gp, gn = losses.wmrb_gradients_arrays(u[None], vp[None], vn[None], 1.0,
                                                    "neg_distance")
    r = np.expm1(loss[0])
    assert r == pytest.approx(1.0 + 0.5 - 0.8)
    _, sp = losses.score_gradients(u, vp, "neg_distance")
    _, sn = losses.score_gradients(u, vn[0], "neg_distance")
    np.testing.assert_allclose(gp[0], -sp / (1 + r))
    np.testing.assert_allclose(gn[0, 0], sn / (1 + r))
    assert not gn[0, 1].any()


def _wmrb_configs(rng, geometry, mode, count, n_neg, dim=4):
    """Random batches whose margins stay away from the ReLU kinks."""
    out = []
    while len(out) < count:
        u, vp = sample(rng, geometry, 2, dim)
        vn = sample(rng, geometry, n_neg, dim)
        dis_p = -losses.score(u, vp, mode, geometry)
        dis_n = -losses.score(u, vn, mode, geometry)
        if np.min(np.abs(1.0 + dis_p - dis_n)) > 1e-3:
            out.append((u, vp, vn))
    return out


@pytest.mark.parametrize("geometry,mode", MODES)
def test_wmrb_gradients_finite_differences(rng, geometry, mode):
    def f(a, b, c):
        return losses.wmrb_loss(-losses.score(a, b, mode, geometry),
                                -losses.score(a, c, mode, geometry))

    for u, vp, vn in _wmrb_configs(rng, geometry, mode, 100, 5):
        loss, gu, gp, gn = losses.wmrb_gradients_arrays(u[None], vp[None], vn[None], 1.0,
                                                        mode, geometry)
        assert loss[0] == pytest.approx(f(u, vp, vn))
        assert rel_error(gu[0], central_difference(lambda z: f(z, vp, vn), u.copy())) < 1e-4
        assert rel_error(gp[0], central_difference(lambda z: f(u, z, vn), vp.copy())) < 1e-4
        assert rel_error(gn[0], central_difference(lambda z: f(u, vp, z), vn.copy())) < 1e-4


def test_wmrb_batched_matches_rowwise(rng):
    u = random_points(rng, 6, 3)
    vp = random_points(rng, 6, 3)
    vn = random_points(rng, 6 * 4, 3).reshape(6, 4, 4)
    full = losses.wmrb_gradients_arrays(u, vp, vn, 1.0, "neg_distance")
    for b in range(6):
        row = losses.wmrb_gradients_arrays(u[b:b + 1], vp[b:b + 1], vn[b:b + 1], 1.0,
                                           "neg_distance")
        for a, r in zip(full, row):
            np.testing.assert_allclose(a[b], r[0])


# -- regularisation -------------------------------------------------------------------

@pytest.mark.parametrize("geometry", ["hyperboloid", "euclidean"])
def test_origin_penalty_gradient(rng, geometry):
    for x in sample(rng, geometry, 50, 3):
        fd = central_difference(lambda z: losses.origin_penalty(z, geometry), x.copy())
        assert rel_error(losses.origin_penalty_gradient(x, geometry), fd) < 1e-4
    # the ratio arccosh(x0)/sqrt(x0^2-1) is continuous at the origin
    g = losses.origin_penalty_gradient(geo.origin(3))
    np.testing.assert_allclose(g, [2.0, 0, 0, 0])
    assert losses.origin_penalty(geo.origin(3)) == 0.0


# -- midpoint backpropagation -------------------------------------------------------------

def test_midpoint_jacobian_single_origin_point():
    k = np.zeros((1, 3))
    np.testing.assert_allclose(losses.midpoint_jacobian(k, 0), np.eye(3))
    a = np.array([0.3, -0.2, 0.5])
    np.testing.assert_allclose(losses.midpoint_jacobian_apply(a, k, 0), a)


def test_midpoint_jacobian_two_equal_points(rng):
    k1 = geo.hyperboloid_to_klein(random_points(rng, 1, 3))
    single = losses.midpoint_jacobian(k1, 0)
    both = np.concatenate([k1, k1])
    np.testing.assert_allclose(losses.midpoint_jacobian(both, 0), single / 2, atol=1e-14)
    np.testing.assert_allclose(losses.midpoint_jacobian(both, 1), single / 2, atol=1e-14)


def test_midpoint_jacobian_finite_differences(rng):
    for _ in range(100):
        k = geo.hyperboloid_to_klein(random_points(rng, 5, 10, max_radius=2.0))
        w = rng.uniform(0.5, 2.0, size=5)
        j = int(rng.integers(5))
        a = rng.standard_normal(10)

        def f(kj):
            kk = k.copy()
            kk[j] = kj
            return a @ geo.einstein_midpoint(kk, w)

        fd = central_difference(f, k[j].copy())
        assert rel_error(losses.midpoint_jacobian_apply(a, k, j, w), fd) < 1e-4
        assert rel_error(a @ losses.midpoint_jacobian(k, j, w), fd) < 1e-4


def test_lift_and_projection_vjps(rng):
    for _ in range(50):
        k = geo.hyperboloid_to_klein(random_points(rng, 1, 4))[0]
        a = rng.standard_normal(5)
        fd = central_difference(lambda z: a @ geo.klein_to_hyperboloid(z), k.copy())
        assert rel_error(losses.lift_vjp(a, k), fd) < 1e-4
        x = random_points(rng, 1, 4)[0]
        b = rng.standard_normal(4)
        fd = central_difference(lambda z: b @ geo.hyperboloid_to_klein(z), x.copy())
        assert rel_error(losses.klein_projection_vjp(b, x), fd) < 1e-4


@pytest.mark.parametrize("geometry,mode", MODES)
def test_asymmetric_wmrb_propagates_through_aggregate(rng, geometry, mode):
    """Loss as a function of every item point, including those aggregated into the user."""
    n_items, dim = 12, 4
    done = 0
    while done < 100:
        items = sample(rng, geometry, n_items, dim)
        perm = rng.permutation(n_items)
        hist, pos, negs = tuple(perm[:4]), int(perm[4]), tuple(perm[5:10])
        batch = losses.WmrbBatch(0, pos, negs, 1.0, hist)

        def f(table):
            cls = (losses.MidpointAggregate if geometry == "hyperboloid"
                   else losses.MeanAggregate)
            u = cls(table[list(hist)], np.zeros(len(hist), dtype=int), 1).users[0]
            return losses.wmrb_loss(-losses.score(u, table[pos], mode, geometry),
                                    -losses.score(u, table[list(negs)], mode, geometry))

        cls = losses.MidpointAggregate if geometry == "hyperboloid" else losses.MeanAggregate
        u = cls(items[list(hist)], np.zeros(4, dtype=int), 1).users[0]
        margins = (1.0 - losses.score(u, items[pos], mode, geometry)
                   + losses.score(u, items[list(negs)], mode, geometry))
        if np.min(np.abs(margins)) < 1e-3:
            continue
        res = losses.wmrb_gradients(batch, items, user_repr_mode="asymmetric", mode=mode,
                                    geometry=geometry)
        analytic = np.zeros_like(items)
        analytic[pos] += res.wrt_positive
        for n, g in zip(negs, res.wrt_negatives):
            analytic[n] += g
        for i, g in res.wrt_user_items.items():
            analytic[i] += g
        assert set(res.wrt_user_items) <= set(hist)
        assert res.loss == pytest.approx(f(items))
        assert rel_error(analytic, central_difference(f, items.copy())) < 1e-4
        done += 1


def test_midpoint_aggregate_batched_backward(rng):
    items = random_points(rng, 9, 3)
    seg = np.array([0, 0, 1, 1, 1, 2, 0, 2, 1])
    agg = losses.MidpointAggregate(items, seg, 3)
    up = rng.standard_normal((3, 4))
    g = agg.backward(up)
    for s in range(3):
        single = losses.MidpointAggregate(items[seg == s], np.zeros((seg == s).sum(), int), 1)
        np.testing.assert_allclose(g[seg == s], single.backward(up[s:s + 1]), atol=1e-12)


def test_single_item_history_reproduces_item(rng):
    items = random_points(rng, 3, 3)
    agg = losses.MidpointAggregate(items[[1]], np.zeros(1, int), 1)
    np.testing.assert_allclose(agg.users[0], items[1], atol=1e-12)


def test_symmetric_wmrb_gradients_single_example(rng):
    items = random_points(rng, 6, 3)
    users = random_points(rng, 2, 3)
    batch = losses.WmrbBatch(1, 0, (2, 3, 4))
    res = losses.wmrb_gradients(batch, items, users, mode="neg_distance")
    ref = losses.wmrb_gradients_arrays(users[[1]], items[[0]], items[[2, 3, 4]][None], 1.0,
                                       "neg_distance")
    assert res.loss == pytest.approx(ref[0][0])
    np.testing.assert_allclose(res.wrt_user_items[1], ref[1][0])
    assert list(res.wrt_user_items) == [1]


def test_batch_validation():
    with pytest.raises(DomainError):
        losses.WmrbBatch(0, 1, ())
    with pytest.raises(DomainError):
        losses.Triplet(0, 1, 1)
    with pytest.raises(ConfigError):
        losses.wmrb_gradients(losses.WmrbBatch(0, 1, (2,)), np.zeros((3, 3)))
