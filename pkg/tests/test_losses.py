"""Loss-term tests against brute-force reference implementations."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigidda.errors import ValidationError
from rigidda.losses import (
    LossWeights,
    ProbabilityVolume,
    bce,
    ce,
    cycle_loss,
    focus_exact,
    focus_smooth,
    focus_smooth_upstream,
    in_plane_weight,
    masked_mse,
    sdl,
    seg_loss,
    soft_dice,
)
from rigidda.resampler import transform_volume
from rigidda.rigid import RigidParams, euler_to_affine
from rigidda.volume import GridGeometry, Volume
from conftest import smooth_field

EPS = 1e-7


def brute_bce(q, g):
    total = 0.0
    for qi, gi in zip(np.ravel(q), np.ravel(g)):
        qi = min(max(qi, EPS), 1.0 - EPS)
        total += -(gi * math.log(qi) + (1.0 - gi) * math.log(1.0 - qi))
    return total / np.size(q)


def brute_soft_dice(q, g, smooth=1.0):
    num = 0.0
    sq = 0.0
    sg = 0.0
    for qi, gi in zip(np.ravel(q), np.ravel(g)):
        num += qi * gi
        sq += qi
        sg += gi
    return (2.0 * num + smooth) / (sq + sg + smooth)


def brute_focus_exact(fg, r):
    count = 0
    for v in np.ravel(fg):
        if v > r:
            count += 1
    return 1.0 - count / np.size(fg)


def random_prob_pair(rng, shape=(3, 4, 2)):
    q = rng.uniform(0, 1, size=(3, *shape))
    g = (rng.uniform(0, 1, size=(3, *shape)) > 0.5).astype(float)
    return q, g


class TestSegmentationLosses:
    @pytest.mark.parametrize("seed", range(10))
    def test_bce_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        q, g = random_prob_pair(rng)
        assert abs(bce(q[0], g[0]) - brute_bce(q[0], g[0])) < 1e-10

    def test_bce_clips_extreme_probabilities(self):
        g = np.array([1.0, 0.0])
        q = np.array([0.0, 1.0])
        val = bce(q, g)
        assert np.isfinite(val)
        assert abs(val - (-math.log(EPS))) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_ce_is_mean_over_classes(self, seed):
        rng = np.random.default_rng(seed)
        q, g = random_prob_pair(rng)
        expected = np.mean([brute_bce(q[c], g[c]) for c in range(3)])
        assert abs(ce(q, g) - expected) < 1e-10

    @pytest.mark.parametrize("seed", range(10))
    def test_soft_dice_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        q, g = random_prob_pair(rng)
        assert abs(soft_dice(q[0], g[0]) - brute_soft_dice(q[0], g[0])) < 1e-10

    def test_soft_dice_both_empty_is_one(self):
        z = np.zeros((4, 4, 4))
        assert soft_dice(z, z) == 1.0
        assert sdl(np.zeros((3, 4, 4, 4)), np.zeros((3, 4, 4, 4))) == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_seg_loss_composition(self, seed):
        rng = np.random.default_rng(seed)
        q, g = random_prob_pair(rng)
        expected = 0.5 * ce(q, g) + sdl(q, g)
        assert abs(seg_loss(q, g) - expected) < 1e-12

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            bce(np.zeros((2, 2)), np.zeros((3, 3)))


class TestInPlaneWeight:
    def test_separable_product_form(self):
        g = GridGeometry.isotropic((9, 7, 5), 1.0)
        w = in_plane_weight(g)
        nx, ny, _ = g.normalized_grid()
        np.testing.assert_allclose(w, (1.0 - np.abs(nx)) * (1.0 - np.abs(ny)), atol=1e-15)

    def test_center_one_borders_zero_constant_in_z(self):
        g = GridGeometry.isotropic((9, 9, 4), 1.0)
        w = in_plane_weight(g)
        assert w[4, 4, 0] == 1.0
        assert np.all(w[0, :, :] == 0.0)
        assert np.all(w[:, -1, :] == 0.0)
        np.testing.assert_array_equal(w[:, :, 0], w[:, :, -1])


class TestMaskedMse:
    def test_matches_brute_force(self, rng):
        g = GridGeometry.isotropic((6, 6, 6), 1.0)
        a = Volume(g, rng.normal(size=g.shape))
        b_vol = Volume(g, rng.normal(size=g.shape))
        m = np.eye(4)
        m[:3, 3] = [0.4, 0.0, 0.0]
        b = transform_volume(b_vol, m, g)
        w = rng.uniform(0, 1, size=g.shape)
        total = 0.0
        for idx in np.ndindex(g.shape):
            d = (a.data[idx] - b.image.data[idx]) * b.validity[idx] * w[idx]
            total += d * d
        assert abs(masked_mse(a, b, w) - 0.5 * total / a.data.size) < 1e-12

    def test_mask_comes_from_second_operand(self, rng):
        g = GridGeometry.isotropic((8, 8, 8), 1.0)
        a = Volume(g, rng.normal(size=g.shape))
        b_vol = Volume(g, rng.normal(size=g.shape))
        m = np.eye(4)
        m[:3, 3] = [5.0, 0.0, 0.0]  # everything out of bounds
        b = transform_volume(b_vol, m, g)
        assert masked_mse(a, b) == 0.0

    def test_grid_mismatch_rejected(self, rng):
        g1 = GridGeometry.isotropic((6, 6, 6), 1.0)
        g2 = GridGeometry.isotropic((5, 5, 5), 1.0)
        a = Volume(g1, rng.normal(size=g1.shape))
        b = transform_volume(Volume(g2, rng.normal(size=g2.shape)), np.eye(4), g2)
        with pytest.raises(ValidationError):
            masked_mse(a, b)


class TestCycleLoss:
    def test_zero_at_ground_truth(self):
        g = GridGeometry.isotropic((16, 16, 16), 1.0)
        vol_i = smooth_field(g, seed=1)
        vol_j = smooth_field(g, seed=2)
        mats = euler_to_affine(RigidParams(0.2, -0.1, 0.15, t=(0.05, 0.0, -0.08)))
        fwd, bwd = cycle_loss(vol_i, vol_j, mats.m, mats.m_inv, mats.m, mats.m_inv, g)
        assert fwd == 0.0
        assert bwd == 0.0

    def test_positive_away_from_ground_truth(self):
        g = GridGeometry.isotropic((16, 16, 16), 1.0)
        vol_i = smooth_field(g, seed=1)
        vol_j = smooth_field(g, seed=2)
        gt = euler_to_affine(RigidParams(0.2, -0.1, 0.15, t=(0.05, 0.0, -0.08)))
        off = euler_to_affine(RigidParams(0.0, 0.0, 0.0))
        fwd, bwd = cycle_loss(vol_i, vol_j, off.m, off.m_inv, gt.m, gt.m_inv, g)
        assert fwd > 0.0
        assert bwd > 0.0


class TestFocus:
    def _prob(self, rng, shape=(5, 4, 3)):
        raw = rng.uniform(0.01, 1.0, size=(4, *shape))
        q = raw / raw.sum(axis=0, keepdims=True)
        return ProbabilityVolume(GridGeometry.isotropic(shape, 1.0), q)

    @pytest.mark.parametrize("seed", range(10))
    def test_exact_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        q = self._prob(rng)
        for r in (0.1, 0.3, 0.9):
            assert abs(focus_exact(q, r) - brute_focus_exact(q.foreground(), r)) < 1e-12

    def test_exact_counts_foreground_only(self):
        shape = (3, 3, 3)
        q = np.zeros((4, *shape))
        q[0] = 1.0  # all background, confidently
        pv = ProbabilityVolume(GridGeometry.isotropic(shape, 1.0), q)
        assert focus_exact(pv, 0.9) == 1.0

    def test_smooth_converges_to_exact(self, rng):
        q = self._prob(rng)
        r = 0.35
        exact = focus_exact(q, r)
        for tau, tol in ((0.01, 0.05), (0.001, 0.005)):
            assert abs(focus_smooth(q, r, tau) - exact) < tol

    def test_smooth_upstream_matches_finite_differences(self, rng):
        shape = (4, 3, 2)
        g = GridGeometry.isotropic(shape, 1.0)
        raw = rng.uniform(0.05, 1.0, size=(4, *shape))
        qdata = raw / raw.sum(axis=0, keepdims=True)
        r, tau = 0.3, 0.05
        upstream = focus_smooth_upstream(ProbabilityVolume(g, qdata), r, tau)
        h = 1e-7
        for c in range(1, 4):
            for idx in [(0, 0, 0), (2, 1, 1), (3, 2, 0)]:
                up = qdata.copy()
                dn = qdata.copy()
                up[(c, *idx)] += h
                dn[(c, *idx)] -= h

                def smooth_of(arr):
                    fg = arr[1:].reshape(3, -1)
                    from rigidda.losses import _sigmoid

                    return 1.0 - float(np.mean(_sigmoid((fg - r) / tau)))

                fd = (smooth_of(up) - smooth_of(dn)) / (2 * h)
                assert abs(upstream[(c, *idx)] - fd) < 1e-6
        assert np.abs(upstream[0]).max() == 0.0


class TestProbabilityVolume:
    def test_rejects_bad_sum(self):
        g = GridGeometry.isotropic((2, 2, 2), 1.0)
        q = np.full((4, 2, 2, 2), 0.3)
        with pytest.raises(ValidationError):
            ProbabilityVolume(g, q)

    def test_rejects_out_of_range(self):
        g = GridGeometry.isotropic((2, 2, 2), 1.0)
        q = np.zeros((4, 2, 2, 2))
        q[0] = 1.5
        q[1] = -0.5
        with pytest.raises(ValidationError):
            ProbabilityVolume(g, q)

    def test_foreground_view_shape(self, rng):
        g = GridGeometry.isotropic((3, 3, 3), 1.0)
        raw = rng.uniform(0.1, 1.0, size=(4, 3, 3, 3))
        pv = ProbabilityVolume(g, raw / raw.sum(axis=0, keepdims=True))
        assert pv.foreground().shape == (3, 27)


class TestLossWeights:
    def test_defaults_valid(self):
        w = LossWeights()
        assert w.alpha1 == 1.0 and w.alpha2 == 0.1 and w.r == 0.9

    @given(
        a1=st.floats(0.01, 10.0),
        a2=st.floats(0.0, 10.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_stability_ordering_enforced(self, a1, a2):
        if a1 > a2:
            LossWeights(alpha1=a1, alpha2=a2)
        else:
            with pytest.raises(ValidationError):
                LossWeights(alpha1=a1, alpha2=a2)

    def test_bad_threshold_rejected(self):
        with pytest.raises(ValidationError):
            LossWeights(r=1.5)
        with pytest.raises(ValidationError):
            LossWeights(tau=0.0)
