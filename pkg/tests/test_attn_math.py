"""Attention-map math: normalization, TV losses, multi-resolution averaging,
and the diffusion forward process."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aerolabel.attn_math import (AttentionStack, NoiseSchedule,
                                 average_resolutions, bg_loss, forward_noise,
                                 ldm_loss, minmax_normalize, obj_loss,
                                 reg_loss, to_distribution, tv_distance)
from aerolabel.core_io import Raster
from conftest import raster1

# weights are either exactly zero or large enough to survive float32
distributions = st.lists(
    st.floats(0.0, 10.0).map(lambda x: 0.0 if x < 1e-3 else x),
    min_size=2, max_size=16).filter(lambda v: sum(v) > 0)


class TestMinmaxNormalize:
    def test_hand_computed(self):
        out = minmax_normalize(raster1([0.0, 1.0, 3.0]))
        assert np.allclose(out.data[0], [0.0, 1 / 3, 1.0])

    def test_idempotent_on_normalized(self):
        m = raster1([0.0, 0.25, 1.0])
        assert np.allclose(minmax_normalize(m).data, m.data)

    def test_constant_maps_to_half(self):
        out = minmax_normalize(raster1([2.0, 2.0, 2.0]))
        assert np.all(out.data == 0.5)


class TestToDistribution:
    def test_symmetric_pair(self):
        assert np.allclose(to_distribution(raster1([1.0, 1.0])).data[0], [0.5, 0.5])

    def test_hand_computed(self):
        assert np.allclose(to_distribution(raster1([0.0, 2.0, 2.0])).data[0],
                           [0.0, 0.5, 0.5])

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            to_distribution(raster1([0.0, 0.0]))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            to_distribution(raster1([-1.0, 2.0]))


class TestTvDistance:
    def test_identity(self):
        p = to_distribution(raster1([1.0, 2.0, 3.0]))
        assert tv_distance(p, p) == 0.0

    def test_disjoint_supports(self):
        assert tv_distance(raster1([1.0, 0.0]), raster1([0.0, 1.0])) == 1.0

    def test_half_l1_by_hand(self):
        assert tv_distance(raster1([0.5, 0.5]), raster1([1.0, 0.0])) == 0.5

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            tv_distance(raster1([1.0, 0.0]), raster1([1.0, 0.0, 0.0]))

    @given(distributions, distributions)
    def test_metric_axioms(self, v, w):
        n = min(len(v), len(w))
        p = to_distribution(raster1(v[:n])) if sum(v[:n]) > 0 else None
        q = to_distribution(raster1(w[:n])) if sum(w[:n]) > 0 else None
        if p is None or q is None:
            return
        d = tv_distance(p, q)
        assert 0.0 <= d <= 1.0 + 1e-12
        assert d == tv_distance(q, p)
        half_l1 = 0.5 * float(np.abs(p.data.astype(np.float64)
                                     - q.data.astype(np.float64)).sum())
        assert d == pytest.approx(half_l1, abs=1e-12)


class TestObjLoss:
    def test_identical_maps(self):
        m = raster1([0.2, 0.8])
        assert obj_loss(m, m) == 0.0

    def test_scale_invariance(self):
        a_c = raster1([0.1, 0.4, 0.5])
        a_v1 = raster1([0.2, 0.8, 1.0])  # 2 * a_c before normalization
        assert obj_loss(a_v1, a_c) == pytest.approx(0.0, abs=1e-9)

    def test_disjoint_concentrations(self):
        assert obj_loss(raster1([1.0, 0.0]), raster1([0.0, 1.0])) == 1.0


class TestBgLoss:
    def test_exact_complement(self):
        a_c = raster1([0.25, 0.75])
        a_bg = raster1([0.75, 0.25])
        assert bg_loss(a_bg, a_c) == pytest.approx(0.0, abs=1e-9)

    def test_bg_equal_to_category(self):
        assert bg_loss(raster1([1.0, 0.0]), raster1([1.0, 0.0])) == 1.0

    def test_uniform_bg_vs_constant_category(self):
        # 1 - const is const; both sides normalize to uniform distributions
        assert bg_loss(raster1([0.5, 0.5]), raster1([0.3, 0.3])) == 0.0


class TestAttentionStack:
    def test_aligned_stack_zero_loss(self):
        cat = raster1([1.0, 0.5, 0.0])
        stack = AttentionStack(category=cat, foreground=cat,
                               background=raster1([0.0, 0.5, 1.0]))
        assert reg_loss(stack) == pytest.approx(0.0, abs=1e-9)

    def test_anti_aligned_stack_max_loss(self):
        cat = raster1([1.0, 0.0])
        stack = AttentionStack(category=cat, foreground=raster1([0.0, 1.0]),
                               background=cat)
        assert reg_loss(stack) == pytest.approx(2.0, abs=1e-12)

    @given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=9))
    def test_loss_bounded(self, v):
        # keep one strictly-below-max value so 1 - map is not identically zero
        m = raster1(np.array(v + [0.0]) / max(v))
        stack = AttentionStack(category=m, foreground=m, background=m)
        assert 0.0 <= reg_loss(stack) <= 2.0 + 1e-9

    def test_stack_roundtrip(self):
        cat, fg, bg = raster1([0.0, 1.0]), raster1([0.5, 0.5]), raster1([1.0, 0.0])
        stack = AttentionStack(category=cat, foreground=fg, background=bg)
        back = AttentionStack.from_raster(stack.stacked)
        assert back == stack

    def test_unnormalized_map_rejected(self):
        with pytest.raises(ValueError, match="normalized"):
            AttentionStack(category=raster1([0.0, 2.0]),
                           foreground=raster1([0.0, 1.0]),
                           background=raster1([0.0, 1.0]))


class TestAverageResolutions:
    def test_single_map_identity(self):
        m = raster1(np.array([[0.0, 0.5], [0.5, 1.0]]))
        out = average_resolutions([m], 2)
        assert np.allclose(out.data, m.data)

    def test_mean_of_identical_maps(self):
        m = raster1(np.array([[0.0, 0.5], [0.5, 1.0]]))
        out = average_resolutions([m, m], 2)
        assert np.allclose(out.data, m.data)

    def test_against_bilinear_oracle(self):
        # corner-aligned bilinear upsampling of [[0,0],[0,4]] to 4x4 gives
        # v(i, j) = 4 * (i/3) * (j/3); averaging with zeros then min-max
        # normalizing leaves (i/3) * (j/3)
        m = raster1(np.array([[0.0, 0.0], [0.0, 4.0]]))
        z = raster1(np.zeros((4, 4)))
        out = average_resolutions([m, z], 4)
        g = np.arange(4) / 3.0
        expected = np.outer(g, g)
        assert np.allclose(out.data[0], expected, atol=1e-6)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            average_resolutions([], 4)


class TestNoiseSchedule:
    def test_linear_defaults(self):
        s = NoiseSchedule.linear()
        assert s.T == 1000
        assert s.betas[0] == pytest.approx(0.00085)
        assert s.betas[-1] == pytest.approx(0.012)
        assert s.alpha_bars[0] == 1.0
        assert s.alpha_bars.shape == (1001,)
        assert np.all(np.diff(s.alpha_bars) < 0)

    def test_invalid_betas_rejected(self):
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.0, 0.5]))
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([0.5, 1.0]))
        with pytest.raises(ValueError):
            NoiseSchedule(np.array([]))


class TestForwardNoise:
    def test_t_zero_returns_latent(self):
        s = NoiseSchedule.linear(T=10)
        z0 = raster1([0.3, -0.7])
        eps = raster1([5.0, 5.0])
        assert np.allclose(forward_noise(z0, 0, s, eps).data, z0.data)

    def test_pure_noise_limit(self):
        s = NoiseSchedule(np.full(50, 0.999))
        z0 = raster1([1.0])
        eps = raster1([2.0])
        out = forward_noise(z0, 50, s, eps)
        assert out.data[0, 0, 0] == pytest.approx(2.0, abs=1e-6)

    def test_hand_computed_scalar(self):
        # alpha_bar = 0.25: 0.5 * 1 + sqrt(0.75) * 1 = 1.3660...
        s = NoiseSchedule(np.array([0.75]))
        out = forward_noise(raster1([1.0]), 1, s, raster1([1.0]))
        assert out.data[0, 0, 0] == pytest.approx(0.5 + np.sqrt(0.75), abs=1e-6)

    def test_step_out_of_range(self):
        s = NoiseSchedule.linear(T=10)
        with pytest.raises(ValueError):
            forward_noise(raster1([1.0]), 11, s, raster1([1.0]))


class TestLdmLoss:
    def test_identical(self):
        m = raster1([0.1, 0.2])
        assert ldm_loss(m, m) == 0.0

    def test_unit_offset(self):
        a = raster1([0.0, 0.5, 1.0])
        b = raster1([1.0, 1.5, 2.0])
        assert ldm_loss(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_hand_computed(self):
        assert ldm_loss(raster1([0.0, 0.0]), raster1([1.0, 3.0])) == pytest.approx(5.0)
