"""Kernel-level checks: forward oracles and analytic-vs-numeric gradients."""

import numpy as np
import pytest

from ruledraft.nn import (
    ConceptHeadParams,
    ConfigurationError,
    DimensionError,
    EncoderParams,
    OptimState,
    PreconditionError,
    ProjectionParams,
    TrainingError,
    adam_step,
    bce_loss,
    encode_attend,
    encode_attend_backward,
    finite_diff_check,
    focal_loss,
    pool_mean,
    pool_mean_backward,
    predict_concepts,
    predict_concepts_backward,
    project_features,
    project_features_backward,
)
from ruledraft.rng import RngStream


def matmul_loops(a, b):
    """Triple-loop matrix product, the reference the fast path is checked against."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def attention_reference(x, p):
    """Straight-line single-block encoder forward, no einsum, no vectorized tricks."""
    m, c = x.shape
    n_h = p.wq.shape[0]
    d_h = c // n_h
    heads = []
    for h in range(n_h):
        q = matmul_loops(x, p.wq[h])
        k = matmul_loops(x, p.wk[h])
        v = matmul_loops(x, p.wv[h])
        scores = matmul_loops(q, k.T) / np.sqrt(d_h)
        attn = np.zeros_like(scores)
        for i in range(m):
            row = scores[i] - scores[i].max()
            e = np.exp(row)
            attn[i] = e / e.sum()
        heads.append(matmul_loops(attn, v))
    concat = np.concatenate(heads, axis=1)
    attn_out = matmul_loops(concat, p.wo)
    u1 = x + attn_out

    def ln(z, gain, bias):
        out = np.zeros_like(z)
        for i in range(z.shape[0]):
            mu = z[i].mean()
            var = ((z[i] - mu) ** 2).mean()
            out[i] = (z[i] - mu) / np.sqrt(var + 1e-12) * gain + bias
        return out

    n1 = ln(u1, p.ln1_gain, p.ln1_bias)
    ff = matmul_loops(np.maximum(matmul_loops(n1, p.w1), 0.0), p.w2)
    return ln(n1 + ff, p.ln2_gain, p.ln2_bias)


class TestProjection:
    def test_matches_loop_oracle(self):
        rng = RngStream(11)
        x = rng.normal(0.0, 1.0, (5, 7))
        p = ProjectionParams.init(rng.substream("p"), 7, 4)
        want = matmul_loops(x, p.weight) + p.bias
        np.testing.assert_allclose(project_features(x, p), want, rtol=0, atol=1e-12)

    def test_shape_mismatch_raises(self):
        rng = RngStream(12)
        p = ProjectionParams.init(rng, 7, 4)
        with pytest.raises(DimensionError):
            project_features(np.zeros((3, 6)), p)

    def test_nonfinite_raises(self):
        rng = RngStream(13)
        p = ProjectionParams.init(rng, 4, 2)
        x = np.zeros((2, 4))
        x[1, 2] = np.nan
        with pytest.raises(PreconditionError):
            project_features(x, p)

    def test_gradients(self):
        rng = RngStream(14)
        x0 = rng.normal(0.0, 1.0, (3, 5))
        p = ProjectionParams.init(rng.substream("p"), 5, 4)
        t = rng.normal(0.0, 1.0, (3, 4))

        def f_w(theta):
            q = ProjectionParams(weight=theta.reshape(5, 4), bias=p.bias)
            out = project_features(x0, q)
            loss = 0.5 * ((out - t) ** 2).sum()
            _, g = project_features_backward(x0, q, out - t)
            return loss, g["weight"].ravel()

        assert finite_diff_check(f_w, p.weight.ravel()) < 1e-6

        def f_x(theta):
            out = project_features(theta.reshape(3, 5), p)
            loss = 0.5 * ((out - t) ** 2).sum()
            dx, _ = project_features_backward(theta.reshape(3, 5), p, out - t)
            return loss, dx.ravel()

        assert finite_diff_check(f_x, x0.ravel()) < 1e-6


class TestEncoder:
    def test_matches_straightline_reference(self):
        rng = RngStream(21)
        x = rng.normal(0.0, 1.0, (6, 8))
        p = EncoderParams.init(rng.substream("enc"), 8, 2)
        out, _ = encode_attend(x, p)
        np.testing.assert_allclose(out, attention_reference(x, p), rtol=0, atol=1e-10)

    def test_attention_rows_sum_to_one(self):
        rng = RngStream(22)
        x = rng.normal(0.0, 3.0, (5, 8))
        p = EncoderParams.init(rng.substream("enc"), 8, 4)
        _, cache = encode_attend(x, p)
        np.testing.assert_allclose(cache.attn.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
        assert np.all(cache.attn >= 0.0)

    def test_output_rows_normalized(self):
        # final layer norm: unit-gain rows have mean ~0 and variance ~1
        rng = RngStream(23)
        x = rng.normal(0.0, 1.0, (4, 8))
        p = EncoderParams.init(rng.substream("enc"), 8, 2)
        out, _ = encode_attend(x, p)
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-6)

    def test_head_count_must_divide(self):
        rng = RngStream(24)
        with pytest.raises(ConfigurationError):
            EncoderParams.init(rng, 8, 3)

    def test_gradients_all_params(self):
        rng = RngStream(25)
        x0 = rng.normal(0.0, 1.0, (3, 4))
        p = EncoderParams.init(rng.substream("enc"), 4, 2, ff_dim=6)
        t = rng.normal(0.0, 1.0, (3, 4))
        names = ["wq", "wk", "wv", "wo", "w1", "w2",
                 "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"]

        for name in names:
            base = getattr(p, name)

            def f(theta, name=name, base_shape=base.shape):
                q = EncoderParams(**{n: getattr(p, n).copy() for n in names})
                setattr(q, name, theta.reshape(base_shape))
                out, cache = encode_attend(x0, q)
                loss = 0.5 * ((out - t) ** 2).sum()
                _, g = encode_attend_backward(cache, q, out - t)
                return loss, g[name].ravel()

            assert finite_diff_check(f, base.ravel()) < 1e-5, name

    def test_gradient_wrt_input(self):
        rng = RngStream(26)
        x0 = rng.normal(0.0, 1.0, (3, 4))
        p = EncoderParams.init(rng.substream("enc"), 4, 2, ff_dim=6)
        t = rng.normal(0.0, 1.0, (3, 4))

        def f(theta):
            out, cache = encode_attend(theta.reshape(3, 4), p)
            loss = 0.5 * ((out - t) ** 2).sum()
            dx, _ = encode_attend_backward(cache, p, out - t)
            return loss, dx.ravel()

        assert finite_diff_check(f, x0.ravel()) < 1e-5

    def test_dropout_gradient_with_frozen_mask(self):
        # replay the same rng substream so the mask is identical at every probe
        rng = RngStream(27)
        x0 = rng.normal(0.0, 1.0, (3, 4))
        p = EncoderParams.init(rng.substream("enc"), 4, 2, ff_dim=6)
        t = rng.normal(0.0, 1.0, (3, 4))

        def f(theta):
            out, cache = encode_attend(theta.reshape(3, 4), p, dropout_rate=0.3,
                                       rng=RngStream(99).substream("mask"))
            loss = 0.5 * ((out - t) ** 2).sum()
            dx, _ = encode_attend_backward(cache, p, out - t)
            return loss, dx.ravel()

        assert finite_diff_check(f, x0.ravel()) < 1e-5


class TestPooling:
    def test_forward(self):
        x = np.arange(12.0).reshape(4, 3)
        np.testing.assert_allclose(pool_mean(x), x.sum(axis=0) / 4.0, rtol=0, atol=0)

    def test_backward_spreads_evenly(self):
        d = np.array([3.0, -1.0])
        got = pool_mean_backward(5, d)
        np.testing.assert_allclose(got, np.tile(d / 5.0, (5, 1)), rtol=0, atol=0)

    def test_empty_raises(self):
        with pytest.raises(PreconditionError):
            pool_mean(np.zeros((0, 3)))


class TestConceptHead:
    def test_forward_oracle(self):
        rng = RngStream(31)
        p = ConceptHeadParams.init(rng.substream("h"), 6, 5, 3)
        xb = rng.normal(0.0, 1.0, 6)
        want = 1.0 / (1.0 + np.exp(-(np.maximum(xb @ p.w1 + p.b1, 0.0) @ p.w2 + p.b2)))
        got, _ = predict_concepts(xb, p)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-15)
        assert np.all((got > 0.0) & (got < 1.0))

    def test_gradients(self):
        rng = RngStream(32)
        p = ConceptHeadParams.init(rng.substream("h"), 5, 4, 3)
        xb0 = rng.normal(0.0, 1.0, 5)
        y = np.array([1.0, 0.0, 1.0])

        for name in ["w1", "b1", "w2", "b2"]:
            base = getattr(p, name)

            def f(theta, name=name, shape=base.shape):
                q = ConceptHeadParams(w1=p.w1.copy(), b1=p.b1.copy(),
                                      w2=p.w2.copy(), b2=p.b2.copy(),
                                      dropout_rate=0.0)
                setattr(q, name, theta.reshape(shape))
                c, cache = predict_concepts(xb0, q)
                loss, dc = focal_loss(c, y)
                _, g = predict_concepts_backward(cache, q, dc)
                return loss, g[name].ravel()

            assert finite_diff_check(f, base.ravel()) < 1e-6, name

        def f_x(theta):
            c, cache = predict_concepts(theta, p)
            loss, dc = focal_loss(c, y)
            dx, _ = predict_concepts_backward(cache, p, dc)
            return loss, dx

        assert finite_diff_check(f_x, xb0) < 1e-6

    def test_dropout_zeroes_and_scales(self):
        rng = RngStream(33)
        p = ConceptHeadParams.init(rng.substream("h"), 6, 200, 3, dropout_rate=0.5)
        xb = rng.normal(0.0, 1.0, 6)
        _, cache = predict_concepts(xb, p, dropout=True, rng=rng.substream("mc"))
        assert cache.mask is not None
        zeros = (cache.mask == 0.0).mean()
        assert 0.3 < zeros < 0.7
        nonzero = cache.mask[cache.mask != 0.0]
        np.testing.assert_allclose(nonzero, 2.0, rtol=0, atol=0)

    def test_dropout_without_rng_raises(self):
        rng = RngStream(34)
        p = ConceptHeadParams.init(rng, 4, 3, 2, dropout_rate=0.2)
        with pytest.raises(ConfigurationError):
            predict_concepts(np.zeros(4), p, dropout=True)


class TestFocalLoss:
    def test_frozen_value(self):
        # hand evaluation, c=(0.9, 0.2), y=(1, 0), gamma=2, alpha=0.25:
        #   -0.25*1*(0.1)^2*ln(0.9) - 0.75*1*(0.2)^2*ln(0.8), averaged over 2
        c = np.array([0.9, 0.2])
        y = np.array([1.0, 0.0])
        loss, _ = focal_loss(c, y)
        assert loss == pytest.approx(0.003478853914285429, rel=0, abs=1e-17)

    def test_balanced_alpha_single_positive(self):
        # y=1, c=0.9, gamma=2, alpha=0.5: 0.5*(0.1)^2*(-ln 0.9)
        loss, _ = focal_loss(np.array([0.9]), np.array([1.0]), gamma=2.0, alpha_bal=0.5)
        assert loss == pytest.approx(5.268025782891315e-4, rel=1e-10)

    def test_gamma_zero_is_half_weighted_bce(self):
        rng = RngStream(41)
        c = rng.random(50)
        y = (rng.random(50) < 0.5).astype(np.float64)
        loss, _ = focal_loss(c, y, gamma=0.0, alpha_bal=0.5)
        bce, _ = bce_loss(c, y)
        assert loss == pytest.approx(0.5 * bce, rel=1e-12)

    def test_gradient_vs_central_difference(self):
        rng = RngStream(42)
        c0 = 0.05 + 0.9 * rng.random(8)
        y = (rng.random(8) < 0.5).astype(np.float64)

        def f(theta):
            loss, g = focal_loss(theta, y)
            return loss, g

        assert finite_diff_check(f, c0, h=1e-6) < 1e-6

    def test_clamps_extreme_probabilities(self):
        loss, grad = focal_loss(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
        assert np.isfinite(loss) and np.all(np.isfinite(grad))

    def test_easy_examples_downweighted(self):
        y = np.array([1.0])
        hard, _ = focal_loss(np.array([0.6]), y)
        easy, _ = focal_loss(np.array([0.99]), y)
        hard_bce, _ = bce_loss(np.array([0.6]), y)
        easy_bce, _ = bce_loss(np.array([0.99]), y)
        assert easy / hard < easy_bce / hard_bce

    def test_bad_args(self):
        with pytest.raises(PreconditionError):
            focal_loss(np.array([0.5]), np.array([1.0]), gamma=-1.0)
        with pytest.raises(PreconditionError):
            focal_loss(np.array([0.5]), np.array([1.0]), alpha_bal=0.0)
        with pytest.raises(DimensionError):
            focal_loss(np.array([0.5, 0.5]), np.array([1.0]))


class TestAdam:
    def test_matches_scalar_recurrence(self):
        # independent scalar implementation of the textbook update
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        theta = 1.0
        m = v = 0.0
        grads_seq = [0.3, -0.5, 0.2, 0.9, -0.1]
        history = []
        for t, g in enumerate(grads_seq, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            theta -= lr * mhat / (np.sqrt(vhat) + eps)
            history.append(theta)

        params = {"w": np.array([1.0])}
        st = OptimState(lr=lr, beta1=b1, beta2=b2, eps=eps)
        got = []
        for g in grads_seq:
            adam_step(params, {"w": np.array([g])}, st)
            got.append(params["w"][0])
        np.testing.assert_allclose(got, history, rtol=0, atol=1e-16)

    def test_first_step_size_near_lr(self):
        # bias correction makes the very first step ~lr regardless of grad scale
        for g in [1e-4, 1.0, 1e4]:
            params = {"w": np.array([0.0])}
            adam_step(params, {"w": np.array([g])}, OptimState(lr=0.001))
            assert abs(params["w"][0]) == pytest.approx(0.001, rel=1e-3)

    def test_nonfinite_gradient_raises_with_name(self):
        params = {"layer.weight": np.zeros(3)}
        with pytest.raises(TrainingError, match="layer.weight"):
            adam_step(params, {"layer.weight": np.array([1.0, np.inf, 0.0])}, OptimState())

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            adam_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, OptimState())


class TestFiniteDiffHarness:
    def test_exact_gradient_scores_near_zero(self):
        def f(theta):
            return float((theta ** 2).sum()), 2.0 * theta

        assert finite_diff_check(f, np.array([1.0, -2.0, 0.5])) < 1e-9

    def test_wrong_gradient_is_caught(self):
        def f(theta):
            return float((theta ** 2).sum()), 3.0 * theta  # wrong by 1.5x

        assert finite_diff_check(f, np.array([1.0, -2.0])) > 0.1
