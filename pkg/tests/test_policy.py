import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clipforge.numerics.layers import log_softmax, softmax
from clipforge.policy import (
    ActionDistribution,
    ActionSpace,
    PolicyNetwork,
    TemperatureSchedule,
    anneal,
    gumbel_max,
    gumbel_softmax,
    gumbel_softmax_backward,
    policy_forward,
    sample_gumbel,
    straight_through,
)


def dist_of(probs):
    probs = np.asarray(probs, dtype=np.float64)
    return ActionDistribution(probs, np.log(probs))


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8))


def categorical_oracle(probs, draws, seed):
    """Independent inverse-CDF sampler for the same categorical."""
    u = np.random.default_rng(seed).uniform(size=draws)
    return np.searchsorted(np.cumsum(probs), u, side="right")


class TestActionSpace:
    def test_defaults(self):
        space = ActionSpace()
        assert space.actions == (1, 3, 5, 7)
        assert space.resolutions == (32, 24, 16, 12)
        assert space.full_resolution == 32 and space.index_of(5) == 2

    @pytest.mark.parametrize(
        "actions,resolutions",
        [((1, 3), (32,)), ((3, 1), (32, 24)), ((1, 3), (24, 32)), ((0, 2), (32, 24)), ((), ())],
    )
    def test_invalid(self, actions, resolutions):
        with pytest.raises(ValueError):
            ActionSpace(actions, resolutions)


class TestPolicyForward:
    def test_zero_weights_give_uniform(self):
        net = PolicyNetwork(16, 16, 4, groups=8)
        for p in net.named_params().values():
            p[...] = 0.0
        dist = policy_forward(net, np.ones(16), np.ones(16))
        np.testing.assert_allclose(dist.probs, np.full(4, 0.25))

    @pytest.mark.parametrize("seed", range(5))
    def test_probs_normalized(self, seed):
        rng = np.random.default_rng(seed)
        net = PolicyNetwork(16, 8, 4, groups=8, rng=rng)
        dist = net(rng.normal(size=16), rng.normal(size=8))
        assert abs(dist.probs.sum() - 1.0) < 1e-9
        assert np.all((dist.probs > 0) & (dist.probs < 1))

    def test_dimension_mismatch(self):
        net = PolicyNetwork(16, 8, 4, groups=8)
        with pytest.raises(ValueError):
            net(np.zeros(16), np.zeros(9))

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        h, s = rng.normal(size=16), rng.normal(size=8)
        a = PolicyNetwork(16, 8, 4, rng=np.random.default_rng(1))(h, s)
        b = PolicyNetwork(16, 8, 4, rng=np.random.default_rng(1))(h, s)
        np.testing.assert_array_equal(a.probs, b.probs)

    def test_flops(self):
        net = PolicyNetwork(64, 32, 4, groups=8)
        # groupnorm 7/element, dense 2*in*out, softmax 3/action
        assert net.flops() == 7 * 96 + 2 * 96 * 4 + 3 * 4

    @pytest.mark.parametrize("seed", range(10))
    def test_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        net = PolicyNetwork(8, 8, 4, groups=4, rng=rng)
        h, s = rng.normal(size=8), rng.normal(size=8)
        w = rng.normal(size=4)

        def loss():
            logits = net.logits_cached(h, s)[0][0]
            return float(np.sum(w * log_softmax(logits)))

        logits, cache = net.logits_cached(h, s)
        p = softmax(logits[0])
        dlogits = w - p * w.sum()
        grads, dh, ds = net.backward(cache, dlogits)
        for name, param in net.named_params().items():
            assert rel_err(grads[name], numeric_grad(loss, param)) < 1e-4, name
        assert rel_err(dh[0], numeric_grad(loss, h)) < 1e-4
        assert rel_err(ds[0], numeric_grad(loss, s)) < 1e-4


class TestGumbelMax:
    def test_zero_noise_is_argmax(self):
        d = dist_of([0.1, 0.5, 0.3, 0.1])
        assert gumbel_max(d, noise=np.zeros(4)) == 1

    def test_ties_toward_smaller_index(self):
        assert gumbel_max(dist_of([0.25] * 4), noise=np.zeros(4)) == 0

    def test_rejects_zero_probability(self):
        with pytest.raises(ValueError):
            gumbel_max(ActionDistribution(np.array([1.0, 0.0]), np.array([0.0, -np.inf])), noise=np.zeros(2))

    def test_underflowed_probability_is_still_an_action(self):
        logits = np.array([0.0, -800.0, -1.0])
        d = ActionDistribution(softmax(logits), logits)
        assert d.probs[1] == 0.0
        assert gumbel_max(d, noise=np.array([0.0, 900.0, 0.0])) == 1

    def test_needs_rng_or_noise(self):
        with pytest.raises(ValueError):
            gumbel_max(dist_of([0.5, 0.5]))

    @pytest.mark.parametrize("probs", [[0.7, 0.1, 0.1, 0.1], [0.25] * 4, [0.05, 0.15, 0.3, 0.5]])
    def test_frequencies(self, probs):
        probs = np.asarray(probs)
        rng = np.random.default_rng(0)
        draws = 100_000
        g = sample_gumbel(rng, (draws, 4))
        picks = np.argmax(np.log(probs) + g, axis=1)
        # the vectorized pass must agree with the scalar API
        d = dist_of(probs)
        assert all(gumbel_max(d, noise=g[i]) == picks[i] for i in range(200))
        freq = np.bincount(picks, minlength=4) / draws
        assert 0.5 * np.abs(freq - probs).sum() < 0.02
        np.testing.assert_allclose(freq, probs, atol=0.01)
        oracle = np.bincount(categorical_oracle(probs, draws, 1), minlength=4) / draws
        assert 0.5 * np.abs(freq - oracle).sum() < 0.02


class TestGumbelSoftmax:
    def test_zero_noise_unit_temperature_is_identity(self):
        d = dist_of([0.4, 0.3, 0.2, 0.1])
        np.testing.assert_allclose(gumbel_softmax(d, 1.0, noise=np.zeros(4)), d.probs, atol=1e-12)

    def test_one_hot_limit(self):
        rng = np.random.default_rng(0)
        d = dist_of([0.4, 0.3, 0.2, 0.1])
        hits = sum(gumbel_softmax(d, 1e-4, rng=rng).max() > 0.999 for _ in range(10_000))
        assert hits / 10_000 >= 0.99

    def test_two_action_peak_rate_matches_logistic(self):
        # with two equal actions the noise gap is Logistic(0, 1), and the larger
        # entry exceeds 0.999 exactly when |gap| > tau * ln(999)
        tau, draws = 0.01, 100_000
        rng = np.random.default_rng(3)
        d = dist_of([0.5, 0.5])
        hits = sum(gumbel_softmax(d, tau, rng=rng).max() > 0.999 for _ in range(draws))
        expect = 2.0 - 2.0 / (1.0 + np.exp(-tau * np.log(999.0)))
        assert abs(hits / draws - expect) < 0.003

    def test_rejects_nonpositive_tau(self):
        with pytest.raises(ValueError):
            gumbel_softmax(dist_of([0.5, 0.5]), 0.0, noise=np.zeros(2))

    def test_entropy_decreases_with_temperature(self):
        d = dist_of([0.4, 0.3, 0.2, 0.1])
        entropies = []
        for tau in (10.0, 1.0, 0.1, 0.01):
            rng = np.random.default_rng(0)
            samples = np.array([gumbel_softmax(d, tau, rng=rng) for _ in range(2000)])
            entropies.append(np.mean(-np.sum(samples * np.log(samples + 1e-300), axis=1)))
        assert all(b < a for a, b in zip(entropies, entropies[1:]))

    def test_sum_gradient_vanishes(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=4)
        d = ActionDistribution(softmax(logits), logits)
        soft = gumbel_softmax(d, 0.7, noise=sample_gumbel(rng, 4))
        np.testing.assert_allclose(gumbel_softmax_backward(logits, soft, 0.7, np.ones(4)), 0.0, atol=1e-15)

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("tau", [0.5, 2.0])
    def test_gradcheck(self, seed, tau):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=4)
        noise = sample_gumbel(rng, 4)
        w = rng.normal(size=4)

        def loss():
            return float(np.sum(w * gumbel_softmax(ActionDistribution(softmax(logits), logits), tau, noise=noise)))

        soft = gumbel_softmax(ActionDistribution(softmax(logits), logits), tau, noise=noise)
        analytic = gumbel_softmax_backward(logits, soft, tau, w)
        assert rel_err(analytic, numeric_grad(loss, logits)) < 1e-4


class TestStraightThrough:
    def test_agreement_at_low_temperature(self):
        rng = np.random.default_rng(0)
        agree = 0
        for _ in range(10_000):
            logits = rng.normal(size=4)
            d = straight_through(ActionDistribution(softmax(logits), logits), 0.05, rng=rng)
            agree += int(np.argmax(d.gumbel_soft) == d.chosen)
        assert agree / 10_000 >= 0.999

    def test_fields_filled(self):
        d = straight_through(dist_of([0.4, 0.3, 0.2, 0.1]), 0.5, noise=np.array([0.0, 3.0, 0.0, 0.0]))
        assert d.chosen == 1 and d.tau == 0.5
        assert abs(d.gumbel_soft.sum() - 1) < 1e-12
        np.testing.assert_array_equal(d.one_hot(), [0, 1, 0, 0])

    @pytest.mark.parametrize("seed", range(10))
    def test_backward_uses_relaxed_sample(self, seed):
        # the hard forward is piecewise constant; its surrogate gradient is the relaxed one
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=4)
        noise = sample_gumbel(rng, 4)
        w = rng.normal(size=4)
        d = straight_through(ActionDistribution(softmax(logits), logits), 1.0, noise=noise)

        def relaxed():
            return float(np.sum(w * gumbel_softmax(ActionDistribution(softmax(logits), logits), 1.0, noise=noise)))

        analytic = gumbel_softmax_backward(logits, d.gumbel_soft, 1.0, w)
        assert rel_err(analytic, numeric_grad(relaxed, logits)) < 1e-4

    def test_one_hot_needs_choice(self):
        with pytest.raises(ValueError):
            dist_of([0.5, 0.5]).one_hot()


class TestAnneal:
    def test_start(self):
        assert anneal(TemperatureSchedule(5.0, 0.01, 100), 0) == 5.0

    def test_end_and_beyond(self):
        s = TemperatureSchedule(5.0, 0.01, 100)
        assert anneal(s, 100) == pytest.approx(0.01, abs=1e-12)
        assert anneal(s, 10_000) == pytest.approx(0.01, abs=1e-12)

    def test_midpoint(self):
        assert abs(anneal(TemperatureSchedule(5.0, 0.01, 100), 50) - 2.505) < 1e-9

    def test_negative_step(self):
        with pytest.raises(ValueError):
            anneal(TemperatureSchedule(), -1)

    @pytest.mark.parametrize("bad", [dict(initial=0.001), dict(floor=0.0), dict(total_steps=-1)])
    def test_invalid_schedule(self, bad):
        with pytest.raises(ValueError):
            TemperatureSchedule(**bad)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 500), st.integers(0, 600), st.integers(0, 600))
    def test_monotone(self, total, a, b):
        s = TemperatureSchedule(5.0, 0.01, total)
        lo, hi = sorted((a, b))
        assert anneal(s, hi) <= anneal(s, lo)
        assert 0.01 - 1e-12 <= anneal(s, hi) <= 5.0
