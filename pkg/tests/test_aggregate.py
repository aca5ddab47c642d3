"""Interest experts, confidence weighting, and the aggregation modes."""

import copy
import math

import numpy as np
import pytest

from deminet import aggregate as agg
from deminet.errors import ConfigError, ContractError, DimensionError
from deminet.numerics import Tensor, check_gradients, mul, sum_all


def make_experts(width, d=4, k=2, hidden=(4, 4), seed=0):
    rng = np.random.default_rng(seed)
    return [agg.build_expert_params(width, hidden, d, i, rng) for i in range(k)]


class TestExpertScores:
    def test_cloned_experts_agree(self, rng):
        experts = make_experts(6)
        clone = copy.deepcopy(experts[0])
        clone.prototype = experts[0].prototype
        x = Tensor(rng.normal(size=(5, 6)))
        o = agg.expert_scores(x, [experts[0], clone], training=False)
        assert np.array_equal(o[0].data, o[1].data)

    def test_eval_mode_bit_deterministic(self, rng):
        experts = make_experts(6)
        x = Tensor(rng.normal(size=(3, 6)))
        o1 = agg.expert_scores(x, experts, training=False)
        o2 = agg.expert_scores(x, experts, training=False)
        for a, b in zip(o1, o2):
            assert np.array_equal(a.data, b.data)

    def test_width_mismatch_rejected(self, rng):
        experts = make_experts(6)
        with pytest.raises(DimensionError):
            agg.expert_scores(Tensor(rng.normal(size=(3, 5))), experts, training=False)

    def test_hand_set_scalar_forward_oracle(self):
        # 2-wide input, 1-unit hidden layers, eval-mode batchnorm as identity
        slope = 0.1
        e = make_experts(2, d=2, k=1, hidden=(1, 1))[0]
        e.bn_state.running_mean[:] = 0.0
        e.bn_state.running_var[:] = 1.0 - e.bn_state.eps
        e.gamma.data[:] = 1.0
        e.beta.data[:] = 0.0
        e.w1.data[:] = np.array([[1.0], [2.0]])
        e.b1.data[:] = np.array([0.5])
        e.w2.data[:] = np.array([[-1.0]])
        e.b2.data[:] = np.array([0.25])
        e.w3.data[:] = np.array([[2.0, -3.0]])
        e.b3.data[:] = np.array([0.1, -0.1])
        x = np.array([[0.3, -0.7]])

        def leaky(v):
            return v if v >= 0 else slope * v

        h1 = leaky(x[0, 0] * 1.0 + x[0, 1] * 2.0 + 0.5)
        h2 = leaky(h1 * -1.0 + 0.25)
        expected = [h2 * 2.0 + 0.1, h2 * -3.0 - 0.1]
        out = agg.expert_scores(Tensor(x), [e], training=False, slope=slope)[0]
        assert np.allclose(out.data[0], expected, atol=1e-12)


class TestConfidenceWeights:
    def _confi(self, d, seed=0):
        return agg.build_confinet_params(3 * d, (4, 4), d, np.random.default_rng(seed))

    def test_equal_dot_products_give_uniform(self, rng):
        d, k, b = 4, 3, 2
        confi = self._confi(d)
        v_list = [Tensor(np.tile(rng.normal(size=d), (b, 1))) for _ in range(k)]
        # identical interest vectors and identical prototypes -> equal dots
        shared_proto = Tensor(rng.normal(size=(d,)))
        v0 = v_list[0]
        omega = agg.confidence_weights([v0] * k, Tensor(rng.normal(size=(b, 2 * d))),
                                       confi, [shared_proto] * k)
        assert np.allclose(omega.data, 1.0 / k, atol=1e-12)

    def test_single_expert_weight_is_one(self, rng):
        d = 4
        confi = self._confi(d)
        omega = agg.confidence_weights([Tensor(rng.normal(size=(3, d)))],
                                       Tensor(rng.normal(size=(3, 2 * d))),
                                       confi, [Tensor(rng.normal(size=(d,)))])
        assert np.allclose(omega.data, 1.0)

    def test_hand_dot_values_with_sqrt_scaling(self):
        # two routes with c.p = 2.0 and 0.0 at d=16: omega = softmax([0.125, 0])...
        # the published example: softmax([2/sqrt(16), 0]) = softmax([0.5, 0])
        z = np.array([2.0 / math.sqrt(16.0), 0.0])
        expected = np.exp(z) / np.exp(z).sum()
        assert np.allclose(expected, [0.6225, 0.3775], atol=1e-4)
        # engineered inputs: prototypes picking out single coordinates
        d = 16
        b = 1
        confi = self._confi(d)
        # bypass the MLP: set third layer to constant rows via zero weights + bias
        confi.w3.data[:] = 0.0
        c1 = np.zeros(d)
        c1[0] = 2.0
        confi.b3.data[:] = c1          # c_1 = [2, 0, ...] for every route input
        p1 = np.zeros(d)
        p1[0] = 1.0                    # c_1 . p1 = 2.0
        p2 = np.zeros(d)
        p2[1] = 1.0                    # c_2 . p2 = 0.0
        v = [Tensor(np.zeros((b, d))), Tensor(np.zeros((b, d)))]
        omega = agg.confidence_weights(v, Tensor(np.zeros((b, 2 * d))), confi,
                                       [Tensor(p1), Tensor(p2)])
        assert np.allclose(omega.data[0], expected, atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        d, k = 4, 3
        confi = self._confi(d)
        v_list = [Tensor(rng.normal(size=(5, d))) for _ in range(k)]
        protos = [Tensor(rng.normal(size=(d,))) for _ in range(k)]
        omega = agg.confidence_weights(v_list, Tensor(rng.normal(size=(5, 2 * d))),
                                       confi, protos)
        assert np.allclose(omega.data.sum(axis=1), 1.0, atol=1e-6)


class TestAggregatePredict:
    def test_single_expert(self, rng):
        o = [Tensor(rng.normal(size=(2, 2)))]
        out = agg.aggregate_predict(o, Tensor(np.ones((2, 1))))
        ex = np.exp(o[0].data - o[0].data.max(axis=1, keepdims=True))
        assert np.allclose(out.data, ex / ex.sum(axis=1, keepdims=True), atol=1e-12)

    def test_equal_logits_ignore_weights(self, rng):
        base = rng.normal(size=(3, 2))
        o = [Tensor(base.copy()) for _ in range(3)]
        w = rng.dirichlet(np.ones(3), size=3)
        out = agg.aggregate_predict(o, Tensor(w))
        ex = np.exp(base - base.max(axis=1, keepdims=True))
        assert np.allclose(out.data, ex / ex.sum(axis=1, keepdims=True), atol=1e-12)

    def test_hand_mixture_oracle(self):
        o = [Tensor(np.array([[1.0, 0.0]])), Tensor(np.array([[0.0, 1.0]]))]
        omega = Tensor(np.array([[0.75, 0.25]]))
        out = agg.aggregate_predict(o, omega)
        z = np.array([0.75, 0.25])
        expected = np.exp(z) / np.exp(z).sum()
        assert np.allclose(expected, [0.6225, 0.3775], atol=1e-4)
        assert np.allclose(out.data[0], expected, atol=1e-12)

    def test_weight_sum_contract(self, rng):
        o = [Tensor(rng.normal(size=(2, 2))), Tensor(rng.normal(size=(2, 2)))]
        with pytest.raises(ContractError):
            agg.aggregate_predict(o, Tensor(np.array([[0.9, 0.3], [0.5, 0.5]])))

    def test_probability_rows(self, rng):
        o = [Tensor(rng.normal(size=(4, 2))) for _ in range(3)]
        w = Tensor(rng.dirichlet(np.ones(3), size=4))
        out = agg.aggregate_predict(o, w)
        assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(out.data >= 0)

    def test_click_probability_monotone_in_click_logit(self, rng):
        o = [Tensor(rng.normal(size=(1, 2))) for _ in range(2)]
        w = Tensor(np.array([[0.6, 0.4]]))
        base = agg.aggregate_predict(o, w).data[0, 0]
        bumped = [Tensor(o[0].data + np.array([[0.5, 0.0]])), o[1]]
        assert agg.aggregate_predict(bumped, w).data[0, 0] > base


class TestBaselineAggregate:
    def test_multi_avg_equal_logits(self, rng):
        base = rng.normal(size=(2, 2))
        o = [Tensor(base.copy()) for _ in range(4)]
        out = agg.baseline_aggregate(o, None, "multi_avg")
        ex = np.exp(base - base.max(axis=1, keepdims=True))
        assert np.allclose(out.data, ex / ex.sum(axis=1, keepdims=True), atol=1e-12)

    def test_hard_routing_selects_argmax(self, rng):
        o = [Tensor(rng.normal(size=(1, 2))) for _ in range(3)]
        omega = Tensor(np.array([[0.2, 0.5, 0.3]]))
        out = agg.baseline_aggregate(o, omega, "hard_routing")
        ex = np.exp(o[1].data - o[1].data.max())
        assert np.allclose(out.data, ex / ex.sum(), atol=1e-12)

    def test_hard_routing_tie_breaks_to_lowest_index(self, rng):
        o = [Tensor(rng.normal(size=(1, 2))) for _ in range(2)]
        omega = Tensor(np.array([[0.5, 0.5]]))
        out = agg.baseline_aggregate(o, omega, "hard_routing")
        ex = np.exp(o[0].data - o[0].data.max())
        assert np.allclose(out.data, ex / ex.sum(), atol=1e-12)

    def test_hard_routing_invariant_under_monotone_transform(self, rng):
        o = [Tensor(rng.normal(size=(4, 2))) for _ in range(3)]
        w = rng.dirichlet(np.ones(3), size=4)
        out1 = agg.baseline_aggregate(o, Tensor(w), "hard_routing")
        # strictly increasing transform of all entries preserves the argmax;
        # renormalize so the weight-sum contract still holds
        w2 = np.exp(3.0 * w) + 1.0
        w2 = w2 / w2.sum(axis=1, keepdims=True)
        out2 = agg.baseline_aggregate(o, Tensor(w2), "hard_routing")
        assert np.array_equal(out1.data, out2.data)

    def test_moe_mixes_probabilities(self, rng):
        o = [Tensor(rng.normal(size=(3, 2))) for _ in range(2)]
        gating = Tensor(rng.normal(size=(3, 2)))
        out = agg.baseline_aggregate(o, None, "moe", gating_logits=gating)
        assert np.allclose(out.data.sum(axis=1), 1.0, atol=1e-6)
        g = np.exp(gating.data - gating.data.max(axis=1, keepdims=True))
        g = g / g.sum(axis=1, keepdims=True)
        probs = []
        for ok in o:
            e = np.exp(ok.data - ok.data.max(axis=1, keepdims=True))
            probs.append(e / e.sum(axis=1, keepdims=True))
        expected = g[:, 0:1] * probs[0] + g[:, 1:2] * probs[1]
        assert np.allclose(out.data, expected, atol=1e-12)

    def test_unknown_mode(self, rng):
        with pytest.raises(ConfigError):
            agg.baseline_aggregate([Tensor(rng.normal(size=(1, 2)))], None, "stacking")


class TestAggregationGradients:
    def test_confidence_and_mixture_gradcheck(self, rng):
        d, k, b = 4, 2, 2
        confi = agg.build_confinet_params(3 * d, (4, 4), d, rng)
        v_list = [Tensor(rng.normal(size=(b, d)), requires_grad=True) for _ in range(k)]
        protos = [Tensor(rng.normal(size=(d,)), requires_grad=True) for _ in range(k)]
        context = Tensor(rng.normal(size=(b, 2 * d)), requires_grad=True)
        o_list = [Tensor(rng.normal(size=(b, 2)), requires_grad=True) for _ in range(k)]
        pick = Tensor(rng.normal(size=(b, 2)))

        def f(_):
            omega = agg.confidence_weights(v_list, context, confi, protos)
            yhat = agg.aggregate_predict(o_list, omega)
            return sum_all(mul(yhat, pick))

        for t in [v_list[0], protos[0], context, o_list[1], confi.w1, confi.b3]:
            assert check_gradients(f, t, step=1e-6) < 1e-4
